import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multisurrogate import make_basis
from multisurrogate.surrogate import (
    ResponseFamily,
    design_from_points,
    draw_design,
    fit_many,
    fit_responses,
    oscillatory_family,
    polynomial_family,
    population_beta,
    population_betas,
    predict,
    predict_by_weights,
    prediction_weights,
    span_family,
    step_family,
)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(20, 300), degree=st.integers(1, 6), m=st.integers(1, 12), seed=st.integers(0, 2**31))
def test_fit_many_matches_independent_least_squares(n, degree, m, seed):
    rng = np.random.default_rng(seed)
    fmap = make_basis("legendre", degree)
    design = design_from_points(fmap, rng.uniform(size=(n, 1)))
    Y = rng.standard_normal((n, m))
    fit = fit_responses(design, Y)
    oracle, *_ = np.linalg.lstsq(design.H, Y, rcond=None)
    np.testing.assert_allclose(fit.coefficients, oracle, atol=1e-9)
    assert fit.counter.factorizations == 1
    assert np.max(np.abs(fit.normal_equation_residual(design, Y))) < 1e-10


def test_design_is_immutable_and_seeded(uniform01):
    fmap = make_basis("legendre", 3)
    a = draw_design(uniform01, fmap, 50, 9)
    b = draw_design(uniform01, fmap, 50, 9)
    assert np.array_equal(a.X, b.X) and a.seed == 9
    with pytest.raises(ValueError):
        a.H[0, 0] = 1.0
    assert (a.n, a.d) == (50, 4)


def test_failed_member_is_isolated(uniform01, caplog):
    def bad(X):
        raise FloatingPointError("overflow")

    fam = ResponseFamily((lambda X: X[:, 0], bad, lambda X: X[:, 0] ** 2), 1.0)
    design = draw_design(uniform01, make_basis("monomial", 2), 40, 1)
    with caplog.at_level(logging.WARNING):
        fit = fit_many(design, fam)
    assert set(fit.failed) == {1}
    assert np.all(np.isnan(fit.coefficients[:, 1]))
    np.testing.assert_allclose(fit.coefficients[:, 0], [0, 1, 0], atol=1e-10)
    np.testing.assert_allclose(fit.coefficients[:, 2], [0, 0, 1], atol=1e-9)
    assert "failed" in caplog.text


def test_population_beta_for_square_on_linear_basis(uniform01):
    # projection of x^2 onto span{1, x} under U[0,1] is x - 1/6
    beta, eps, fit = population_beta(uniform01, make_basis("monomial", 1), lambda X: X[:, 0] ** 2)
    np.testing.assert_allclose(beta, [-1 / 6, 1.0], atol=1e-13)
    x = np.linspace(0, 1, 7)[:, None]
    np.testing.assert_allclose(eps(x), x[:, 0] ** 2 - x[:, 0] + 1 / 6, atol=1e-13)
    assert fit.orthogonality < 1e-13


def test_population_betas_of_step_family_use_breakpoints(uniform01):
    fam = step_family([0.3, 0.6])
    fit = population_betas(uniform01, make_basis("monomial", 1), fam)
    # beta = G^{-1} (y, y^2/2) with G = [[1, 1/2], [1/2, 1/3]]
    G = np.array([[1, 0.5], [0.5, 1 / 3]])
    for j, y in enumerate((0.3, 0.6)):
        np.testing.assert_allclose(fit.betas[:, j], np.linalg.solve(G, [y, y * y / 2]), atol=1e-13)


def test_prediction_weight_form_matches_coefficients(uniform01, rng):
    fmap = make_basis("legendre", 4)
    design = draw_design(uniform01, fmap, 80, 4)
    Y = rng.standard_normal((80, 3))
    fit = fit_responses(design, Y)
    x = np.linspace(0, 1, 11)
    np.testing.assert_allclose(predict(fit, design, x), predict_by_weights(design, Y, x), atol=1e-10)
    W = prediction_weights(design, x)
    assert W.shape == (11, 80)
    # unnormalised kernel weights: with a constant feature they sum to n
    np.testing.assert_allclose(W.sum(axis=1) / 80, 1.0, atol=1e-10)


def test_collinear_basis_takes_pseudo_inverse_path(uniform01, rng):
    fmap = make_basis("indicator", knots=[0.3, 0.7])
    design = draw_design(uniform01, fmap, 100, 2)
    assert design.pseudo_inverse_used
    Y = rng.standard_normal((100, 2))
    fit = fit_responses(design, Y)
    oracle, *_ = np.linalg.lstsq(design.H, Y, rcond=None)
    np.testing.assert_allclose(design.H @ fit.coefficients, design.H @ oracle, atol=1e-9)


def test_span_family_is_fitted_exactly(uniform01):
    fmap = make_basis("legendre", 3)
    C = np.random.default_rng(0).standard_normal((4, 5))
    fam = span_family(fmap, C)
    fit = fit_many(draw_design(uniform01, fmap, 30, 0), fam)
    np.testing.assert_allclose(fit.coefficients, C, atol=1e-10)
    assert fam.envelope >= np.max(np.abs(fmap(np.linspace(0, 1, 101)) @ C))


def test_family_builders():
    X = np.array([[0.0], [0.25], [0.5]])
    poly = polynomial_family([1, 3], box_bound=2.0)
    assert poly.envelope == 8.0 and poly.labels == ("x^1", "x^3")
    np.testing.assert_allclose(poly.evaluate(X), np.column_stack([X[:, 0], X[:, 0] ** 3]))
    osc = oscillatory_family([1.0], phases=np.pi / 2)
    np.testing.assert_allclose(osc.evaluate(X)[:, 0], np.cos(2 * np.pi * X[:, 0]), atol=1e-15)
    with pytest.raises(ValueError):
        oscillatory_family([1.0, 2.0], phases=[0.0])
    steps = step_family([0.25], dim=2)
    assert steps.breakpoints == ((0.25,), ())
    with pytest.raises(ValueError):
        ResponseFamily((), 1.0)
    assert len(poly.subset([1])) == 1 and poly.subset([1]).labels == ("x^3",)


def test_rank_deficient_population_gram_is_rejected(uniform01):
    with pytest.raises(np.linalg.LinAlgError):
        population_betas(uniform01, make_basis("indicator", knots=[0.5]), step_family([0.5]))
