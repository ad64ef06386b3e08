import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multisurrogate import PopulationModel, make_basis
from multisurrogate.population import merge_breakpoints


@settings(max_examples=30, deadline=None)
@given(k=st.integers(0, 40), a=st.floats(-3, 3), width=st.floats(0.1, 4))
def test_uniform_power_moments(k, a, width):
    b = a + width
    m = PopulationModel.uniform([a], [b])
    exact = (b ** (k + 1) - a ** (k + 1)) / ((k + 1) * (b - a))
    res = m.expect(lambda X: X[:, 0] ** k)
    assert res.method == "quadrature"
    assert res.value == pytest.approx(exact, rel=1e-11, abs=1e-11)


def test_gaussian_moments():
    m = PopulationModel.gaussian([1.0], [2.0])
    assert m.expect(lambda X: X[:, 0] ** 2).value == pytest.approx(5.0, rel=1e-12)
    # E (X - mu)^4 = 3 sigma^4
    assert m.expect(lambda X: (X[:, 0] - 1) ** 4).value == pytest.approx(48.0, rel=1e-12)


def test_tensor_quadrature_2d():
    m = PopulationModel.uniform([0, 0], [1, 2])
    assert m.expect(lambda X: X[:, 0] * X[:, 1] ** 2).value == pytest.approx(0.5 * 4 / 3, rel=1e-12)


def test_breakpoints_make_indicators_exact():
    m = PopulationModel.uniform([0], [1])
    f = lambda X: (X[:, 0] <= 0.3).astype(float)
    exact = m.expect(f, breakpoints=((0.3,),))
    assert exact.value == pytest.approx(0.3, abs=1e-15)
    assert abs(m.expect(f).value - 0.3) > 1e-6


def test_monte_carlo_fallback_reports_standard_error():
    m = PopulationModel.uniform([0] * 4, [1] * 4, mc_samples=200_000)
    res = m.expect(lambda X: X.sum(axis=1))
    assert res.method == "monte_carlo" and res.nodes == 200_000
    # sd of a sum of four uniforms is sqrt(4/12)
    assert res.error == pytest.approx(np.sqrt(4 / 12 / 200_000), rel=0.02)
    assert abs(res.value - 2.0) < 5 * res.error
    assert res.value == m.expect(lambda X: X.sum(axis=1)).value


def test_gram_of_monomials_is_hilbert_matrix():
    m = PopulationModel.uniform([0], [1])
    G, rec = m.gram(make_basis("monomial", 4))
    i = np.arange(5)
    np.testing.assert_allclose(G.matrix, 1 / (i[:, None] + i[None, :] + 1), atol=1e-14)
    assert G.provenance == "population" and rec.method == "quadrature" and rec.error < 1e-12


def test_model_validation():
    with pytest.raises(ValueError):
        PopulationModel.uniform([1.0], [0.0])
    with pytest.raises(ValueError):
        PopulationModel.gaussian([0.0], [-1.0])
    with pytest.raises(ValueError):
        PopulationModel("cauchy")
    m = PopulationModel.uniform([0], [1])
    with pytest.raises(ValueError):
        m.expect(lambda X: X[:, 0], method="simpson")
    with pytest.raises(ValueError):
        m.sample(np.random.default_rng(0), 0)


def test_sampling_is_seeded():
    m = PopulationModel.gaussian([0, 5], [1, 2])
    a = m.sample(np.random.default_rng(3), 10)
    b = m.sample(np.random.default_rng(3), 10)
    assert a.shape == (10, 2) and np.array_equal(a, b)


def test_merge_breakpoints():
    assert merge_breakpoints(None, None) is None
    assert merge_breakpoints(((0.5, 0.2),), ((0.2, 0.7),)) == ((0.2, 0.5, 0.7),)
