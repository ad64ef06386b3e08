"""Monte Carlo integration with control variates.

The control-variate estimate of ``P(f)`` is the intercept of the least
squares fit of ``f`` on ``(1, g_1, ..., g_d)`` where the ``g_k`` have
known (zero) means.  It is linear in the responses: ``alpha = sum_i w_i
f(X_i)`` with weights that depend only on the design, so a whole family
is integrated with the single factorization cached by the design.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .features import DimensionSchedule, FeatureMap, LinearFeatureMap, make_basis
from .linalg import FlopCounter
from .population import PopulationModel
from .risk import RateCurve, collect, replication_seeds, run_replications
from .surrogate import (
    Design,
    ResponseFamily,
    design_from_points,
    draw_design,
    fit_many,
    fit_responses,
    population_betas,
)

log = logging.getLogger(__name__)

CENTERING_TOL = 1e-10
ACCURACY_MARGIN = 0.1


class OracleAccuracyError(RuntimeError):
    """Population integrals are not accurate enough to judge the observed errors."""


@dataclass(frozen=True)
class ControlVariateSet:
    """Centred controls ``g = base - means`` with ``P(g) = 0``.

    ``base`` is None for the empty set, whose augmented map is the
    constant function alone.
    """

    base: object
    means: np.ndarray
    domain: object
    centering: str = "analytic"

    @classmethod
    def from_features(cls, feature_map, model: PopulationModel) -> "ControlVariateSet":
        """Centre ``feature_map`` under ``model``.

        Shifted Legendre components without the constant have mean zero
        under the uniform distribution on their box, so no oracle call is
        needed there; otherwise the means come from the oracle.
        """
        analytic = (
            isinstance(feature_map, FeatureMap)
            and feature_map.kind == "legendre"
            and not feature_map.intercept
            and model.distribution == "uniform"
            and feature_map.domain == model.domain
        )
        if analytic:
            means = np.zeros(feature_map.dimension)
            how = "analytic"
        else:
            means = np.asarray(model.expect(feature_map.evaluate, breakpoints=feature_map.breakpoints).value)
            how = "oracle"
        cvs = cls(feature_map, means, feature_map.domain, how)
        resid = model.expect(cvs.evaluate, breakpoints=feature_map.breakpoints).value
        if np.max(np.abs(resid)) > CENTERING_TOL:
            raise ValueError(f"controls not centred: max |P(g)| = {np.max(np.abs(resid)):.3e}")
        return cvs

    @classmethod
    def empty(cls, domain) -> "ControlVariateSet":
        return cls(None, np.zeros(0), domain, "analytic")

    @property
    def dimension(self) -> int:
        return 0 if self.base is None else self.base.dimension

    def evaluate(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.base is None:
            return np.zeros((X.shape[0], 0))
        return self.base.evaluate(X) - self.means

    def augmented_map(self):
        """Feature map ``(1, g_1, ..., g_d)``."""
        if self.base is None:
            return make_basis("monomial", 0, self.domain, intercept=True)
        return LinearFeatureMap(self.base, offset=self.means, constant_first=True)


@dataclass(frozen=True)
class CVEstimate:
    """Integral estimate; ``weights`` (when linear in ``f``) reproduce ``value``."""

    value: float
    coefficients: np.ndarray
    weights: np.ndarray | None
    kind: str
    pseudo_inverse_used: bool = False


def with_controls(design: Design, controls: ControlVariateSet) -> Design:
    """Design on the same inputs whose features are ``(1, g)``."""
    return design_from_points(controls.augmented_map(), design.X, design.seed)


def _check_intercept(design: Design) -> None:
    if not np.all(design.H[:, 0] == 1.0):
        raise ValueError("control-variate design needs the constant as its first feature")


def _responses(f, design: Design) -> np.ndarray:
    y = np.asarray(f(design.X), dtype=float).reshape(design.n)
    if not np.all(np.isfinite(y)):
        raise ValueError("integrand returned NaN or infinite values")
    return y


def cv_weights(design: Design, counter: FlopCounter | None = None) -> np.ndarray:
    """Weights ``w_i = e_1^T G_n^{-1} h(X_i) / n``; they sum to one."""
    _check_intercept(design)
    e1 = np.zeros(design.d)
    e1[0] = 1.0
    if counter is not None:
        counter.record("cv_weights", 2 * design.n * design.d)
    return design.H @ design.factor.solve(e1, counter) / design.n


def vanilla_mc(f, design: Design) -> CVEstimate:
    y = _responses(f, design)
    w = np.full(design.n, 1.0 / design.n)
    return CVEstimate(float(np.mean(y)), np.zeros(0), w, "vanilla")


def cv_estimate(f, design: Design, controls: ControlVariateSet | None = None) -> CVEstimate:
    """Intercept of the least squares fit of ``f`` on ``(1, g)``.

    With ``controls`` given, the design is rebuilt on ``(1, g)`` first;
    otherwise the design's own map must start with the constant.
    """
    if controls is not None:
        design = with_controls(design, controls)
    _check_intercept(design)
    y = _responses(f, design)
    coef = fit_responses(design, y).coefficients[:, 0]
    return CVEstimate(float(coef[0]), coef[1:], cv_weights(design), "cv", design.pseudo_inverse_used)


def cv_estimate_many(family: ResponseFamily, design: Design) -> np.ndarray:
    """CV estimates for every member, sharing the design's factorization."""
    _check_intercept(design)
    return fit_many(design, family).coefficients[0]


def oracle_estimate(f, design: Design, beta_star) -> CVEstimate:
    """``P_n(f - g^T beta_star)`` with the population control coefficients.

    ``beta_star`` may include the intercept coefficient, which is ignored.
    """
    _check_intercept(design)
    beta = np.asarray(beta_star, dtype=float).ravel()
    if beta.size == design.d:
        beta = beta[1:]
    if beta.size != design.d - 1:
        raise ValueError(f"expected {design.d - 1} control coefficients, got {beta.size}")
    y = _responses(f, design)
    value = float(np.mean(y - design.H[:, 1:] @ beta))
    return CVEstimate(value, beta, None, "oracle")


def _controls_for(controls_or_schedule, n: int, model: PopulationModel, kind: str) -> ControlVariateSet:
    if isinstance(controls_or_schedule, ControlVariateSet):
        return controls_or_schedule
    if isinstance(controls_or_schedule, DimensionSchedule):
        fmap = controls_or_schedule.feature_map(n, kind, model.domain, intercept=False)
        return ControlVariateSet.from_features(fmap, model)
    return ControlVariateSet.from_features(controls_or_schedule, model)


def uniform_cv_rate_check(model: PopulationModel, controls_or_schedule, family: ResponseFamily,
                          n_grid: Sequence[int], R: int, seed: int, threads: int = 1,
                          kind: str = "legendre", counter: FlopCounter | None = None,
                          oracle_records: dict | None = None) -> dict[str, RateCurve]:
    """Sup-over-family integration error of vanilla, CV and oracle estimators.

    All three estimators see the same designs.  Returns curves keyed by
    ``"vanilla"``, ``"cv"`` and ``"oracle"``.
    """
    truth_res = model.expect(family.evaluate, breakpoints=family.breakpoints)
    truth = np.asarray(truth_res.value)
    if oracle_records is not None:
        oracle_records["family_integrals"] = truth_res.record()
    errors = {k: np.empty((len(n_grid), R)) for k in ("vanilla", "cv", "oracle")}
    dims = []
    cache = {}
    for k, n in enumerate(n_grid):
        controls = _controls_for(controls_or_schedule, int(n), model, kind)
        key = controls.dimension
        if key not in cache:
            aug = controls.augmented_map()
            pop = population_betas(model, aug, family)
            cache[key] = (aug, pop.betas[1:])
            if oracle_records is not None:
                oracle_records[f"d={key}"] = pop.oracle
        aug, beta_star = cache[key]
        dims.append(key)

        def one(s, n=n, aug=aug, beta_star=beta_star):
            design = draw_design(model, aug, int(n), s)
            Y = family.evaluate(design.X)
            vanilla = Y.mean(axis=0)
            fit = fit_responses(design, Y)
            oracle = (Y - design.H[:, 1:] @ beta_star).mean(axis=0)
            errs = [float(np.max(np.abs(est - truth))) for est in (vanilla, fit.coefficients[0], oracle)]
            return errs, fit.counter

        out = np.asarray(collect(run_replications(one, replication_seeds(seed, k, R), threads), counter))
        for i, name in enumerate(("vanilla", "cv", "oracle")):
            errors[name][k] = out[:, i]

    observed = min(float(np.min(e.mean(axis=1))) for e in errors.values())
    if observed > 1e-12 and truth_res.error > ACCURACY_MARGIN * observed:
        raise OracleAccuracyError(
            f"oracle error {truth_res.error:.3e} ({truth_res.method}) is not small against "
            f"the smallest observed error {observed:.3e}")
    curves = {}
    for name, errs in errors.items():
        d = [0] * len(n_grid) if name == "vanilla" else dims
        curves[name] = RateCurve.from_replicates(n_grid, d, errs, label=name)
    return curves
