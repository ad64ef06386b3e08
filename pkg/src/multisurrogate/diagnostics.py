"""Runtime diagnostics for a (model, basis, family, n) configuration.

Reported quantities: the largest residual sup-norm ``residual_sup``, the
leverage-weighted residual second moment ``weighted_variance``, its crude
bound ``sup_bound = residual_sup^2 |q|_inf``, the plain residual second
moment ``residual_variance``, leverage moments, the two condition ratios
and the smallest eigenvalue of the whitened empirical Gram.  Sup-norms
over inputs are grid estimates, so they are lower bounds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .linalg import leverage, min_eigenvalue, sup_grid, whiten, SUP_GRID_SIZE
from .population import PopulationModel
from .risk import CONDITION_THRESHOLD, condition_ratios
from .surrogate import ResponseFamily, draw_design, population_betas, residual_moments

log = logging.getLogger(__name__)

ORDER_RTOL = 1e-6
ORDER_ATOL = 1e-12
TRACE_RTOL = 1e-6


@dataclass(frozen=True)
class DiagnosticsReport:
    n: int
    d: int
    m: int
    residual_sup: float
    weighted_variance: float
    sup_bound: float
    residual_variance: float
    leverage_mean: float
    leverage_second_moment: float
    leverage_sup: float
    family_sup: float
    moment_ratio: float
    sup_ratio: float
    condition_status: str
    whitened_lambda_min: float
    weighted_within_sup_bound: bool
    weighted_within_variance_bound: bool
    trace_ok: bool
    seed: int
    oracle: dict = field(default_factory=dict)

    @property
    def invariants_hold(self) -> bool:
        return self.weighted_within_sup_bound and self.weighted_within_variance_bound and self.trace_ok

    def to_dict(self) -> dict:
        """Flat key/value mapping; oracle records are flattened with dotted keys."""
        out = {k: v for k, v in asdict(self).items() if k != "oracle"}
        out["condition_threshold"] = CONDITION_THRESHOLD
        for name, rec in self.oracle.items():
            for key, val in rec.items():
                out[f"oracle.{name}.{key}"] = val
        return out


def _le(a: float, b: float) -> bool:
    return a <= b * (1 + ORDER_RTOL) + ORDER_ATOL


def diagnose(model: PopulationModel, feature_map, family: ResponseFamily, n: int, seed: int = 0,
             grid_size: int = SUP_GRID_SIZE) -> DiagnosticsReport:
    """Population diagnostics plus one whitened empirical Gram drawn with ``seed``.

    Violated ordering invariants are logged and flagged in the report,
    never raised: the sup-norms involved are grid estimates.
    """
    if len(family) == 0:
        raise ValueError("response family is empty")
    pop = population_betas(model, feature_map, family)
    profile = leverage(pop.gram, feature_map, model=model, factor=pop.factor, grid_size=grid_size)
    grid = sup_grid(feature_map.domain, grid_size)
    residual_sup = float(np.max(np.abs(pop.residuals(grid))))
    family_sup = float(np.max(np.abs(family.evaluate(grid))))
    residual_variance = float(np.max(residual_moments(model, pop)))
    weighted_variance = float(np.max(residual_moments(model, pop, weight=profile)))
    lev_sup = profile.sup_norm
    sup_bound = residual_sup * residual_sup * lev_sup
    ratios = condition_ratios(profile, n)

    design = draw_design(model, whiten(feature_map, pop.gram), n, seed)
    lam = min_eigenvalue(design.gram)

    d = feature_map.dimension
    report = DiagnosticsReport(
        n=int(n), d=d, m=len(family), residual_sup=residual_sup, weighted_variance=weighted_variance,
        sup_bound=sup_bound, residual_variance=residual_variance,
        leverage_mean=profile.mean, leverage_second_moment=profile.second_moment,
        leverage_sup=lev_sup, family_sup=family_sup,
        moment_ratio=ratios["moment_ratio"], sup_ratio=ratios["sup_ratio"],
        condition_status=ratios["status"], whitened_lambda_min=lam,
        weighted_within_sup_bound=_le(weighted_variance, sup_bound),
        weighted_within_variance_bound=_le(weighted_variance, residual_variance * lev_sup),
        trace_ok=abs(profile.mean - d) <= TRACE_RTOL * d, seed=int(seed),
        oracle=dict(pop.oracle),
    )
    if not report.invariants_hold:
        log.warning("diagnostic ordering invariant violated: %s", report.to_dict())
    return report


def residual_envelope_check(report: DiagnosticsReport) -> tuple[bool, float]:
    """Check ``residual_sup <= (1 + |q|_inf^(1/2)) |F|_inf``; returns ``(ok, bound - residual_sup)``.

    ``|F|_inf`` is the grid sup of the family recorded in the report.
    """
    bound = (1.0 + math.sqrt(report.leverage_sup)) * report.family_sup
    margin = bound - report.residual_sup
    return margin >= -ORDER_ATOL, margin
