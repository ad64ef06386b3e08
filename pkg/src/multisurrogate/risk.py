"""Excess prediction risk, worst-case risk over a family, and rate curves.

Rate checks replicate the whole pipeline (draw a design, fit, compare with
the population optimum) ``R`` times per sample size.  Replicate ``r`` at
grid position ``k`` uses seed ``seed + k * R + r``, so no two designs on a
curve share a seed.  Slopes are ordinary least squares fits of
``log(error)`` on ``log(n)`` restricted to the upper half of the grid.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .features import DimensionSchedule
from .linalg import CholeskyFactor, FlopCounter, factorize, leverage
from .population import PopulationModel
from .surrogate import (
    Design,
    PopulationFit,
    ResponseFamily,
    draw_design,
    fit_many,
    population_betas,
    residual_moments,
)

log = logging.getLogger(__name__)

CSV_HEADER = ("n", "d", "mean_error", "stderr", "replications", "slope")
CONDITION_THRESHOLD = 1.0
VACUOUS_TOL = 1e-14


class VacuousCheckError(ValueError):
    """The response lies in the span of the features, so the check says nothing."""


def excess_risk(beta_hat, beta_star, G):
    """``(b - beta)^T G (b - beta)`` evaluated as ``|L^T (b - beta)|^2``.

    Accepts vectors (returns a float) or ``(d, m)`` matrices (returns
    ``(m,)``).  ``G`` may be a :class:`GramMatrix`, an array or a factor.
    """
    b = np.asarray(beta_hat, dtype=float)
    beta = np.asarray(beta_star, dtype=float)
    if b.shape != beta.shape:
        raise ValueError(f"dimension mismatch: {b.shape} vs {beta.shape}")
    factor = G if isinstance(G, CholeskyFactor) else factorize(G)
    if b.shape[0] != factor.dimension:
        raise ValueError(f"coefficients have length {b.shape[0]}, Gram is {factor.dimension}x{factor.dimension}")
    C = factor.half_apply(b - beta)
    out = np.sum(C * C, axis=0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RiskReport:
    """Per-response excess risks, their maximum and the modelling errors ``L_f(beta_f)``."""

    per_response: np.ndarray
    worst: float
    worst_index: int
    modelling_error: np.ndarray
    excluded: tuple[int, ...] = ()
    labels: tuple[str, ...] = ()


def worst_case_risk(design: Design, family: ResponseFamily, model: PopulationModel,
                    population: PopulationFit | None = None) -> RiskReport:
    """Fit the whole family on ``design`` and take the largest excess risk.

    Responses that failed to fit are excluded from the maximum.
    """
    if population is None:
        population = population_betas(model, design.feature_map, family)
    fit = fit_many(design, family)
    risks = np.full(len(family), np.nan)
    ok = np.array([j not in fit.failed for j in range(len(family))])
    if not ok.any():
        raise ValueError("every response failed to fit")
    risks[ok] = excess_risk(fit.coefficients[:, ok], population.betas[:, ok], population.factor)
    masked = np.where(ok, risks, -np.inf)
    j = int(np.argmax(masked))
    return RiskReport(risks, float(risks[j]), j, residual_moments(model, population),
                      tuple(int(i) for i in np.flatnonzero(~ok)), family.labels)


def replication_seeds(seed: int, k: int, R: int) -> list[int]:
    """Seeds for the ``R`` replicates at grid position ``k``."""
    return [seed + k * R + r for r in range(R)]


def run_replications(fn: Callable[[int], object], seeds: Sequence[int], threads: int = 1) -> list:
    """Evaluate ``fn`` per seed; results come back in seed order whatever ``threads`` is."""
    if threads <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, seeds))


def collect(results: list, counter: FlopCounter | None) -> list:
    """Split ``(value, FlopCounter)`` pairs, folding the counters into ``counter`` in order."""
    if counter is not None:
        for _, c in results:
            counter.counts.update(c.counts)
            counter.flops.update(c.flops)
    return [v for v, _ in results]


def upper_half(values: Sequence) -> slice:
    """Upper half of the grid, widened to keep at least two points."""
    return slice(max(0, min(len(values) // 2, len(values) - 2)), None)


def fit_log_slope(n: Sequence[float], error: Sequence[float], upper_half_only: bool = True,
                  log_adjusted: bool = False) -> tuple[float, float]:
    """OLS slope and intercept of ``log(error)`` (or ``log(error / log n)``) on ``log n``."""
    n = np.asarray(n, dtype=float)
    err = np.maximum(np.asarray(error, dtype=float), 1e-300)
    if log_adjusted:
        err = err / np.log(n)
    if upper_half_only:
        sl = upper_half(n)
        n, err = n[sl], err[sl]
    if len(n) < 2:
        raise ValueError("need at least two grid points to fit a slope")
    slope, intercept = np.polyfit(np.log(n), np.log(err), 1)
    return float(slope), float(intercept)


@dataclass(frozen=True)
class RateCurve:
    """``(n, mean error, standard error)`` series with its fitted log-log slope.

    ``slope``/``intercept`` are the raw fit on the upper half of the grid;
    ``log_adjusted_slope`` fits ``log(error / log n)`` instead.
    """

    n: np.ndarray
    d: np.ndarray
    mean_error: np.ndarray
    stderr: np.ndarray
    replications: int
    slope: float
    intercept: float
    log_adjusted_slope: float
    label: str = ""
    annotations: tuple[str, ...] = ()
    raw: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = np.asarray(self.n)
        if np.any(np.diff(n) <= 0):
            raise ValueError("n values of a rate curve must be strictly increasing")
        if not math.isfinite(self.slope):
            raise ValueError("slope is not finite")

    @classmethod
    def from_replicates(cls, n_grid, d, errors: np.ndarray, label: str = "",
                        annotations: Sequence[str] = ()) -> "RateCurve":
        """Build from an ``(len(n_grid), R)`` array of per-replicate errors."""
        errors = np.asarray(errors, dtype=float)
        R = errors.shape[1]
        mean = errors.mean(axis=1)
        se = errors.std(axis=1, ddof=1) / math.sqrt(R) if R > 1 else np.zeros_like(mean)
        slope, intercept = fit_log_slope(n_grid, mean)
        adj, _ = fit_log_slope(n_grid, mean, log_adjusted=True)
        return cls(np.asarray(n_grid, dtype=int), np.asarray(d, dtype=int), mean, se, R,
                   slope, intercept, adj, label, tuple(annotations), errors)

    def rows(self) -> list[list[str]]:
        return [[str(int(n)), str(int(d)), f"{e:.9e}", f"{s:.9e}", str(self.replications), f"{self.slope:.9e}"]
                for n, d, e, s in zip(self.n, self.d, self.mean_error, self.stderr)]


def write_rate_csv(path, curves: Sequence[RateCurve], estimator_column: bool = False) -> None:
    """Write one or more curves; with ``estimator_column`` each row is tagged by its curve label."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow((("estimator",) if estimator_column else ()) + CSV_HEADER)
        for curve in curves:
            for row in curve.rows():
                writer.writerow(([curve.label] if estimator_column else []) + row)


def read_rate_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def condition_ratios(profile, n: int) -> dict:
    """Ratios ``P(q^2)/n`` and ``|q|_inf log(2d)/n`` whose smallness the rate results need."""
    d = profile.feature_map.dimension
    moment_ratio = profile.second_moment / n if profile.second_moment is not None else math.nan
    sup_ratio = profile.sup_norm * math.log(2 * d) / n
    ok = moment_ratio < CONDITION_THRESHOLD or sup_ratio < CONDITION_THRESHOLD
    return {"moment_ratio": moment_ratio, "sup_ratio": sup_ratio, "status": "pass" if ok else "warn"}


@dataclass(frozen=True)
class SingleRateResult:
    curve: RateCurve
    ratios: np.ndarray
    leverage_weighted_error: float


def single_response_rate_check(model: PopulationModel, feature_map, f, n_grid: Sequence[int],
                               R: int, seed: int, threads: int = 1, breakpoints=None,
                               counter: FlopCounter | None = None,
                               oracle_records: dict | None = None) -> SingleRateResult:
    """Mean excess risk of one response against ``P(q eps^2) / n``.

    ``ratios[k] = n_k * mean_excess_k / P(q eps^2)`` should approach one.
    """
    family = f if isinstance(f, ResponseFamily) else ResponseFamily.singleton(f, breakpoints=breakpoints)
    if len(family) != 1:
        raise ValueError("single-response check needs exactly one response")
    pop = population_betas(model, feature_map, family)
    profile = leverage(pop.gram, feature_map, factor=pop.factor)
    weighted_variance = float(residual_moments(model, pop, weight=profile)[0])
    if oracle_records is not None:
        oracle_records[f"d={feature_map.dimension}"] = pop.oracle
    if weighted_variance < VACUOUS_TOL:
        raise VacuousCheckError(f"P(q eps^2) = {weighted_variance:.3e}: response lies in the feature span")
    errors = np.empty((len(n_grid), R))
    for k, n in enumerate(n_grid):
        def one(s, n=n):
            design = draw_design(model, feature_map, int(n), s)
            fit = fit_many(design, family)
            return excess_risk(fit.coefficients[:, 0], pop.betas[:, 0], pop.factor), fit.counter

        errors[k] = collect(run_replications(one, replication_seeds(seed, k, R), threads), counter)
    d = [feature_map.dimension] * len(n_grid)
    curve = RateCurve.from_replicates(n_grid, d, errors, label="single")
    ratios = np.asarray(n_grid, dtype=float) * curve.mean_error / weighted_variance
    return SingleRateResult(curve, ratios, weighted_variance)


def resolve_map(map_or_schedule, n: int, domain, kind: str = "legendre", intercept: bool = True):
    if isinstance(map_or_schedule, DimensionSchedule):
        return map_or_schedule.feature_map(n, kind, domain, intercept)
    return map_or_schedule


def worst_case_rate_check(model: PopulationModel, map_or_schedule, family: ResponseFamily,
                          n_grid: Sequence[int], R: int, seed: int, threads: int = 1,
                          kind: str = "legendre", intercept: bool = True,
                          counter: FlopCounter | None = None,
                          oracle_records: dict | None = None) -> RateCurve:
    """Mean worst-case excess risk over ``family`` along ``n_grid``.

    A :class:`DimensionSchedule` rebuilds a ``kind`` basis of dimension
    ``d_n`` for every ``n``.  Condition ratios above the threshold only
    add a warning annotation.
    """
    errors = np.empty((len(n_grid), R))
    dims = []
    notes = []
    cache: dict[int, tuple] = {}
    for k, n in enumerate(n_grid):
        fmap = resolve_map(map_or_schedule, int(n), model.domain, kind, intercept)
        key = fmap.dimension
        if key not in cache:
            pop = population_betas(model, fmap, family)
            cache[key] = (pop, leverage(pop.gram, fmap, model=model, factor=pop.factor))
            if oracle_records is not None:
                oracle_records[f"d={key}"] = pop.oracle
        pop, profile = cache[key]
        cond = condition_ratios(profile, int(n))
        if cond["status"] == "warn":
            msg = (f"n={n}: condition ratios moment={cond['moment_ratio']:.3g}, "
                   f"sup={cond['sup_ratio']:.3g} above {CONDITION_THRESHOLD}")
            log.warning(msg)
            notes.append(msg)
        dims.append(fmap.dimension)

        def one(s, n=n, fmap=fmap, pop=pop):
            design = draw_design(model, fmap, int(n), s)
            fit = fit_many(design, family)
            risks = excess_risk(fit.coefficients, pop.betas, pop.factor)
            return float(np.nanmax(risks)), fit.counter

        errors[k] = collect(run_replications(one, replication_seeds(seed, k, R), threads), counter)
    return RateCurve.from_replicates(n_grid, dims, errors, label="worst_case", annotations=notes)
