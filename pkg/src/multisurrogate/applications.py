"""CDF/quantile estimation and sample-average minimisation on a shared design.

Both tasks integrate a grid-indexed family (indicators ``1{g(x) <= y}``
or objectives ``f(theta, x)``) with one set of Monte Carlo or
control-variate weights, computed once per design.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import isotonic_regression

from .control_variates import ControlVariateSet, cv_weights, with_controls
from .linalg import FlopCounter
from .surrogate import Design

log = logging.getLogger(__name__)

METHODS = ("vanilla", "cv")

TRANSFORMS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda X: X[:, 0],
    "sum": lambda X: X.sum(axis=1),
    "max": lambda X: X.max(axis=1),
    "square": lambda X: X[:, 0] ** 2,
}


def quadratic_loss(theta: float, X: np.ndarray) -> np.ndarray:
    return (theta - X[:, 0]) ** 2


def check_loss(tau: float) -> Callable[[float, np.ndarray], np.ndarray]:
    """Pinball loss whose expected value is minimised at the ``tau`` quantile."""
    def loss(theta, X):
        r = X[:, 0] - theta
        return r * (tau - (r < 0))
    return loss


@dataclass(frozen=True)
class QuantileTask:
    transform: Callable[[np.ndarray], np.ndarray]
    level: float
    y_grid: np.ndarray
    cdf: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        y = np.asarray(self.y_grid, dtype=float).ravel()
        if y.size == 0 or np.any(np.diff(y) <= 0):
            raise ValueError("y-grid must be nonempty and strictly increasing")
        if not 0.0 < self.level < 1.0:
            raise ValueError("quantile level must lie in (0, 1)")
        object.__setattr__(self, "y_grid", y)

    @property
    def grid_step(self) -> float:
        return float(np.max(np.diff(self.y_grid))) if self.y_grid.size > 1 else 0.0


@dataclass(frozen=True)
class CdfEstimate:
    y: np.ndarray
    raw: np.ndarray
    corrected: np.ndarray
    method: str
    truth: np.ndarray | None = None
    counter: FlopCounter = field(default_factory=FlopCounter, compare=False, repr=False)


@dataclass(frozen=True)
class QuantileEstimate:
    value: float
    index: int
    saturated: bool


def isotonic_projection(values) -> np.ndarray:
    """Least squares nondecreasing fit, clipped to ``[0, 1]``."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return v.copy()
    return np.clip(isotonic_regression(v).x, 0.0, 1.0)


def _weights(design: Design, controls: ControlVariateSet | None, method: str,
             counter: FlopCounter) -> tuple[Design, np.ndarray]:
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    if design.n < 1:
        raise ValueError("empty design")
    if method == "vanilla":
        return design, np.full(design.n, 1.0 / design.n)
    if controls is not None:
        design = with_controls(design, controls)
    return design, cv_weights(design, counter)


def estimate_cdf(task: QuantileTask, design: Design, controls: ControlVariateSet | None = None,
                 method: str = "cv") -> CdfEstimate:
    """Estimate ``F(y) = P(g(X) <= y)`` on the task grid.

    The weights are computed once and applied to every indicator column.
    """
    counter = FlopCounter()
    design, w = _weights(design, controls, method, counter)
    z = np.asarray(task.transform(design.X), dtype=float).reshape(design.n)
    Y = (z[:, None] <= task.y_grid[None, :]).astype(float)
    raw = w @ Y
    truth = None if task.cdf is None else np.asarray(task.cdf(task.y_grid), dtype=float)
    return CdfEstimate(task.y_grid, raw, isotonic_projection(raw), method, truth, counter)


def estimate_quantile(task: QuantileTask, cdf: CdfEstimate, level: float | None = None) -> QuantileEstimate:
    """Smallest grid ``y`` whose corrected CDF reaches the level.

    When no grid point reaches it, the rightmost point is returned with
    ``saturated`` set.
    """
    u = task.level if level is None else level
    hits = np.flatnonzero(cdf.corrected >= u)
    if hits.size == 0:
        return QuantileEstimate(float(cdf.y[-1]), len(cdf.y) - 1, True)
    return QuantileEstimate(float(cdf.y[hits[0]]), int(hits[0]), False)


@dataclass(frozen=True)
class SaaTask:
    objective: Callable[[float, np.ndarray], np.ndarray]
    theta_grid: np.ndarray
    minimizer: float | None = None

    def __post_init__(self):
        grid = np.asarray(self.theta_grid, dtype=float).ravel()
        if grid.size == 0:
            raise ValueError("theta-grid is empty")
        object.__setattr__(self, "theta_grid", grid)


@dataclass(frozen=True)
class SaaResult:
    theta_hat: float
    index: int
    objective: np.ndarray
    stderr: np.ndarray
    excluded: tuple[int, ...]
    method: str
    counter: FlopCounter = field(default_factory=FlopCounter, compare=False, repr=False)


def saa_minimize(task: SaaTask, design: Design, controls: ControlVariateSet | None = None,
                 method: str = "vanilla") -> SaaResult:
    """Minimise the estimated objective over the theta-grid.

    Grid points whose objective is not finite are dropped with a warning.
    Ties go to the smallest theta.
    """
    counter = FlopCounter()
    design, w = _weights(design, controls, method, counter)
    Y = np.column_stack([np.asarray(task.objective(t, design.X), dtype=float).reshape(design.n)
                         for t in task.theta_grid])
    bad = ~np.all(np.isfinite(Y), axis=0)
    if bad.any():
        log.warning("objective not finite at theta = %s; excluded", task.theta_grid[bad].tolist())
    Yc = np.where(bad[None, :], 0.0, Y)
    obj = w @ Yc
    if method == "vanilla":
        resid = Yc - obj
        dof = design.n - 1
    else:
        coef = design.factor.solve(design.H.T @ Yc / design.n)
        resid = Yc - design.H @ coef
        dof = design.n - design.d
    stderr = np.sqrt(np.sum(resid**2, axis=0) / max(dof, 1) / design.n)
    obj = np.where(bad, np.nan, obj)
    stderr = np.where(bad, np.nan, stderr)
    if bad.all():
        raise ValueError("objective is not finite anywhere on the theta-grid")
    best = np.nanmin(obj)
    ties = np.flatnonzero(obj == best)
    j = int(ties[np.argmin(task.theta_grid[ties])])
    return SaaResult(float(task.theta_grid[j]), j, obj, stderr,
                     tuple(int(i) for i in np.flatnonzero(bad)), method, counter)
