"""Fitting many least-squares surrogates from one random design.

The design owns the only factorization of ``G_n``; :func:`fit_many`
reuses it for every response, so fitting ``m`` responses costs one
``O(n d^2)`` pass plus ``O(n d + d^2)`` per response.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .features import as_points
from .linalg import (
    CholeskyFactor,
    FlopCounter,
    GramMatrix,
    JitterPolicy,
    empirical_gram,
    factorize,
    sup_grid,
)
from .population import PopulationModel, merge_breakpoints

log = logging.getLogger(__name__)

Response = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ResponseFamily:
    """Finite indexed family of responses ``f_theta`` with a uniform envelope.

    Each member maps an ``(N, p)`` array of inputs to ``(N,)`` values.
    ``breakpoints`` lists per-axis discontinuities shared by the members
    (used by the quadrature oracle); ``envelope`` bounds ``|f|``.
    """

    members: tuple[Response, ...]
    envelope: float
    labels: tuple[str, ...] = ()
    breakpoints: tuple[tuple[float, ...], ...] | None = None
    params: tuple = ()

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("response family is empty")
        object.__setattr__(self, "members", members)
        labels = tuple(self.labels) or tuple(f"f{j}" for j in range(len(members)))
        if len(labels) != len(members):
            raise ValueError("one label per member required")
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.members)

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        """Response matrix ``(N, m)``; a failing member yields a NaN column."""
        X = np.asarray(X, dtype=float)
        out = np.empty((X.shape[0], len(self.members)))
        for j, f in enumerate(self.members):
            try:
                out[:, j] = f(X)
            except (ArithmeticError, ValueError) as exc:
                log.warning("response %s failed to evaluate: %s", self.labels[j], exc)
                out[:, j] = np.nan
        return out

    def subset(self, indices: Sequence[int]) -> "ResponseFamily":
        idx = list(indices)
        return ResponseFamily(tuple(self.members[i] for i in idx), self.envelope,
                              tuple(self.labels[i] for i in idx), self.breakpoints,
                              tuple(self.params[i] for i in idx) if self.params else ())

    @classmethod
    def singleton(cls, f: Response, envelope: float = np.inf, label: str = "f",
                  breakpoints=None) -> "ResponseFamily":
        return cls((f,), envelope, (label,), breakpoints)


def polynomial_family(powers: Sequence[int], box_bound: float = 1.0, axis: int = 0) -> ResponseFamily:
    """Members ``x -> x[axis] ** k``; ``box_bound`` is ``max |x[axis]|`` over the domain."""
    powers = [int(k) for k in powers]
    members = tuple((lambda X, k=k: X[:, axis] ** k) for k in powers)
    return ResponseFamily(members, float(max(box_bound**k for k in powers)),
                          tuple(f"x^{k}" for k in powers), params=tuple(powers))


def step_family(thresholds: Sequence[float], axis: int = 0, dim: int = 1) -> ResponseFamily:
    """Indicators ``x -> 1{x[axis] <= y}`` indexed by the thresholds ``y``."""
    ys = [float(y) for y in thresholds]
    members = tuple((lambda X, y=y: (X[:, axis] <= y).astype(float)) for y in ys)
    bps = tuple(tuple(sorted(ys)) if a == axis else () for a in range(dim))
    return ResponseFamily(members, 1.0, tuple(f"1{{x<={y:g}}}" for y in ys), bps, tuple(ys))


def oscillatory_family(frequencies: Sequence[float], phases: Sequence[float] | float = 0.0,
                       axis: int = 0) -> ResponseFamily:
    """Members ``x -> sin(2 pi omega x[axis] + phi)`` over the frequency grid."""
    freqs = [float(w) for w in frequencies]
    phis = [float(phases)] * len(freqs) if np.ndim(phases) == 0 else [float(p) for p in phases]
    if len(phis) != len(freqs):
        raise ValueError("phases must be scalar or match frequencies")
    members = tuple((lambda X, w=w, p=p: np.sin(2 * np.pi * w * X[:, axis] + p))
                    for w, p in zip(freqs, phis))
    return ResponseFamily(members, 1.0, tuple(f"sin({w:g},{p:g})" for w, p in zip(freqs, phis)),
                          params=tuple(zip(freqs, phis)))


def span_family(feature_map, coefficients: np.ndarray) -> ResponseFamily:
    """Members ``x -> h(x)^T c_j`` for the columns ``c_j`` of ``coefficients``.

    The envelope is a grid estimate of the largest ``|h^T c_j|``.
    """
    C = np.atleast_2d(np.asarray(coefficients, dtype=float))
    if C.shape[0] != feature_map.dimension:
        C = C.T
    members = tuple((lambda X, c=C[:, j]: feature_map.evaluate(X) @ c) for j in range(C.shape[1]))
    grid = sup_grid(feature_map.domain, 10_000)
    envelope = float(np.max(np.abs(feature_map.evaluate(grid) @ C))) * (1 + 1e-9)
    return ResponseFamily(members, envelope, tuple(f"span{j}" for j in range(C.shape[1])),
                          feature_map.breakpoints)


@dataclass(frozen=True)
class Design:
    """One random design: the sample, its features, ``G_n`` and the cached factor."""

    X: np.ndarray
    H: np.ndarray
    gram: GramMatrix
    factor: CholeskyFactor
    feature_map: object
    seed: int | None = None
    counter: FlopCounter = field(default_factory=FlopCounter, compare=False, repr=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.H.shape[1]

    @property
    def pseudo_inverse_used(self) -> bool:
        return self.factor.pseudo_inverse_used


def design_from_points(feature_map, X, seed: int | None = None,
                       policy: JitterPolicy | None = None) -> Design:
    """Design on given input points; the Gram matrix is factorized exactly once here."""
    X, _ = as_points(X, feature_map.domain.dim)
    X = np.array(X, dtype=float)
    counter = FlopCounter()
    H = feature_map.evaluate(X)
    G = empirical_gram(H, counter)
    factor = factorize(G, policy, counter)
    if factor.pseudo_inverse_used:
        log.warning("empirical Gram is rank deficient (rank %d < %d); using pseudo-inverse",
                    factor.rank, H.shape[1])
    X.setflags(write=False)
    H.setflags(write=False)
    return Design(X, H, G, factor, feature_map, seed, counter)


def draw_design(model: PopulationModel, feature_map, n: int, seed: int,
                policy: JitterPolicy | None = None) -> Design:
    """Draw ``n`` inputs from ``model`` with ``numpy.random.default_rng(seed)``."""
    if n < 1:
        raise ValueError("sample size must be positive")
    X = model.sample(np.random.default_rng(seed), n)
    return design_from_points(feature_map, X, seed, policy)


@dataclass(frozen=True)
class FitResult:
    """Coefficients ``(d, m)``, one column per response, plus cost accounting.

    Columns of responses that produced NaN are NaN and listed in ``failed``.
    ``counter`` merges the design's one-off costs with the per-response work.
    """

    coefficients: np.ndarray
    counter: FlopCounter
    failed: dict = field(default_factory=dict)
    labels: tuple[str, ...] = ()

    @property
    def m(self) -> int:
        return self.coefficients.shape[1]

    def normal_equation_residual(self, design: Design, Y: np.ndarray) -> np.ndarray:
        """Relative residual ``|G_n b - P_n(h f)| / |P_n(h f)|`` per column."""
        rhs = design.H.T @ Y / design.n
        res = design.gram.matrix @ self.coefficients - rhs
        scale = np.maximum(np.linalg.norm(rhs, axis=0), np.finfo(float).tiny)
        return np.linalg.norm(res, axis=0) / scale


def fit_responses(design: Design, Y: np.ndarray, labels: Sequence[str] = ()) -> FitResult:
    """Least-squares coefficients for a response matrix ``Y`` of shape ``(n, m)``."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != design.n:
        raise ValueError(f"response matrix has {Y.shape[0]} rows, design has {design.n}")
    n, d = design.H.shape
    m = Y.shape[1]
    bad = ~np.all(np.isfinite(Y), axis=0)
    failed = {int(j): "non-finite response value at a design point" for j in np.flatnonzero(bad)}
    work = FlopCounter()
    B = np.full((d, m), np.nan)
    good = np.flatnonzero(~bad)
    if good.size:
        rhs = design.H.T @ Y[:, good] / n
        work.record("moment", 2 * n * d * good.size, count=good.size)
        B[:, good] = design.factor.solve(rhs, work)
    return FitResult(B, design.counter.merged(work), failed, tuple(labels))


def fit_many(design: Design, family: ResponseFamily) -> FitResult:
    """Fit every member of ``family`` on the shared design without refactorizing."""
    Y = family.evaluate(design.X)
    result = fit_responses(design, Y, family.labels)
    for j in result.failed:
        log.warning("response %s rejected: %s", family.labels[j], result.failed[j])
    return result


def prediction_weights(design: Design, x) -> np.ndarray:
    """Weights ``w(x, X_i) = h(x)^T G_n^{-1} h(X_i)``; shape ``(k, n)`` (or ``(n,)``)."""
    X, single = as_points(x, design.feature_map.domain.dim)
    Hx = design.feature_map.evaluate(X)
    W = (design.factor.solve(Hx.T).T) @ design.H.T
    return W[0] if single else W


def predict(result: FitResult, design: Design, x) -> np.ndarray:
    """Surrogate predictions ``h(x)^T B``: shape ``(m,)`` or ``(k, m)``."""
    X, single = as_points(x, design.feature_map.domain.dim)
    P = design.feature_map.evaluate(X) @ result.coefficients
    return P[0] if single else P


def predict_by_weights(design: Design, Y: np.ndarray, x) -> np.ndarray:
    """Same predictions through the weight form ``(1/n) sum_i w(x, X_i) f(X_i)``."""
    W = prediction_weights(design, x)
    return W @ np.asarray(Y, dtype=float) / design.n


@dataclass(frozen=True)
class PopulationFit:
    """Population-optimal coefficients ``beta_f = G^{-1} P(h f)`` for a family.

    ``orthogonality`` is ``max |P(h eps_f)|`` as measured by the oracle.
    """

    betas: np.ndarray
    gram: GramMatrix
    factor: CholeskyFactor
    feature_map: object
    family: ResponseFamily
    oracle: dict
    orthogonality: float

    def residuals(self, X: np.ndarray) -> np.ndarray:
        """``eps_f(X) = f(X) - h(X)^T beta_f`` as an ``(N, m)`` array."""
        X = np.asarray(X, dtype=float)
        return self.family.evaluate(X) - self.feature_map.evaluate(X) @ self.betas

    def residual(self, j: int) -> Response:
        return lambda X: self.residuals(X)[:, j]


def population_betas(model: PopulationModel, feature_map, family: ResponseFamily,
                     gram: GramMatrix | None = None) -> PopulationFit:
    """Population least-squares coefficients for every member of ``family``."""
    bps = merge_breakpoints(feature_map.breakpoints, family.breakpoints)
    records = {}
    if gram is None:
        gram, g_res = model.gram(feature_map)
        records["gram"] = g_res.record()
    factor = factorize(gram)
    if factor.pseudo_inverse_used:
        raise np.linalg.LinAlgError("population Gram matrix is not positive definite")

    def cross(X):
        H = feature_map.evaluate(X)
        return H[:, :, None] * family.evaluate(X)[:, None, :]

    hf = model.expect(cross, breakpoints=bps)
    records["cross_moment"] = hf.record()
    betas = factor.solve(hf.value)
    fit = PopulationFit(betas, gram, factor, feature_map, family, records, 0.0)

    def orth(X):
        return feature_map.evaluate(X)[:, :, None] * fit.residuals(X)[:, None, :]

    o_res = model.expect(orth, breakpoints=bps)
    records["orthogonality"] = o_res.record()
    return PopulationFit(betas, gram, factor, feature_map, family, records,
                         float(np.max(np.abs(o_res.value))))


def population_beta(model: PopulationModel, feature_map, f: Response,
                    breakpoints=None) -> tuple[np.ndarray, Response, PopulationFit]:
    """Population coefficients of a single response.

    Returns ``(beta_f, eps_f, fit)`` where ``eps_f`` is the residual function.
    """
    fit = population_betas(model, feature_map, ResponseFamily.singleton(f, breakpoints=breakpoints))
    return fit.betas[:, 0], fit.residual(0), fit


def residual_moments(model: PopulationModel, fit: PopulationFit, weight=None) -> np.ndarray:
    """``P(w eps_f^2)`` for every member (``w = 1`` when ``weight`` is None)."""
    bps = merge_breakpoints(fit.feature_map.breakpoints, fit.family.breakpoints)

    def integrand(X):
        E2 = fit.residuals(X) ** 2
        return E2 if weight is None else E2 * np.asarray(weight(X))[:, None]

    return np.asarray(model.expect(integrand, breakpoints=bps).value)
