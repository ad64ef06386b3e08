"""Gram matrices, Cholesky factors, leverage and whitening.

Everything downstream (fitting, risk, control variates, diagnostics) goes
through :func:`factorize` and the two solve primitives of
:class:`CholeskyFactor`.  Rank deficiency is detected from the Cholesky
pivots and handled with an eigendecomposition pseudo-inverse.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.stats import qmc, norm

from .features import Box, LinearFeatureMap, as_points

PIVOT_TOL = 1e-10
PINV_CUTOFF = 1e-10
SUP_GRID_SIZE = 100_000


class FlopCounter:
    """Tally of floating-point work, keyed by operation name.

    ``counts`` records how many times an operation ran and ``flops`` the
    nominal floating-point operations it cost.  Nominal costs follow the
    usual dense conventions (``n d^2`` for a Gram pass, ``d^3 / 3`` for a
    Cholesky factorization, ``2 d^2`` per pair of triangular solves).
    """

    def __init__(self):
        self.counts: Counter = Counter()
        self.flops: Counter = Counter()

    def record(self, op: str, flops: float, count: int = 1) -> None:
        self.counts[op] += count
        self.flops[op] += float(flops)

    def merged(self, other: "FlopCounter") -> "FlopCounter":
        out = FlopCounter()
        for c in (self, other):
            out.counts.update(c.counts)
            out.flops.update(c.flops)
        return out

    @property
    def factorizations(self) -> int:
        return self.counts["factorization"]

    @property
    def total(self) -> float:
        return float(sum(self.flops.values()))

    def as_dict(self) -> dict:
        return {"counts": dict(self.counts), "flops": dict(self.flops)}


@dataclass(frozen=True)
class GramMatrix:
    """Symmetric ``d x d`` second-moment matrix with its provenance."""

    matrix: np.ndarray
    provenance: str = "empirical"

    def __post_init__(self):
        G = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if G.ndim != 2 or G.shape[0] != G.shape[1]:
            raise ValueError(f"Gram matrix must be square, got shape {G.shape}")
        if self.provenance not in ("empirical", "population"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if np.all(np.isfinite(G)):
            scale = max(np.max(np.abs(G)), np.finfo(float).tiny)
            if np.max(np.abs(G - G.T)) > 1e-12 * scale:
                raise ValueError("Gram matrix is not symmetric")
        G.setflags(write=False)
        object.__setattr__(self, "matrix", G)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class JitterPolicy:
    """Tolerances deciding when a Cholesky factorization is abandoned."""

    pivot_tol: float = PIVOT_TOL
    pinv_cutoff: float = PINV_CUTOFF


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower Cholesky factor ``L`` of ``G``, or its pseudo-inverse stand-in.

    In pseudo-inverse mode ``lower`` is None and ``eigvals``/``eigvecs``
    hold the retained part of the spectrum.
    """

    lower: np.ndarray | None
    pseudo_inverse_used: bool = False
    eigvals: np.ndarray | None = None
    eigvecs: np.ndarray | None = None
    dimension: int = 0

    @property
    def rank(self) -> int:
        return self.dimension if not self.pseudo_inverse_used else len(self.eigvals)

    def half_solve(self, B: np.ndarray, counter: FlopCounter | None = None) -> np.ndarray:
        """Return ``C`` with ``C^T C = B^T G^{-1} B`` (``L^{-1} B`` when not rank deficient)."""
        B = np.asarray(B, dtype=float)
        m = 1 if B.ndim == 1 else B.shape[1]
        if counter is not None:
            counter.record("triangular_solve", self.dimension**2 * m, count=m)
        if not self.pseudo_inverse_used:
            return scipy.linalg.solve_triangular(self.lower, B, lower=True, check_finite=False)
        return (self.eigvecs.T @ B) / np.sqrt(self.eigvals).reshape((-1,) + (1,) * (B.ndim - 1))

    def solve(self, B: np.ndarray, counter: FlopCounter | None = None) -> np.ndarray:
        """Return ``G^{-1} B`` (``G^+ B`` in pseudo-inverse mode)."""
        B = np.asarray(B, dtype=float)
        m = 1 if B.ndim == 1 else B.shape[1]
        if counter is not None:
            counter.record("triangular_solve", 2 * self.dimension**2 * m, count=2 * m)
        if not self.pseudo_inverse_used:
            return scipy.linalg.cho_solve((self.lower, True), B, check_finite=False)
        coef = (self.eigvecs.T @ B) / self.eigvals.reshape((-1,) + (1,) * (B.ndim - 1))
        return self.eigvecs @ coef

    def half_apply(self, B: np.ndarray) -> np.ndarray:
        """Return ``C`` with ``C^T C = B^T G B`` (``L^T B`` when not rank deficient)."""
        B = np.asarray(B, dtype=float)
        if not self.pseudo_inverse_used:
            return self.lower.T @ B
        return (self.eigvecs.T @ B) * np.sqrt(self.eigvals).reshape((-1,) + (1,) * (B.ndim - 1))

    def reconstruct(self) -> np.ndarray:
        if not self.pseudo_inverse_used:
            return self.lower @ self.lower.T
        return (self.eigvecs * self.eigvals) @ self.eigvecs.T


def _as_array(G) -> np.ndarray:
    return G.matrix if isinstance(G, GramMatrix) else np.asarray(G, dtype=float)


def empirical_gram(feature_matrix: np.ndarray, counter: FlopCounter | None = None) -> GramMatrix:
    """``G_n = H^T H / n`` for the ``n x d`` feature matrix ``H``."""
    H = np.atleast_2d(np.asarray(feature_matrix, dtype=float))
    n, d = H.shape
    if n < 1:
        raise ValueError("empirical Gram needs at least one row")
    G = H.T @ H / n
    if counter is not None:
        counter.record("gram", n * d * d)
    return GramMatrix(0.5 * (G + G.T), "empirical")


def factorize(G, policy: JitterPolicy | None = None, counter: FlopCounter | None = None) -> CholeskyFactor:
    """Cholesky-factorize ``G``; fall back to a pseudo-inverse on tiny pivots.

    A pivot ``L_jj^2`` below ``pivot_tol * max(diag G)`` (or an outright
    failure of the factorization) switches to eigendecomposition mode,
    where eigenvalues below ``pinv_cutoff * lambda_max`` count as zero.
    """
    policy = policy or JitterPolicy()
    A = _as_array(G)
    if not np.all(np.isfinite(A)):
        raise ValueError("Gram matrix has NaN or infinite entries")
    d = A.shape[0]
    if counter is not None:
        counter.record("factorization", d**3 / 3.0)
    scale = max(float(np.max(np.diag(A))), 0.0)
    try:
        L = scipy.linalg.cholesky(A, lower=True, check_finite=False)
        if scale > 0 and np.min(np.diag(L) ** 2) >= policy.pivot_tol * scale:
            return CholeskyFactor(lower=L, dimension=d)
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(A)
    lam_max = w[-1]
    keep = w > policy.pinv_cutoff * lam_max if lam_max > 0 else np.zeros_like(w, dtype=bool)
    return CholeskyFactor(lower=None, pseudo_inverse_used=True, eigvals=w[keep],
                          eigvecs=V[:, keep], dimension=d)


def min_eigenvalue(G) -> float:
    return float(np.linalg.eigvalsh(_as_array(G))[0])


def inverse_sqrt(G) -> np.ndarray:
    """Inverse of the symmetric square root of a positive definite matrix."""
    w, V = np.linalg.eigh(_as_array(G))
    if w[0] <= PINV_CUTOFF * w[-1]:
        raise np.linalg.LinAlgError("matrix is not positive definite; cannot whiten")
    return (V / np.sqrt(w)) @ V.T


def whiten(feature_map, G) -> LinearFeatureMap:
    """Whitened map ``G^{-1/2} h`` built from the symmetric square root of ``G``."""
    return LinearFeatureMap(base=feature_map, matrix=inverse_sqrt(G))


def sup_grid(domain: Box, size: int = SUP_GRID_SIZE) -> np.ndarray:
    """Deterministic low-discrepancy evaluation grid for sup-norm estimates.

    Unscrambled Halton points mapped into the box, plus the box vertices.
    Unbounded axes are mapped through the standard normal quantile.
    """
    halton = qmc.Halton(d=domain.dim, scramble=False).random(size + 1)[1:]
    lo = np.asarray(domain.lower)
    hi = np.asarray(domain.upper)
    pts = np.empty_like(halton)
    for a in range(domain.dim):
        if np.isfinite(lo[a]) and np.isfinite(hi[a]):
            pts[:, a] = lo[a] + (hi[a] - lo[a]) * halton[:, a]
        else:
            pts[:, a] = np.clip(norm.ppf(halton[:, a]), lo[a], hi[a])
    return np.vstack([domain.vertices(), pts])


@dataclass(frozen=True)
class LeverageProfile:
    """Leverage function ``q(x) = h(x)^T G^{-1} h(x)`` with cached summaries.

    ``sup_norm`` is a grid estimate (a lower bound of the true sup).
    ``mean`` and ``second_moment`` are ``P(q)`` and ``P(q^2)`` when a
    population model was supplied, else None.
    """

    feature_map: object
    factor: CholeskyFactor
    sup_norm: float
    mean: float | None = None
    second_moment: float | None = None
    range_only: bool = False
    provenance: str = "population"
    extras: dict = field(default_factory=dict)

    def __call__(self, x) -> np.ndarray:
        X, single = as_points(x, self.feature_map.domain.dim)
        C = self.factor.half_solve(self.feature_map.evaluate(X).T)
        q = np.sum(C * C, axis=0)
        return q[0] if single else q


def leverage(
    G,
    feature_map,
    model=None,
    points: np.ndarray | None = None,
    grid_size: int = SUP_GRID_SIZE,
    factor: CholeskyFactor | None = None,
) -> LeverageProfile:
    """Build the leverage profile of ``feature_map`` relative to ``G``.

    ``points`` (e.g. the design sample) are added to the sup-norm grid.
    With ``model`` given, ``P(q)`` and ``P(q^2)`` come from its oracle.
    """
    if factor is None:
        factor = factorize(G)
    provenance = G.provenance if isinstance(G, GramMatrix) else "population"
    profile = LeverageProfile(feature_map, factor, 0.0, range_only=factor.pseudo_inverse_used,
                              provenance=provenance)
    grid = sup_grid(feature_map.domain, grid_size)
    if points is not None:
        grid = np.vstack([grid, as_points(points, feature_map.domain.dim)[0]])
    sup = float(np.max(profile(grid)))
    mean = second = None
    if model is not None:
        def moments(X):
            q = profile(X)
            return np.stack([q, q * q], axis=1)

        res = model.expect(moments, breakpoints=getattr(feature_map, "breakpoints", None))
        mean, second = (float(v) for v in res.value)
    return LeverageProfile(feature_map, factor, sup, mean, second,
                           range_only=factor.pseudo_inverse_used, provenance=provenance)


def leverage_values(factor: CholeskyFactor, H: np.ndarray) -> np.ndarray:
    """Leverage at the rows of a precomputed feature matrix."""
    C = factor.half_solve(np.asarray(H, dtype=float).T)
    return np.sum(C * C, axis=0)

