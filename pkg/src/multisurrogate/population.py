"""Input distributions and the moment oracles used for population quantities.

Smooth integrands are integrated with tensor Gauss quadrature (Legendre
for uniform boxes, Hermite for independent Gaussians).  When the
integrand has known per-axis discontinuities (indicator bases, step
responses) on a uniform box, the quadrature is composite with segment
boundaries at those breakpoints and stays exact for piecewise
polynomials.  Everything else falls back to a seeded Monte Carlo oracle
whose standard error is reported.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss

from .features import Box
from .linalg import GramMatrix

MAX_QUADRATURE_DIM = 3
MC_CHUNK = 1_000_000


@dataclass(frozen=True)
class OracleResult:
    """Population expectation with an accuracy annotation.

    ``error`` is ``|Q_N - Q_{N/2}|`` for quadrature (a conservative
    estimate) and the Monte Carlo standard error otherwise.
    """

    value: np.ndarray
    method: str
    error: float
    nodes: int

    def record(self) -> dict:
        return {"method": self.method, "error": float(self.error), "nodes": int(self.nodes)}


def merge_breakpoints(*groups) -> tuple[tuple[float, ...], ...] | None:
    groups = [g for g in groups if g is not None]
    if not groups:
        return None
    dim = len(groups[0])
    return tuple(tuple(sorted({float(b) for g in groups for b in g[a]})) for a in range(dim))


@dataclass(frozen=True)
class PopulationModel:
    """Distribution ``P`` of the inputs plus its moment oracle.

    ``distribution`` is ``"uniform"`` (on the box ``[lower, upper]``) or
    ``"gaussian"`` (independent coordinates with ``lower`` read as the
    means and ``upper`` as the standard deviations).
    """

    distribution: str = "uniform"
    lower: tuple[float, ...] = (0.0,)
    upper: tuple[float, ...] = (1.0,)
    quadrature_order: int = 64
    mc_samples: int = 10_000_000
    mc_seed: int = 987654321

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if self.distribution == "uniform":
            Box(lower, upper)
        elif self.distribution == "gaussian":
            if len(lower) != len(upper) or any(s <= 0 for s in upper):
                raise ValueError("gaussian model needs positive standard deviations")
        else:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.quadrature_order < 2:
            raise ValueError("quadrature order must be at least 2")

    @classmethod
    def uniform(cls, lower=(0.0,), upper=(1.0,), **kw) -> "PopulationModel":
        return cls("uniform", tuple(np.atleast_1d(lower)), tuple(np.atleast_1d(upper)), **kw)

    @classmethod
    def gaussian(cls, mean=(0.0,), std=(1.0,), **kw) -> "PopulationModel":
        return cls("gaussian", tuple(np.atleast_1d(mean)), tuple(np.atleast_1d(std)), **kw)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def domain(self) -> Box:
        if self.distribution == "uniform":
            return Box(self.lower, self.upper)
        return Box((-np.inf,) * self.dim, (np.inf,) * self.dim)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if n < 1:
            raise ValueError("sample size must be positive")
        if self.distribution == "uniform":
            return rng.uniform(self.lower, self.upper, size=(n, self.dim))
        return rng.normal(self.lower, self.upper, size=(n, self.dim))

    def _rule(self, order: int, breakpoints) -> tuple[np.ndarray, np.ndarray]:
        axes = []
        for a in range(self.dim):
            if self.distribution == "uniform":
                t, w = leggauss(order)
                lo, hi = self.lower[a], self.upper[a]
                inner = [] if breakpoints is None else [b for b in breakpoints[a] if lo < b < hi]
                edges = np.array([lo, *sorted(inner), hi])
                mids = 0.5 * (edges[1:] + edges[:-1])
                halves = 0.5 * (edges[1:] - edges[:-1])
                nodes = (mids[:, None] + halves[:, None] * t).ravel()
                weights = (halves[:, None] * w).ravel() / (hi - lo)
            else:
                t, w = hermegauss(order)
                nodes = self.lower[a] + self.upper[a] * t
                weights = w / np.sqrt(2 * np.pi)
            axes.append((nodes, weights))
        nodes = np.array(list(itertools.product(*[ax[0] for ax in axes])))
        weights = np.prod(np.array(list(itertools.product(*[ax[1] for ax in axes]))), axis=1)
        return nodes.reshape(-1, self.dim), weights

    def quadrature_rule(self, breakpoints=None, order: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Nodes ``(N, p)`` and probability weights ``(N,)`` of the tensor rule."""
        return self._rule(order or self.quadrature_order, breakpoints)

    def _quadrature(self, func, breakpoints) -> OracleResult:
        X, w = self._rule(self.quadrature_order, breakpoints)
        value = np.tensordot(w, np.asarray(func(X), dtype=float), axes=(0, 0))
        Xh, wh = self._rule(max(self.quadrature_order // 2, 1), breakpoints)
        coarse = np.tensordot(wh, np.asarray(func(Xh), dtype=float), axes=(0, 0))
        err = float(np.max(np.abs(value - coarse))) if np.size(value) else 0.0
        return OracleResult(value, "quadrature", err, X.shape[0])

    def _monte_carlo(self, func) -> OracleResult:
        rng = np.random.default_rng(self.mc_seed)
        total = total_sq = None
        done = 0
        while done < self.mc_samples:
            k = min(MC_CHUNK, self.mc_samples - done)
            vals = np.asarray(func(self.sample(rng, k)), dtype=float)
            s, s2 = vals.sum(axis=0), (vals * vals).sum(axis=0)
            total = s if total is None else total + s
            total_sq = s2 if total_sq is None else total_sq + s2
            done += k
        mean = total / done
        var = np.maximum(total_sq / done - mean * mean, 0.0)
        se = np.sqrt(var / done)
        return OracleResult(mean, "monte_carlo", float(np.max(se)) if np.size(se) else 0.0, done)

    def expect(self, func: Callable[[np.ndarray], np.ndarray], breakpoints=None,
               method: str = "auto") -> OracleResult:
        """Compute ``P(func)`` for a vectorised integrand ``func(X) -> (N, ...)``.

        ``breakpoints`` lists per-axis discontinuities of the integrand.
        ``method`` is ``"auto"``, ``"quadrature"`` or ``"monte_carlo"``.
        """
        if method not in ("auto", "quadrature", "monte_carlo"):
            raise ValueError(f"unknown oracle method {method!r}")
        quadrature_ok = self.dim <= MAX_QUADRATURE_DIM and (
            self.distribution == "uniform" or breakpoints is None)
        if method == "quadrature" and not quadrature_ok:
            raise ValueError("quadrature oracle unavailable for this integrand/model")
        if method == "monte_carlo" or not quadrature_ok:
            return self._monte_carlo(func)
        return self._quadrature(func, breakpoints)

    def gram(self, feature_map) -> tuple[GramMatrix, OracleResult]:
        """Population Gram matrix ``P(h h^T)`` and its oracle record."""
        def outer(X):
            H = feature_map.evaluate(X)
            return H[:, :, None] * H[:, None, :]

        res = self.expect(outer, breakpoints=feature_map.breakpoints)
        G = 0.5 * (res.value + res.value.T)
        return GramMatrix(G, "population"), res

