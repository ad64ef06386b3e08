"""Feature maps ``h : X -> R^d`` used as the regression dictionary.

Component ordering is fixed because coefficient vectors travel between
modules as raw arrays:

* the constant component (when ``intercept=True``) always comes first;
* polynomial bases (``monomial``, ``legendre``) follow in increasing total
  degree, ties broken lexicographically on the multi-index with the first
  axis varying slowest;
* ``fourier`` components follow in increasing total frequency, with the
  ``sin`` factor before the ``cos`` factor at each frequency;
* ``indicator`` cells follow in increasing knot index (lexicographic over
  axes for multivariate boxes).

Legendre polynomials are shifted to the box and normalised, so that their
Gram matrix under the uniform distribution on the box is the identity.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

BASIS_KINDS = ("monomial", "legendre", "fourier", "indicator")
DEFAULT_MAX_DIMENSION = 10_000


class DomainError(ValueError):
    """A point lies outside the domain of a feature map."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lower, upper]``; bounds may be infinite."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lower) == 0 or len(lower) != len(upper):
            raise ValueError("box bounds must be non-empty and of equal length")
        if any(math.isnan(a) or math.isnan(b) or not a < b for a, b in zip(lower, upper)):
            raise ValueError(f"empty domain: lower={lower}, upper={upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def bounded(self) -> bool:
        return all(math.isfinite(a) and math.isfinite(b) for a, b in zip(self.lower, self.upper))

    def contains(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return np.all((X >= lo) & (X <= hi), axis=-1)

    def vertices(self) -> np.ndarray:
        if not self.bounded:
            return np.empty((0, self.dim))
        return np.array(list(itertools.product(*zip(self.lower, self.upper))), dtype=float)


def as_points(x, dim: int) -> tuple[np.ndarray, bool]:
    """Coerce ``x`` to an ``(n, dim)`` array; the flag says whether it was a single point."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if dim != 1:
            raise ValueError(f"scalar input for a {dim}-dimensional domain")
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if dim == 1:
            return arr.reshape(-1, 1), False
        if arr.shape[0] != dim:
            raise ValueError(f"point has {arr.shape[0]} coordinates, domain has {dim}")
        return arr.reshape(1, dim), True
    if arr.ndim == 2 and arr.shape[1] == dim:
        return arr, False
    raise ValueError(f"cannot interpret array of shape {arr.shape} as points in R^{dim}")


def _check_in_domain(X: np.ndarray, domain: Box) -> None:
    if np.isnan(X).any():
        raise DomainError("NaN coordinate in input")
    inside = domain.contains(X)
    if not np.all(inside):
        bad = X[~inside][0]
        raise DomainError(f"point {bad.tolist()} outside domain {domain.lower}..{domain.upper}")


def _legendre_1d(t: np.ndarray, degree: int) -> np.ndarray:
    """Orthonormal shifted Legendre values on [0, 1], shape (n, degree+1)."""
    s = 2.0 * t - 1.0
    out = np.empty((t.shape[0], degree + 1))
    out[:, 0] = 1.0
    if degree >= 1:
        out[:, 1] = s
    for k in range(1, degree):
        out[:, k + 1] = ((2 * k + 1) * s * out[:, k] - k * out[:, k - 1]) / (k + 1)
    out *= np.sqrt(2.0 * np.arange(degree + 1) + 1.0)
    return out


def _total_degree_indices(dim: int, degree: int) -> list[tuple[int, ...]]:
    idx = [m for m in itertools.product(range(degree + 1), repeat=dim) if sum(m) <= degree]
    return sorted(idx, key=lambda m: (sum(m), tuple(-v for v in m)))


def _fourier_indices(dim: int, max_freq: int) -> list[tuple[tuple[int, int], ...]]:
    # one factor per axis: (frequency, 0=const | 1=sin | 2=cos)
    factors = [(0, 0)] + [(k, t) for k in range(1, max_freq + 1) for t in (1, 2)]
    combos = [c for c in itertools.product(factors, repeat=dim) if sum(f[0] for f in c) <= max_freq]
    order = {f: i for i, f in enumerate(factors)}
    return sorted(combos, key=lambda c: (sum(f[0] for f in c), tuple(order[f] for f in c)))


@dataclass(frozen=True)
class FeatureMap:
    """Evaluable basis ``h = (h_1, ..., h_d)`` on a box.

    ``degree`` is the total degree for polynomial bases and the maximal total
    frequency for ``fourier``; ``knots`` holds one strictly increasing tuple
    of interior knots per axis for ``indicator``.
    """

    kind: str
    domain: Box
    degree: int | None = None
    knots: tuple[tuple[float, ...], ...] | None = None
    intercept: bool = True
    max_dimension: int = DEFAULT_MAX_DIMENSION
    _index: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}; expected one of {BASIS_KINDS}")
        p = self.domain.dim
        if self.kind == "indicator":
            if self.knots is None or len(self.knots) != p:
                raise ValueError("indicator basis needs one knot tuple per axis")
            knots = tuple(tuple(float(k) for k in ax) for ax in self.knots)
            for a, (lo, hi) in enumerate(zip(self.domain.lower, self.domain.upper)):
                ax = np.asarray(knots[a])
                if ax.size and np.any(np.diff(ax) <= 0):
                    raise ValueError(f"knots on axis {a} must be strictly increasing (duplicates?)")
                if ax.size and (ax[0] <= lo or ax[-1] >= hi):
                    raise ValueError(f"knots on axis {a} must lie strictly inside ({lo}, {hi})")
            object.__setattr__(self, "knots", knots)
            index = list(itertools.product(*[range(len(ax) + 1) for ax in knots]))
            n_comp = len(index) + int(self.intercept)
        else:
            if self.degree is None or int(self.degree) < 0:
                raise ValueError("polynomial/fourier basis needs a degree >= 0")
            object.__setattr__(self, "degree", int(self.degree))
            if self.kind in ("legendre", "fourier") and not self.domain.bounded:
                raise ValueError(f"{self.kind} basis needs a bounded domain")
            # count before enumerating so huge requests fail fast
            if self.kind == "fourier":
                n_comp = sum(math.comb(p, j) * 2**j * math.comb(self.degree, j) for j in range(p + 1))
            else:
                n_comp = math.comb(self.degree + p, p)
            if n_comp > self.max_dimension:
                raise ValueError(f"basis dimension {n_comp} exceeds maximum {self.max_dimension}")
            if self.kind == "fourier":
                index = _fourier_indices(p, self.degree)
            else:
                index = _total_degree_indices(p, self.degree)
            if not self.intercept:
                index = index[1:]
            n_comp = len(index)
        if n_comp < 1:
            raise ValueError("feature map would have dimension 0")
        if n_comp > self.max_dimension:
            raise ValueError(f"basis dimension {n_comp} exceeds maximum {self.max_dimension}")
        object.__setattr__(self, "_index", tuple(index))

    @property
    def dimension(self) -> int:
        return len(self._index) + int(self.kind == "indicator" and self.intercept)

    @property
    def breakpoints(self) -> tuple[tuple[float, ...], ...] | None:
        """Per-axis discontinuity locations (knots), or None for smooth bases."""
        return self.knots if self.kind == "indicator" else None

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(x)

    def evaluate(self, x) -> np.ndarray:
        """Evaluate at one point (returns ``(d,)``) or a batch (returns ``(n, d)``)."""
        X, single = as_points(x, self.domain.dim)
        _check_in_domain(X, self.domain)
        out = self._raw(X)
        return out[0] if single else out

    def _raw(self, X: np.ndarray) -> np.ndarray:
        n, p = X.shape
        if self.kind == "indicator":
            cells = [np.searchsorted(np.asarray(self.knots[a]), X[:, a], side="right") for a in range(p)]
            out = np.ones((n, len(self._index)))
            for j, cell in enumerate(self._index):
                for a in range(p):
                    out[:, j] *= cells[a] == cell[a]
            if self.intercept:
                out = np.hstack([np.ones((n, 1)), out])
            return out

        lo = np.asarray(self.domain.lower)
        hi = np.asarray(self.domain.upper)
        if self.kind == "monomial":
            per_axis = [X[:, a : a + 1] ** np.arange(self.degree + 1) for a in range(p)]
        elif self.kind == "legendre":
            T = (X - lo) / (hi - lo)
            per_axis = [_legendre_1d(T[:, a], self.degree) for a in range(p)]
        else:
            T = (X - lo) / (hi - lo)
            out = np.ones((n, len(self._index)))
            for j, combo in enumerate(self._index):
                for a, (k, typ) in enumerate(combo):
                    if typ == 1:
                        out[:, j] *= np.sin(2 * np.pi * k * T[:, a])
                    elif typ == 2:
                        out[:, j] *= np.cos(2 * np.pi * k * T[:, a])
            return out

        out = np.ones((n, len(self._index)))
        for j, multi in enumerate(self._index):
            for a, k in enumerate(multi):
                if k:
                    out[:, j] *= per_axis[a][:, k]
        return out


@dataclass(frozen=True)
class LinearFeatureMap:
    """Affine transform of another map: ``x -> [1,] matrix @ (base(x) - offset)``.

    Used for whitened maps and for centred control variates.  The span
    (and hence leverage and predictions) is that of ``base`` whenever
    ``matrix`` is invertible.
    """

    base: object
    matrix: np.ndarray | None = None
    offset: np.ndarray | None = None
    constant_first: bool = False

    @property
    def domain(self) -> Box:
        return self.base.domain

    @property
    def breakpoints(self):
        return self.base.breakpoints

    @property
    def intercept(self) -> bool:
        return self.constant_first

    @property
    def dimension(self) -> int:
        inner = self.base.dimension if self.matrix is None else self.matrix.shape[0]
        return inner + int(self.constant_first)

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(x)

    def evaluate(self, x) -> np.ndarray:
        X, single = as_points(x, self.domain.dim)
        H = self.base.evaluate(X)
        if self.offset is not None:
            H = H - self.offset
        if self.matrix is not None:
            H = H @ self.matrix.T
        if self.constant_first:
            H = np.hstack([np.ones((H.shape[0], 1)), H])
        return H[0] if single else H


def make_basis(
    kind: str,
    degree: int | None = None,
    domain: Box | Sequence = ((0.0,), (1.0,)),
    intercept: bool = True,
    knots=None,
    max_dimension: int = DEFAULT_MAX_DIMENSION,
) -> FeatureMap:
    """Build a :class:`FeatureMap`.

    ``domain`` is a :class:`Box` or a ``(lower, upper)`` pair.  For a 1-D
    indicator basis ``knots`` may be a flat sequence.
    """
    if not isinstance(domain, Box):
        domain = Box(*domain)
    if kind == "indicator" and knots is not None:
        knots = list(knots)
        if not knots or np.ndim(knots[0]) == 0:
            knots = [knots]
        knots = tuple(tuple(ax) for ax in knots)
    return FeatureMap(kind=kind, domain=domain, degree=degree, knots=knots,
                      intercept=intercept, max_dimension=max_dimension)


def evaluate(feature_map, x) -> np.ndarray:
    return feature_map.evaluate(x)


def basis_dimension(kind: str, degree: int, dim: int, intercept: bool = True) -> int:
    if kind == "fourier":
        full = sum(math.comb(dim, j) * 2**j * math.comb(degree, j) for j in range(dim + 1))
    else:
        full = math.comb(degree + dim, dim)
    return full - (0 if intercept else 1)


@dataclass(frozen=True)
class DimensionSchedule:
    """Rule ``n -> d_n``: ``constant`` (``value``) or ``power`` (``floor(n**exponent)``)."""

    rule: str = "constant"
    value: int = 1
    exponent: float = 0.5

    def __post_init__(self):
        if self.rule not in ("constant", "power"):
            raise ValueError(f"unknown schedule rule {self.rule!r}")
        if self.rule == "constant" and int(self.value) < 1:
            raise ValueError("constant schedule needs value >= 1")
        if self.rule == "power" and not 0.0 < self.exponent < 1.0:
            raise ValueError("power schedule exponent must lie in (0, 1)")

    def __call__(self, n: int) -> int:
        if n < 1:
            raise ValueError("sample size must be positive")
        if self.rule == "constant":
            return int(self.value)
        # guard against floor(8**(1/3)) == 1 style rounding
        d = int(math.floor(n**self.exponent + 1e-9))
        return max(1, d)

    def feature_map(self, n: int, kind: str, domain: Box, intercept: bool = True) -> FeatureMap:
        """Polynomial/fourier map of the largest degree whose dimension is at most ``d_n``."""
        if kind == "indicator":
            raise ValueError("dimension schedules apply to polynomial and fourier bases")
        target = self(n)
        degree = 0 if intercept else 1
        if basis_dimension(kind, degree, domain.dim, intercept) > target:
            raise ValueError(f"no {kind} basis of dimension <= {target}")
        while basis_dimension(kind, degree + 1, domain.dim, intercept) <= target:
            degree += 1
        return make_basis(kind, degree, domain, intercept)
