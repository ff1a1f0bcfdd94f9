"""Heavy-tailed i.i.d. potentials on Z^d and 1-norm lattice geometry."""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from math import comb
from typing import Iterator, Mapping

import numpy as np

from ._backend import backend_name, get_kernels

GOLDEN = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1
MAX_DIM = 8
DEFAULT_MAX_NODES = 20_000_000


class Family(str, enum.Enum):
    PARETO = "pareto"
    WEIBULL = "weibull"
    EXPONENTIAL = "exponential"


_FAM_CODE = {Family.PARETO: 0, Family.WEIBULL: 1, Family.EXPONENTIAL: 2}


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class BudgetExceeded(RuntimeError):
    """A scan or series needed more work than its configured budget."""

    def __init__(self, msg: str, partial=None):
        super().__init__(msg)
        self.partial = partial


def mix64(x: int) -> int:
    """splitmix64 finalizer on a Python int (mod 2^64)."""
    z = x & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class FieldSpec:
    family: Family
    d: int = 1
    alpha: float | None = None
    gamma: float | None = None
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not isinstance(self.d, (int, np.integer)) or not 1 <= self.d <= MAX_DIM:
            raise DomainError(f"dimension must be an integer in [1, {MAX_DIM}], got {self.d}")
        object.__setattr__(self, "master_seed", int(self.master_seed) & MASK64)
        if self.family is Family.PARETO:
            if self.alpha is None or not self.alpha > self.d:
                raise DomainError(f"Pareto potential needs alpha > d (alpha={self.alpha}, d={self.d})")
        elif self.family is Family.WEIBULL:
            if self.gamma is None or not 0.0 < self.gamma <= 1.0:
                raise DomainError(f"Weibull potential needs 0 < gamma <= 1, got {self.gamma}")

    @property
    def shape(self) -> float:
        if self.family is Family.PARETO:
            return float(self.alpha)
        if self.family is Family.WEIBULL:
            return float(self.gamma)
        return 1.0

    @property
    def code(self) -> int:
        return _FAM_CODE[self.family]

    def with_seed(self, seed: int) -> "FieldSpec":
        return FieldSpec(self.family, self.d, self.alpha, self.gamma, seed)


@dataclass(frozen=True)
class LatticeSite:
    coords: tuple[int, ...]

    @property
    def norm1(self) -> int:
        return sum(abs(c) for c in self.coords)

    @property
    def d(self) -> int:
        return len(self.coords)


# ---------------------------------------------------------------- distribution


def inverse_cdf(spec: FieldSpec, u):
    """F^{-1}(u) for u in [0, 1)."""
    u_arr = np.asarray(u, dtype=np.float64)
    if np.any((u_arr < 0.0) | (u_arr >= 1.0) | np.isnan(u_arr)):
        raise DomainError("u must lie in [0, 1)")
    if spec.family is Family.PARETO:
        out = (1.0 - u_arr) ** (-1.0 / spec.alpha)
    else:
        e = -np.log1p(-u_arr)
        out = e ** (1.0 / spec.gamma) if spec.family is Family.WEIBULL else e
    return float(out) if np.ndim(u) == 0 else out


def cdf(spec: FieldSpec, x):
    return 1.0 - np.asarray(tail(spec, x)) if np.ndim(x) else 1.0 - tail(spec, x)


def tail(spec: FieldSpec, x):
    """F-bar(x) = P(xi > x); equals 1 below the support."""
    x_arr = np.asarray(x, dtype=np.float64)
    if spec.family is Family.PARETO:
        with np.errstate(divide="ignore", over="ignore"):
            out = np.where(x_arr <= 1.0, 1.0, np.abs(x_arr) ** (-spec.alpha))
    else:
        g = spec.gamma if spec.family is Family.WEIBULL else 1.0
        out = np.where(x_arr <= 0.0, 1.0, np.exp(-np.maximum(x_arr, 0.0) ** g))
    return float(out) if np.ndim(x) == 0 else out


def log_tail(spec: FieldSpec, x):
    """log F-bar(x), accurate far into the tail."""
    x_arr = np.asarray(x, dtype=np.float64)
    if spec.family is Family.PARETO:
        with np.errstate(divide="ignore"):
            out = np.where(x_arr <= 1.0, 0.0, -spec.alpha * np.log(np.maximum(x_arr, 1.0)))
    else:
        g = spec.gamma if spec.family is Family.WEIBULL else 1.0
        out = np.where(x_arr <= 0.0, 0.0, -np.maximum(x_arr, 0.0) ** g)
    return float(out) if np.ndim(x) == 0 else out


def tail_inverse_log(spec: FieldSpec, logp):
    """Smallest x with log F-bar(x) <= logp (logp <= 0)."""
    logp = np.minimum(np.asarray(logp, dtype=np.float64), 0.0)
    if spec.family is Family.PARETO:
        out = np.exp(-logp / spec.alpha)
    else:
        g = spec.gamma if spec.family is Family.WEIBULL else 1.0
        out = (-logp) ** (1.0 / g)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------- geometry


def ball_size(d: int, r: int) -> int:
    """Exact number of z in Z^d with |z|_1 <= r."""
    if d < 1 or r < 0:
        raise DomainError("ball_size needs d >= 1 and r >= 0")
    total = sum((1 << k) * comb(d, k) * comb(r, k) for k in range(min(d, r) + 1))
    if total > np.iinfo(np.int64).max:
        raise OverflowError(f"ball_size({d}, {r}) exceeds the 64-bit count range")
    return total


def shell_size(d: int, r: int) -> int:
    return 1 if r == 0 else ball_size(d, r) - ball_size(d, r - 1)


def ball_size_float(d: int, r) -> np.ndarray:
    """Ball sizes as floats, for radii beyond the integer range."""
    from scipy.special import binom

    r = np.asarray(r, dtype=np.float64)
    out = np.zeros_like(r)
    for k in range(d + 1):
        out = out + (2.0**k) * comb(d, k) * np.where(r >= k, binom(r, k), 0.0)
    return out


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def enumerate_shell(d: int, r: int) -> Iterator[LatticeSite]:
    """All sites with |z|_1 == r, in lexicographic order."""
    if d < 1 or r < 0:
        raise DomainError("enumerate_shell needs d >= 1 and r >= 0")
    yield from (LatticeSite(tuple(int(c) for c in row)) for row in shell_array(d, r))


def shell_array(d: int, r: int) -> np.ndarray:
    sites = set()
    for mags in _compositions(r, d):
        nz = [i for i, m in enumerate(mags) if m]
        for signs in itertools.product((-1, 1), repeat=len(nz)):
            z = list(mags)
            for i, s in zip(nz, signs):
                z[i] *= s
            sites.add(tuple(z))
    arr = np.array(sorted(sites), dtype=np.int64).reshape(-1, d)
    return arr


def ball_array(d: int, r: int) -> np.ndarray:
    """All sites of the ball of radius r, sorted by radius then lexicographically."""
    if r < 0:
        return np.empty((0, d), np.int64)
    grids = np.meshgrid(*([np.arange(-r, r + 1)] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)
    pts = pts[np.abs(pts).sum(axis=1) <= r]
    nrm = np.abs(pts).sum(axis=1)
    order = np.lexsort(tuple(pts[:, i] for i in reversed(range(d))) + (nrm,))
    return pts[order]


# ---------------------------------------------------------------- fields

SCORE_KINDS = {"xi": 0, "psi": 1, "psi_lower": 2}


@dataclass
class SearchResult:
    sites: np.ndarray
    values: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return self.scores.shape[0]


def _order(sites: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Descending score; ties by smaller radius then lexicographic coordinates."""
    d = sites.shape[1]
    keys = tuple(sites[:, i] for i in reversed(range(d))) + (np.abs(sites).sum(axis=1), -scores)
    return np.lexsort(keys)


class HashField:
    """The i.i.d. potential of a :class:`FieldSpec`, evaluated lazily."""

    def __init__(self, spec: FieldSpec, backend: str | None = None, max_nodes: int = DEFAULT_MAX_NODES):
        self.spec = spec
        self.d = spec.d
        self.W = 58 // spec.d
        self.coord_limit = 1 << (self.W - 1)
        self.key = mix64(spec.master_seed + GOLDEN)
        self.key2 = mix64(self.key + GOLDEN)
        self.backend = backend or backend_name()
        self._k = get_kernels(self.backend)
        self.max_nodes = max_nodes

    @property
    def max_radius(self) -> int:
        """Largest radius whose ball fits in the addressable coordinate range."""
        return self.coord_limit - 1

    def values(self, z) -> np.ndarray:
        z = np.ascontiguousarray(np.asarray(z, dtype=np.int64).reshape(-1, self.d))
        if z.size and (z.min() < -self.coord_limit or z.max() >= self.coord_limit):
            raise DomainError(f"coordinates must lie in [-2^{self.W - 1}, 2^{self.W - 1})")
        return self._k.site_values(
            z, self.d, self.W, np.uint64(self.key), np.uint64(self.key2), self.spec.code, self.spec.shape
        )

    def value(self, z) -> float:
        coords = z.coords if isinstance(z, LatticeSite) else z
        return float(self.values(np.asarray(coords, dtype=np.int64))[0])

    def search(self, kind: str, t: float = 1.0, rmin: int = 0, rmax: int | None = None, k: int = 0,
               threshold: float = -np.inf) -> SearchResult:
        """Sites in the radius window whose score is among the top ``k`` and/or >= ``threshold``.

        Results are sorted by descending score.
        """
        rmax = self.max_radius if rmax is None else int(rmax)
        if rmax > self.max_radius:
            raise DomainError(f"radius {rmax} exceeds the addressable range {self.max_radius}")
        if rmin > rmax:
            return SearchResult(np.empty((0, self.d), np.int64), np.empty(0), np.empty(0))
        status, sites, vals, sc = self._k.search(
            self.d, self.W, np.uint64(self.key), np.uint64(self.key2), self.spec.code, self.spec.shape,
            SCORE_KINDS[kind], float(t), np.int64(rmin), np.int64(rmax), int(k), float(threshold),
            int(self.max_nodes),
        )
        if status != 0:
            raise BudgetExceeded(f"branch-and-bound frontier exceeded {self.max_nodes} nodes")
        o = _order(sites, sc)
        if k > 0:
            o = o[:k]
        return SearchResult(sites[o], vals[o], sc[o])


class ExplicitField:
    """A deterministic potential given by a site -> value map plus a default."""

    def __init__(self, d: int, values: Mapping[tuple[int, ...], float], default: float = 0.0,
                 spec: FieldSpec | None = None):
        self.d = d
        self.map = {tuple(int(c) for c in k): float(v) for k, v in values.items()}
        for k in self.map:
            if len(k) != d:
                raise DomainError(f"site {k} does not have dimension {d}")
        self.default = float(default)
        self.spec = spec
        self.support_radius = max((sum(abs(c) for c in k) for k in self.map), default=0)

    def values(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.int64).reshape(-1, self.d)
        return np.array([self.map.get(tuple(int(c) for c in row), self.default) for row in z], dtype=np.float64)

    def value(self, z) -> float:
        coords = z.coords if isinstance(z, LatticeSite) else z
        return self.map.get(tuple(int(c) for c in coords), self.default)

    def search(self, kind: str, t: float = 1.0, rmin: int = 0, rmax: int | None = None, k: int = 0,
               threshold: float = -np.inf) -> SearchResult:
        if rmax is None:
            raise DomainError("explicit fields need a finite search radius")
        pts = ball_array(self.d, int(rmax))
        r = np.abs(pts).sum(axis=1)
        pts = pts[r >= rmin]
        r = r[r >= rmin]
        vals = self.values(pts)
        sc = get_kernels("numpy").score_of(SCORE_KINDS[kind], vals, r, float(t), self.d)
        o = _order(pts, sc)
        sel = o[sc[o] >= threshold]
        if k > 0:
            sel = sel[:k]
        return SearchResult(pts[sel], vals[sel], sc[sel])


def make_field(spec: FieldSpec, backend: str | None = None) -> HashField:
    return HashField(spec, backend=backend)


def site_value(spec: FieldSpec, z) -> float:
    """Potential at one site; a pure function of (spec, z)."""
    return HashField(spec).value(z)
