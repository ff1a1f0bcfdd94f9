"""Exceedance point patterns, their limiting Poisson intensities and Poissonity tests.

Regions are floors ``y >= tau`` (optionally capped at ``y_hi``) intersected
with 1-norm windows ``x_lo <= |x| < x_hi``.  Radial integrals use
``Leb{x : |x|_1 in ds} = 2^d s^{d-1} / (d-1)! ds``.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.special import betainc, betaln, gammainc
from scipy.stats import chi2 as chi2_dist

from .field import BudgetExceeded, DomainError, ExplicitField, Family
from .limits import Centering, q_rates, scales
from .variational import Kind, TruncationPolicy, _initial_radius, tail_miss_prob


class PrecisionError(ArithmeticError):
    pass


class DivergenceError(ValueError):
    pass


class PatternKind(str, enum.Enum):
    PSI = "psi"
    PSI_LOWER = "psi_lower"
    RAW = "raw"


class ModelKind(str, enum.Enum):
    MU_PARETO = "mu_pareto"
    MU_WEIBULL = "mu_weibull"
    NU_PARETO = "nu_pareto"
    NU_WEIBULL = "nu_weibull"
    NU_LOWER_WEIBULL = "nu_lower_weibull"


@dataclass(frozen=True)
class IntensityModel:
    kind: ModelKind
    d: int = 1
    alpha: float | None = None
    gamma: float | None = None
    q: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        k = self.kind
        if k in (ModelKind.MU_PARETO, ModelKind.NU_PARETO) and not (self.alpha and self.alpha > 0):
            raise DomainError("Pareto intensity needs alpha > 0")
        if k in (ModelKind.MU_WEIBULL, ModelKind.NU_WEIBULL, ModelKind.NU_LOWER_WEIBULL) and not (
                self.gamma and self.gamma > 0):
            raise DomainError("Weibull intensity needs gamma > 0")
        if k is ModelKind.NU_PARETO and not self.alpha > self.d:
            raise DomainError("NuPareto needs alpha > d")
        if k.value.startswith("nu") and self.q is None:
            object.__setattr__(self, "q", self.default_q())
        if k.value.startswith("nu") and not self.q > 0:
            raise DomainError("q must be positive")

    def default_q(self) -> float:
        if self.kind is ModelKind.NU_PARETO:
            return q_rates("pareto", self.d, self.alpha)[0]
        q, ql = q_rates("weibull", self.d, self.gamma)
        return ql if self.kind is ModelKind.NU_LOWER_WEIBULL else q

    @property
    def has_space(self) -> bool:
        return self.kind.value.startswith("nu")

    def density(self, s, y):
        """Density in (radius s, mark y); for mu-models ``s`` is ignored."""
        k = self.kind
        y = np.asarray(y, dtype=np.float64)
        s = np.asarray(s, dtype=np.float64)
        if k is ModelKind.MU_PARETO:
            return np.where(y > 0, self.alpha * np.where(y > 0, y, 1.0) ** (-self.alpha - 1), 0.0)
        if k is ModelKind.MU_WEIBULL:
            return self.gamma * np.exp(-self.gamma * y)
        if k is ModelKind.NU_PARETO:
            u = y + self.q * s
            with np.errstate(over="ignore"):
                return np.where(y > 0, self.alpha * np.where(u > 0, u, 1.0) ** (-self.alpha - 1), 0.0)
        return self.gamma * np.exp(-self.gamma * (y + self.q * s))


@dataclass(frozen=True)
class Region:
    floor: float = 0.0
    x_lo: float = 0.0
    x_hi: float = math.inf
    y_hi: float = math.inf

    def __post_init__(self):
        if math.isnan(self.floor) or self.x_lo < 0 or self.x_hi < self.x_lo or self.y_hi < self.floor:
            raise DomainError("invalid region")

    @property
    def empty(self) -> bool:
        return self.x_hi == self.x_lo or self.y_hi == self.floor


def _shell_factor(d: int) -> float:
    return 2.0**d / math.factorial(d - 1)


def _ball_volume(d: int, w: float) -> float:
    return 2.0**d * w**d / math.factorial(d)


# ---------------------------------------------------------------- closed forms


def _mu_mass(m: IntensityModel, lo: float, hi: float) -> float:
    if m.kind is ModelKind.MU_PARETO:
        lo = max(lo, 0.0)
        if lo == 0.0:
            raise DivergenceError("Pareto mark measure is infinite near 0")
        return lo ** (-m.alpha) - (0.0 if math.isinf(hi) else hi ** (-m.alpha))
    g = m.gamma
    return math.exp(-g * lo) - (0.0 if math.isinf(hi) else math.exp(-g * hi))


def _nu_floor_mass(m: IntensityModel, tau: float, x_lo: float, x_hi: float) -> float:
    """Mass of {y >= tau} x {x_lo <= |x| < x_hi}."""
    d, q = m.d, m.q
    if m.kind is ModelKind.NU_PARETO:
        a = m.alpha
        if tau <= 0:
            if x_lo == 0:
                raise DivergenceError("Pareto intensity with floor <= 0 is infinite near x = 0")
            # integral of s^{d-1} (q s)^{-a} over the window
            hi_term = 0.0 if math.isinf(x_hi) else x_hi ** (d - a)
            return _shell_factor(d) * q ** (-a) * (x_lo ** (d - a) - hi_term) / (a - d)
        # s^{d-1} (tau + q s)^{-a}: incomplete beta in u = q s / (tau + q s)
        def cum(w):
            if math.isinf(w):
                return 1.0
            return float(betainc(d, a - d, q * w / (tau + q * w)))
        full = math.exp(math.log(_shell_factor(d)) + (d - a) * math.log(tau) - d * math.log(q) + betaln(d, a - d))
        return full * (cum(x_hi) - cum(x_lo))
    g = m.gamma

    def cum(w):
        return 1.0 if math.isinf(w) else float(gammainc(d, g * q * w))

    return math.exp(-g * tau) * (2.0 / (g * q)) ** d * (cum(x_hi) - cum(x_lo))


def intensity_mass(model: IntensityModel, region: Region = Region()) -> float:
    """Expected number of points of the Poisson limit in ``region``."""
    if region.empty:
        return 0.0
    if not model.has_space:
        mass = _mu_mass(model, region.floor, region.y_hi)
        if math.isinf(region.x_hi):
            raise DivergenceError("mark-only intensity over an unbounded window is infinite")
        return (_ball_volume(model.d, region.x_hi) - _ball_volume(model.d, region.x_lo)) * mass
    out = _nu_floor_mass(model, region.floor, region.x_lo, region.x_hi)
    if not math.isinf(region.y_hi):
        out -= _nu_floor_mass(model, region.y_hi, region.x_lo, region.x_hi)
    return out


# ---------------------------------------------------------------- quadrature oracle


def quadrature_oracle(model: IntensityModel, region: Region = Region(), tol: float = 1e-8) -> tuple[float, float]:
    """Adaptive quadrature over the region: (value, error bound).

    The mark is integrated by its antiderivative; the radial integral is
    numeric, so this checks the closed forms' spatial part independently.
    """
    if region.empty:
        return 0.0, 0.0
    opts = dict(epsabs=tol * 1e-3, epsrel=1e-12, limit=400)
    lo = region.floor
    if model.kind in (ModelKind.MU_PARETO, ModelKind.NU_PARETO):
        lo = max(lo, 0.0)
    if not model.has_space:
        if math.isinf(region.x_hi):
            raise DivergenceError("mark-only intensity over an unbounded window is infinite")
        val, err = integrate.quad(lambda y: float(model.density(0.0, y)), lo, region.y_hi, **opts)
        vol = _ball_volume(model.d, region.x_hi) - _ball_volume(model.d, region.x_lo)
        return vol * val, vol * err
    d = model.d

    def mark_tail(s, y):
        if math.isinf(y):
            return 0.0
        if model.kind is ModelKind.NU_PARETO:
            u = y + model.q * s
            return u ** (-model.alpha) if u > 0 else math.inf
        return math.exp(-model.gamma * (y + model.q * s))

    def radial(s):
        return _shell_factor(d) * s ** (d - 1) * (mark_tail(s, lo) - mark_tail(s, region.y_hi))

    # split the radial range geometrically around the density's natural scale
    if model.kind is ModelKind.NU_PARETO:
        scale = max(lo, 1e-3) / model.q
    else:
        scale = 1.0 / (model.q * model.gamma)
    knots = [region.x_lo]
    for k in range(-2, 9):
        if region.x_lo < scale * 10.0**k < region.x_hi:
            knots.append(scale * 10.0**k)
    knots.append(region.x_hi)
    total, err = 0.0, 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        if math.isinf(b) and a > 0:
            # s = a / v maps the unbounded tail onto (0, 1]
            v, e = integrate.quad(lambda v: radial(a / v) * a / (v * v) if v > 0 else 0.0, 0.0, 1.0, **opts)
        else:
            v, e = integrate.quad(radial, a, b, **opts)
        total += v
        err += e
    if not math.isfinite(total) or err > tol:
        raise PrecisionError(f"quadrature error bound {err:.3g} exceeds {tol}")
    return total, err


def band_edges(model: IntensityModel, floor: float, n_bands: int, x_max: float = math.inf) -> np.ndarray:
    """|x| edges splitting the floor mass into ``n_bands`` equal parts."""
    from scipy.optimize import brentq

    total = intensity_mass(model, Region(floor, 0.0, x_max))
    edges = [0.0]
    for j in range(1, n_bands):
        target = total * j / n_bands
        hi = 1.0
        while intensity_mass(model, Region(floor, 0.0, hi)) < target:
            hi *= 2.0
        edges.append(brentq(lambda w: intensity_mass(model, Region(floor, 0.0, w)) - target, 0.0, hi,
                            xtol=1e-14, rtol=1e-14))
    edges.append(x_max)
    return np.array(edges)


# ---------------------------------------------------------------- patterns


@dataclass
class PointPattern:
    t: float
    kind: PatternKind
    floor: float
    x: np.ndarray
    y: np.ndarray
    sites: np.ndarray
    scan_radius: int
    miss_probability: float

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def counts(self, edges) -> np.ndarray:
        """Point counts per 1-norm band [edges[j], edges[j+1])."""
        r = np.abs(self.x).sum(axis=1)
        return np.histogram(r, bins=np.asarray(edges, dtype=np.float64))[0]

    def to_csv(self, path) -> None:
        d = self.x.shape[1]
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{i + 1}" for i in range(d)] + ["y"])
            for xi, yi in zip(self.x, self.y):
                w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


def pattern_scales(spec, t: float, centering=Centering.COMPACT):
    """(r_t, center, scale) so that y = (score - center) / scale."""
    fam = spec.family
    if fam is Family.PARETO:
        s = scales("pareto", spec.d, spec.alpha, t)
        return s.r_t, 0.0, s.a_t
    if fam is Family.WEIBULL:
        s = scales("weibull", spec.d, spec.gamma, t, centering)
        return s.r_t, s.center, s.scale
    raise DomainError("patterns need a Pareto or Weibull field")


def _certified_radius(spec, t, kind: Kind, thr: float, eps: float, cap: int) -> tuple[int, float]:
    R = min(_initial_radius(spec.d, t), cap)
    while True:
        miss = tail_miss_prob(spec, t, kind, thr, R)
        if miss <= eps:
            return R, miss
        if R >= cap:
            raise BudgetExceeded(f"scan radius cap {cap} reached with miss {miss:.3g}")
        R = min(2 * R, cap)


def build_pattern(field, t: float, kind=PatternKind.PSI, floor: float = 0.0,
                  policy: TruncationPolicy | None = None, centering=Centering.COMPACT,
                  x_max: float = 1.0) -> PointPattern:
    """All sites whose rescaled exceedance is at least ``floor``.

    PSI / PSI_LOWER patterns use time ``t``; RAW treats ``t`` as the radius
    r, rescales xi itself and is restricted to |x| <= ``x_max``.
    """
    kind = PatternKind(kind)
    policy = policy or TruncationPolicy()
    if not math.isfinite(floor):
        raise DomainError("floor must be finite")
    spec = field.spec
    if spec is None:
        raise DomainError("patterns need a field with a distribution spec")
    d = spec.d
    if kind is PatternKind.RAW:
        r = float(t)
        if spec.family is Family.PARETO:
            center, scale = 0.0, r ** (d / spec.alpha)
        elif spec.family is Family.WEIBULL:
            center = (d * math.log(r)) ** (1 / spec.gamma)
            scale = (d * math.log(r)) ** (1 / spec.gamma - 1)
        else:
            raise DomainError("patterns need a Pareto or Weibull field")
        R = int(math.floor(r * x_max))
        res = field.search("xi", 1.0, 0, R, threshold=center + floor * scale)
        y = (res.values - center) / scale
        return PointPattern(t, kind, floor, res.sites / r, y, res.sites, R, 0.0)
    r_t, center, scale = pattern_scales(spec, t, centering)
    if spec.family is Family.PARETO and floor <= 0:
        # the y > 0 convention: every positive exceedance counts
        floor = 0.0
    thr = center + floor * scale
    vkind = Kind.N if kind is PatternKind.PSI else Kind.N_LOWER
    if isinstance(field, ExplicitField):
        # past 2det the penalty is nonnegative, so default sites score at most the default
        if not thr > field.default:
            raise DivergenceError("threshold at or below the default value gives an infinite pattern")
        R, miss = max(field.support_radius, math.ceil(2 * d * math.e * t)), 0.0
    else:
        cap = field.max_radius if policy.max_radius is None else min(policy.max_radius, field.max_radius)
        R, miss = _certified_radius(spec, t, vkind, thr, policy.epsilon, cap)
    res = field.search(kind.value, t, 0, R, threshold=thr)
    y = (res.scores - center) / scale
    keep = y >= floor
    if spec.family is Family.PARETO:
        keep &= y > 0
    return PointPattern(t, kind, floor, res.sites[keep] / r_t, y[keep], res.sites[keep], R, miss)


# ---------------------------------------------------------------- goodness of fit


@dataclass(frozen=True)
class GofResult:
    chi2: float
    p: float
    dispersion: float
    dof: int


def _pool(obs: np.ndarray, exp: np.ndarray, min_expected: float):
    """Merge adjacent cells until every expected count reaches ``min_expected``."""
    po, pe = [], []
    co, ce = 0.0, 0.0
    for o, e in zip(obs, exp):
        co += o
        ce += e
        if ce >= min_expected:
            po.append(co)
            pe.append(ce)
            co, ce = 0.0, 0.0
    if ce > 0 or co > 0:
        if pe:
            po[-1] += co
            pe[-1] += ce
        else:
            po.append(co)
            pe.append(ce)
    return np.array(po), np.array(pe)


def poisson_gof(counts, expected, pool: bool = True, min_expected: float = 1.0) -> GofResult:
    """Chi-square test of counts against Poisson means.

    ``counts`` is (regions,) or (replicates, regions); ``expected`` holds the
    per-replicate means.  The test uses totals over replicates; the dispersion
    index is var/mean of the per-replicate totals (nan for one replicate).
    """
    c = np.asarray(counts, dtype=np.float64)
    e = np.asarray(expected, dtype=np.float64)
    if c.ndim == 1:
        c = c[None, :]
    if c.ndim != 2 or e.ndim != 1 or c.shape[1] != e.shape[0]:
        raise ValueError("counts must be (replicates, regions) matching expected (regions,)")
    if e.shape[0] < 5:
        raise ValueError("poisson_gof needs at least 5 regions")
    if np.any(e < 0) or not np.all(np.isfinite(e)) or np.any(c < 0):
        raise ValueError("expected counts must be finite and nonnegative")
    n_rep = c.shape[0]
    obs = c.sum(axis=0)
    exp = e * n_rep
    totals = c.sum(axis=1)
    if n_rep > 1 and totals.mean() > 0:
        disp = float(totals.var(ddof=1) / totals.mean())
    else:
        disp = float("nan")
    if np.all(exp == 0):
        if np.any(obs > 0):
            raise ValueError("observed points where every expectation is zero")
        return GofResult(0.0, 1.0, disp, 0)
    if pool:
        obs, exp = _pool(obs, exp, min_expected)
    if np.any(exp < min_expected):
        raise ValueError(f"expected counts below {min_expected} after pooling")
    stat = float(np.sum((obs - exp) ** 2 / exp))
    dof = int(exp.shape[0])
    return GofResult(stat, float(chi2_dist.sf(stat, dof)), disp, dof)
