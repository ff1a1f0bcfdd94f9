"""Running maxima over 1-norm balls, order statistics and envelope curves."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import logsumexp

from .field import DomainError, ExplicitField, HashField, ball_size

ENVELOPE_MIN_ARG = 16


# ---------------------------------------------------------------- running maxima


@dataclass
class MaxSeries:
    """Record points of r -> M_r = max_{|z| <= r} xi(z).

    ``radii[j]`` is the radius where the j-th record appears, ``values[j]`` its
    value and ``sites[j]`` the site.  M_r is the last record at radius <= r.
    """

    field: HashField | ExplicitField
    frontier: int = 0
    radii: np.ndarray = dc_field(default_factory=lambda: np.zeros(0, np.int64))
    values: np.ndarray = dc_field(default_factory=lambda: np.zeros(0))
    sites: np.ndarray = dc_field(default_factory=lambda: np.zeros((0, 1), np.int64))

    @classmethod
    def start(cls, field, r: int = 0) -> "MaxSeries":
        d = field.d
        origin = np.zeros((1, d), np.int64)
        s = cls(field, 0, np.zeros(1, np.int64), field.values(origin).copy(), origin)
        return extend_max_series(s, r)

    def value_at(self, r):
        r = np.asarray(r)
        if np.any(r > self.frontier) or np.any(r < 0):
            raise DomainError(f"radius outside the covered range [0, {self.frontier}]")
        idx = np.searchsorted(self.radii, r, side="right") - 1
        out = self.values[idx]
        return float(out) if out.ndim == 0 else out

    def argmax_at(self, r: int) -> np.ndarray:
        idx = int(np.searchsorted(self.radii, r, side="right") - 1)
        return self.sites[idx]

    @property
    def current_max(self) -> float:
        return float(self.values[-1])


def extend_max_series(series: MaxSeries, r_new: int) -> MaxSeries:
    """Cover radii up to ``r_new``; equals a fresh computation from scratch."""
    if r_new < series.frontier:
        raise ValueError(f"r_new={r_new} is below the current frontier {series.frontier}")
    if r_new == series.frontier:
        return series
    floor = series.current_max
    f = series.field
    found_r, found_v, found_z = [], [], []
    cur = int(r_new)
    # walk the records of the annulus from the outside in
    while cur > series.frontier:
        res = f.search("xi", 1.0, series.frontier + 1, cur, k=1)
        if len(res) == 0 or res.values[0] <= floor:
            break
        z = res.sites[0]
        rz = int(np.abs(z).sum())
        found_r.append(rz)
        found_v.append(float(res.values[0]))
        found_z.append(z)
        cur = rz - 1
    if found_r:
        series.radii = np.concatenate([series.radii, np.array(found_r[::-1], np.int64)])
        series.values = np.concatenate([series.values, np.array(found_v[::-1])])
        series.sites = np.concatenate([series.sites, np.array(found_z[::-1], np.int64).reshape(-1, f.d)])
    series.frontier = int(r_new)
    return series


def max_in_ball(field, r: int) -> float:
    return float(field.search("xi", 1.0, 0, r, k=1).values[0])


# ---------------------------------------------------------------- order statistics


@dataclass
class OrderStats:
    n: int
    top: np.ndarray
    sites: np.ndarray
    rho1: float | None = None
    rho2: float | None = None

    @property
    def k_n(self) -> int | None:
        return None if self.rho1 is None else int(math.floor(self.n**self.rho1))

    @property
    def m_n(self) -> int | None:
        return None if self.rho2 is None else int(math.floor(self.n**self.rho2))


def order_stats(field, n: int, i_max: int, rho1: float | None = None, rho2: float | None = None) -> OrderStats:
    """The ``i_max + 1`` largest potential values in the ball of radius ``n``, descending."""
    if not 0 <= i_max < ball_size(field.d, n):
        raise ValueError(f"i_max must lie in [0, {ball_size(field.d, n) - 1}]")
    if rho1 is not None and rho2 is not None and not 0 < rho1 < rho2 < 1:
        raise ValueError("need 0 < rho1 < rho2 < 1")
    res = field.search("xi", 1.0, 0, n, k=i_max + 1)
    return OrderStats(n, res.values.copy(), res.sites.copy(), rho1, rho2)


def exp_order_stat_cdf(ell: int, k: int, x):
    """P(M^{(k)} <= x) for the (k+1)-th largest of ``ell`` i.i.d. Exp(1) variables.

    Equals sum_{i<=k} C(ell,i) e^{-xi} (1-e^{-x})^{ell-i}, evaluated in log space.
    """
    if ell < 1 or k < 0:
        raise ValueError("need ell >= 1 and k >= 0")
    x_arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if k >= ell:
        out = np.where(np.isnan(x_arr), np.nan, 1.0)
    else:
        i = np.arange(k + 1, dtype=np.float64)
        # log C(ell, i) by running sums: no cancellation between huge log-gammas
        steps = np.log((ell - i[1:] + 1.0) / i[1:])
        logc = np.concatenate([[0.0], np.cumsum(steps)])
        xs = np.maximum(x_arr, 0.0)[:, None]
        with np.errstate(divide="ignore"):
            # log(1 - e^{-x}), accurate at both ends; -inf at x = 0
            log_q = np.where(xs > math.log(2.0), np.log1p(-np.exp(-xs)), np.log(-np.expm1(-xs)))
        terms = logc[None, :] - xs * i[None, :] + (ell - i)[None, :] * log_q
        out = np.exp(np.minimum(logsumexp(terms, axis=1), 0.0))
        out = np.where(x_arr <= 0.0, 0.0, out)
    return float(out[0]) if np.ndim(x) == 0 else out


# ---------------------------------------------------------------- envelopes


class CurveCase(str, enum.Enum):
    PARETO_UPPER = "pareto_upper"  # eventual, parameter rho (> 0)
    PARETO_IO_LOWER = "pareto_io_lower"  # M_r >= ... infinitely often, parameter rho
    PARETO_LOWER = "pareto_lower"  # eventual, parameter c
    PARETO_IO_UPPER = "pareto_io_upper"  # M_r <= ... infinitely often, parameter c
    WEIBULL_UPPER = "weibull_upper"  # eventual, parameter delta in (0,1)
    WEIBULL_IO_UPPER = "weibull_io_upper"  # M_r >= ... infinitely often
    WEIBULL_LOWER = "weibull_lower"  # eventual, parameter c > 0
    WEIBULL_IO_LOWER = "weibull_io_lower"  # M_r <= ... infinitely often, parameter c


# curves that assert M_r <= curve (the others assert M_r >= curve)
_UPPER_DIRECTION = {
    CurveCase.PARETO_UPPER,
    CurveCase.PARETO_IO_UPPER,
    CurveCase.WEIBULL_UPPER,
    CurveCase.WEIBULL_IO_LOWER,
}
_EVENTUAL = {CurveCase.PARETO_UPPER, CurveCase.PARETO_LOWER, CurveCase.WEIBULL_UPPER, CurveCase.WEIBULL_LOWER}


@dataclass(frozen=True)
class EnvelopeCurve:
    case: CurveCase
    param: float = 0.0
    d: int = 1
    alpha: float | None = None
    gamma: float | None = None
    shift: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "case", CurveCase(self.case))
        pareto = self.case.value.startswith("pareto")
        if pareto and (self.alpha is None or self.alpha <= 0):
            raise DomainError("Pareto envelope needs alpha > 0")
        if not pareto and (self.gamma is None or not 0 < self.gamma <= 1):
            raise DomainError("Weibull envelope needs 0 < gamma <= 1")

    @property
    def bounds_from_above(self) -> bool:
        return self.case in _UPPER_DIRECTION

    @property
    def eventual(self) -> bool:
        return self.case in _EVENTUAL


def _iterated_logs(r):
    r = np.asarray(r, dtype=np.float64)
    l1 = np.log(r)
    l2 = np.log(l1)
    l3 = np.log(l2)
    return l1, l2, l3


def envelope(curve: EnvelopeCurve, r):
    """Evaluate an envelope curve at r >= 16 (scalar or array)."""
    r_arr = np.asarray(r, dtype=np.float64)
    if np.any(r_arr < ENVELOPE_MIN_ARG):
        raise DomainError("envelope curves are defined for r >= 16")
    l1, l2, l3 = _iterated_logs(r_arr)
    c, d = curve.case, curve.d
    p = curve.param
    if c in (CurveCase.PARETO_UPPER, CurveCase.PARETO_IO_LOWER):
        a = curve.alpha
        expo = 1.0 / a + (p if c is CurveCase.PARETO_UPPER else -p)
        out = r_arr ** (d / a) * l1 ** (1 / a) * l2 ** (1 / a) * l3**expo
    elif c in (CurveCase.PARETO_LOWER, CurveCase.PARETO_IO_UPPER):
        a = curve.alpha
        out = p * r_arr ** (d / a) * l2 ** (-1 / a)
    else:
        g = curve.gamma
        base = (d * l1) ** (1 / g)
        sub = (d * l1) ** (1 / g - 1)
        if c is CurveCase.WEIBULL_UPPER:
            out = base + sub * l2 / g + l1 ** (1 / g - 1) * l2**p
        elif c is CurveCase.WEIBULL_IO_UPPER:
            out = base + sub * l2 / g
        elif c is CurveCase.WEIBULL_LOWER:
            out = base - (1 / g + p) * sub * l3
        else:
            out = base - (1 / g - p) * sub * l3
    out = out + curve.shift
    return float(out) if np.ndim(r) == 0 else out


def envelope_violation_fraction(field, curve: EnvelopeCurve, r_lo: int, r_hi: int,
                                series: MaxSeries | None = None) -> float:
    """Fraction of integer radii in [r_lo, r_hi] where M_r breaks the curve's inequality."""
    if not ENVELOPE_MIN_ARG <= r_lo < r_hi:
        raise DomainError("need 16 <= r_lo < r_hi")
    if series is None or series.frontier < r_hi:
        series = extend_max_series(series or MaxSeries.start(field), r_hi)
    r = np.arange(r_lo, r_hi + 1)
    m = series.value_at(r)
    env = envelope(curve, r)
    bad = m > env if curve.bounds_from_above else m < env
    return float(np.mean(bad))


# curves whose value is affine in the parameter c
FITTABLE = (CurveCase.PARETO_LOWER, CurveCase.PARETO_IO_UPPER, CurveCase.WEIBULL_LOWER, CurveCase.WEIBULL_IO_LOWER)


def sharpest_constant(field, case, r_lo: int, r_hi: int, series: MaxSeries | None = None,
                      tolerance: float = 0.01) -> float:
    """Sharpest curve constant c that works on the radius window [r_lo, r_hi].

    An eventual curve works if it fails on at most ``tolerance`` of the radii;
    an infinitely-often curve works if it holds at least once.  "Sharpest"
    means the working value closest to violation: the largest c for lower
    eventual Pareto bounds, the smallest c otherwise.
    """
    case = CurveCase(case)
    if case not in FITTABLE:
        raise DomainError(f"{case.value} has no free multiplicative or additive constant")
    if not ENVELOPE_MIN_ARG <= r_lo < r_hi:
        raise DomainError("need 16 <= r_lo < r_hi")
    if series is None or series.frontier < r_hi:
        series = extend_max_series(series or MaxSeries.start(field), r_hi)
    spec = field.spec
    kw = dict(d=field.d, alpha=spec.alpha, gamma=spec.gamma if spec.gamma is not None else 1.0)
    r = np.arange(r_lo, r_hi + 1)
    m = series.value_at(r)
    one, two = EnvelopeCurve(case, 1.0, **kw), EnvelopeCurve(case, 2.0, **kw)
    slope = envelope(two, r) - envelope(one, r)
    icpt = envelope(one, r) - slope
    crit = (m - icpt) / slope  # the curve passes through M_r at c = crit
    # holds iff c >= crit when raising c loosens the bound, else iff c <= crit
    loosens_up = bool(np.all(slope > 0)) == one.bounds_from_above
    if one.eventual:
        q = 1.0 - tolerance if loosens_up else tolerance
        c = float(np.quantile(crit, q, method="higher" if loosens_up else "lower"))
    else:
        c = float(crit.min() if loosens_up else crit.max())
    # step past rounding in the reconstructed curve, towards the lenient side
    nudge = 1e-9 * max(1.0, abs(c))
    return c + nudge if loosens_up else c - nudge
