"""Scalings, limit-law constants, limit CDFs and the goodness-of-fit statistics."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import betaln, gammaln
from scipy.stats import kstwobign

from .field import DomainError, Family

EULER_GAMMA = 0.57721566490153286061
E_E = math.exp(math.e)


class DegenerateError(ValueError):
    pass


class Case(str, enum.Enum):
    PARETO = "pareto"
    WEIBULL = "weibull"


class Centering(str, enum.Enum):
    EXPANDED = "expanded"
    COMPACT = "compact"


class Target(str, enum.Enum):
    LEADING_PARETO = "leading_pareto"
    FOUR_TERM_WEIBULL = "four_term_weibull"
    SECOND_TERM_RATIO = "second_term_ratio"


def _case(case) -> Case:
    if isinstance(case, Family):
        case = case.value
    try:
        return Case(case)
    except ValueError:
        raise DomainError(f"no scaling theory for case {case!r}") from None


def _check(case: Case, d: int, shape: float) -> None:
    if d < 1:
        raise DomainError("d must be >= 1")
    if case is Case.PARETO and not shape > d:
        raise DomainError(f"Pareto needs alpha > d (got alpha={shape}, d={d})")
    if case is Case.WEIBULL and not 0 < shape < 1:
        raise DomainError(f"Weibull scaling needs 0 < gamma < 1 (got {shape})")


def theta(case, d: int, shape: float) -> float:
    """Limit-law constant; ``shape`` is alpha (Pareto) or gamma (Weibull)."""
    c = _case(case)
    _check(c, d, shape)
    if c is Case.PARETO:
        a = shape - d
        log_th = d * math.log(a) + d * math.log(2.0) + betaln(a, d) - d * math.log(d) - gammaln(d)
        return math.exp(log_th)
    return 2.0**d * d ** (d * (1.0 / shape - 1.0))


def q_rates(case, d: int, shape: float) -> tuple[float, float | None]:
    """(q, q_lower); q_lower is None for Pareto."""
    c = _case(case)
    _check(c, d, shape)
    if c is Case.PARETO:
        return d / (shape - d), None
    g = shape
    return d ** (1 - 1 / g) * (1 / g - 1), d ** (1 - 1 / g) / g


@dataclass(frozen=True)
class ScaleSet:
    case: Case
    d: int
    shape: float
    t: float
    a_t: float
    b_t: float
    c_t: float
    d_t: float
    r_t: float
    q: float
    q_lower: float | None
    theta: float
    centering: Centering = Centering.COMPACT

    @property
    def center(self) -> float:
        """Weibull centering used by the affine rescaling (a_t for Pareto)."""
        if self.case is Case.PARETO:
            return self.a_t
        if self.centering is Centering.EXPANDED:
            return self.a_t + self.b_t + self.c_t
        return (self.d * math.log(self.r_t)) ** (1 / self.shape)

    @property
    def scale(self) -> float:
        if self.case is Case.PARETO:
            return self.a_t
        if self.centering is Centering.EXPANDED:
            return self.d_t
        return (self.d * math.log(self.r_t)) ** (1 / self.shape - 1)


def scales(case, d: int, shape: float, t: float, centering=Centering.COMPACT) -> ScaleSet:
    c = _case(case)
    _check(c, d, shape)
    centering = Centering(centering)
    if c is Case.PARETO:
        if not t > 1:
            raise DomainError("Pareto scalings need t > 1")
        base = t / math.log(t)
        a_t = base ** (d / (shape - d))
        r_t = base ** (shape / (shape - d))
        return ScaleSet(c, d, shape, t, a_t, 0.0, 0.0, float("nan"), r_t, d / (shape - d), None,
                        theta(c, d, shape), centering)
    # c_t needs log log log t, defined from t = e^e on (allow one ulp of slack)
    if t < E_E * (1 - 1e-15):
        raise DomainError("Weibull scalings need t >= e^e")
    g = shape
    l1 = math.log(t)
    l2 = max(math.log(l1), 0.0)
    l3 = math.log(l2) if l2 > 0 else 0.0
    dl = d * l1
    a_t = dl ** (1 / g)
    d_t = dl ** (1 / g - 1)
    b_t = d * (1 / g**2 - 1 / g) * d_t * l2
    c_t = -(d / g) * d_t * l3
    r_t = t * l1 ** (1 / g - 1) / l2
    q, ql = q_rates(c, d, g)
    return ScaleSet(c, d, g, t, a_t, b_t, c_t, d_t, r_t, q, ql, theta(c, d, g), centering)


# ---------------------------------------------------------------- limit laws


@dataclass(frozen=True)
class LimitLaw:
    """Frechet: exp(-theta y^-shape) on y > 0.  Gumbel: exp(-theta e^{-rate y})."""

    family: str
    theta: float
    shape: float | None = None
    rate: float | None = None

    def __post_init__(self):
        if self.family not in ("frechet", "gumbel"):
            raise DomainError("family must be 'frechet' or 'gumbel'")
        if not self.theta > 0:
            raise DomainError("theta must be positive")
        if self.family == "frechet" and not (self.shape and self.shape > 0):
            raise DomainError("Frechet shape must be positive")
        if self.family == "gumbel" and not (self.rate and 0 < self.rate < 1):
            raise DomainError("Gumbel rate must lie in (0, 1)")

    @classmethod
    def frechet(cls, theta_: float, shape: float) -> "LimitLaw":
        return cls("frechet", theta_, shape=shape)

    @classmethod
    def gumbel(cls, theta_: float, rate: float) -> "LimitLaw":
        return cls("gumbel", theta_, rate=rate)

    @classmethod
    def for_case(cls, case, d: int, shape: float) -> "LimitLaw":
        c = _case(case)
        th = theta(c, d, shape)
        return cls.frechet(th, shape - d) if c is Case.PARETO else cls.gumbel(th, shape)

    def median(self) -> float:
        if self.family == "frechet":
            return (self.theta / math.log(2.0)) ** (1.0 / self.shape)
        return math.log(self.theta / math.log(2.0)) / self.rate


def limit_cdf(law: LimitLaw, y):
    y = np.asarray(y, dtype=np.float64)
    if law.family == "frechet":
        with np.errstate(divide="ignore", over="ignore"):
            out = np.where(y > 0, np.exp(-law.theta * np.where(y > 0, y, 1.0) ** (-law.shape)), 0.0)
    else:
        with np.errstate(over="ignore"):
            out = np.exp(-law.theta * np.exp(-law.rate * y))
    return float(out) if out.ndim == 0 else out


def rescale(statistic, s: ScaleSet, target):
    """Affine normalisation of a statistic at the scale set's t."""
    target = Target(target)
    x = np.asarray(statistic, dtype=np.float64)
    if target is Target.LEADING_PARETO:
        out = x / s.a_t
    elif target is Target.FOUR_TERM_WEIBULL:
        if s.case is not Case.WEIBULL:
            raise DomainError("four-term rescaling is for the Weibull case")
        out = (x - s.center) / s.scale
    else:
        if s.case is not Case.WEIBULL:
            raise DomainError("second-term ratio is for the Weibull case")
        out = (x - s.a_t) / (s.d_t * math.log(math.log(s.t)))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- statistics


def ks_distance(samples, cdf: Callable) -> float:
    """sup |ECDF - CDF| for any non-empty sample."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    f = np.asarray(cdf(x), dtype=np.float64)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def ks_test(samples, cdf: Callable) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov distance and its asymptotic p-value."""
    n = np.size(samples)
    if n < 5:
        raise ValueError("ks_test needs at least 5 samples")
    D = ks_distance(samples, cdf)
    return D, float(kstwobign.sf(D * math.sqrt(n)))


def fit_gumbel(samples) -> tuple[float, float]:
    """Method-of-moments Gumbel fit, returning (location, scale)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 20:
        raise ValueError("fit_gumbel needs at least 20 samples")
    sd = float(np.std(x, ddof=1))
    if not sd > 0:
        raise DegenerateError("samples have zero variance")
    scale = sd * math.sqrt(6.0) / math.pi
    return float(np.mean(x)) - EULER_GAMMA * scale, scale
