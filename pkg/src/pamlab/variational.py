"""The site functionals Psi_t, Psi-lower_t and the maxima N(t), N-lower(t)."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import gamma as gamma_fn, gammaincc

from .field import (
    BudgetExceeded,
    DomainError,
    ExplicitField,
    Family,
    FieldSpec,
    LatticeSite,
    ball_size_float,
    log_tail,
)


class Kind(str, enum.Enum):
    N = "N"
    N_LOWER = "NLower"


_SCORE = {Kind.N: "psi", Kind.N_LOWER: "psi_lower"}


def penalty(r, t: float, d: int):
    """(r/t) log(r / (2 d e t)), with value 0 at r = 0."""
    r_arr = np.asarray(r, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = (r_arr / t) * np.log(r_arr / (2.0 * d * math.e * t))
    p = np.where(r_arr > 0, p, 0.0)
    return float(p) if np.ndim(r) == 0 else p


def _coords(z) -> np.ndarray:
    return np.asarray(z.coords if isinstance(z, LatticeSite) else z, dtype=np.int64)


def psi(field, t: float, z) -> float:
    if t <= 0:
        raise DomainError("t must be positive")
    c = _coords(z)
    return field.value(c) - penalty(int(np.abs(c).sum()), t, field.d)


def psi_lower(field, t: float, z) -> float:
    if t <= 0:
        raise DomainError("t must be positive")
    c = _coords(z)
    x = field.value(c)
    return x - (int(np.abs(c).sum()) / t) * math.log(x) if x > 1.0 else x


# ---------------------------------------------------------------- thresholds


def lower_threshold(a, best):
    """Smallest potential value a site with penalty slope ``a = |z|/t`` needs for Psi-lower > best.

    For best >= 1 this is the root of x - a log x = best on [max(1, a), inf);
    below 1 the weak bound ``best`` itself is returned.
    """
    a = np.asarray(a, dtype=np.float64)
    best_arr = np.broadcast_to(np.asarray(best, dtype=np.float64), a.shape)
    lo = np.maximum(1.0, a)
    hi = np.maximum(2.0 * lo, best_arr + a * np.log(np.maximum(best_arr, 2.0)) + 1.0)
    g = lambda x: x - a * np.log(x) - best_arr  # noqa: E731
    while np.any(g(hi) < 0):
        hi = np.where(g(hi) < 0, 2.0 * hi, hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = g(mid) < 0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 1e-12 * hi):
            break
    out = np.where(best_arr >= 1.0, hi, best_arr)
    return float(out) if out.ndim == 0 else out


def _thresholds(kind: Kind, r, t: float, d: int, best: float):
    r = np.asarray(r, dtype=np.float64)
    if kind is Kind.N:
        return best + penalty(r, t, d)
    return lower_threshold(r / t, best)


def _shell_const(d: int) -> float:
    # |shell(r)| <= K r^{d-1} for r >= d
    return 2.0**d * 2.0 ** (d - 1) / math.factorial(d - 1)


def _remainder(spec: FieldSpec, kind: Kind, t: float, best: float, A: float) -> float:
    """Closed-form bound on sum_{r > A} |shell(r)| F-bar(x*(r))."""
    d = spec.d
    if kind is Kind.N:
        if best < 0 or A <= 2 * d * math.e * t:
            return math.inf
        slope = math.log(A / (2 * d * math.e * t)) / t
    else:
        if best < 1 or A <= math.e * t:
            return math.inf
        slope = math.log(A / t) / t
    K = _shell_const(d)
    if A < d:
        return math.inf
    if spec.family is Family.PARETO:
        a = spec.alpha
        return K * slope ** (-a) * A ** (d - a) / (a - d)
    g = spec.gamma if spec.family is Family.WEIBULL else 1.0
    x0 = (slope * A) ** g
    if d - 1 > g * x0:
        return math.inf
    return K * slope ** (-d) / g * gamma_fn(d / g) * gammaincc(d / g, x0)


def tail_miss_prob(spec: FieldSpec, t: float, kind, best: float, R: int, ratio: float = 1.02) -> float:
    """Rigorous upper bound on P(some site with |z| > R beats ``best``).

    Union bound over shells, with radii grouped into geometric blocks whose
    threshold is taken at the inner edge, followed by an integral bound.
    """
    kind = Kind(kind)
    d = spec.d
    if kind is Kind.N and R < math.ceil(2 * d * math.e * t):
        raise DomainError("R must cover the region where the penalty is negative")
    if not math.isfinite(best):
        raise DomainError("best must be finite")
    if kind is Kind.N_LOWER and best < 1.0:
        return 1.0
    total = 0.0
    A = float(R)
    for _ in range(4000):
        rem = _remainder(spec, kind, t, best, A)
        if rem <= 1e-300 or (math.isfinite(rem) and rem <= 1e-8 * total):
            return min(1.0, total + rem)
        if total >= 1.0:
            return 1.0
        # add the next batch of blocks
        stop = A * 2.0
        new = []
        a = A
        while a < stop:
            b = max(math.floor(a * ratio), a + 1.0)
            new.append(b)
            a = b
        lo = np.array([A] + new[:-1])
        hi = np.array(new)
        counts = ball_size_float(d, hi) - ball_size_float(d, lo)
        thr = _thresholds(kind, lo + 1.0, t, d, best)
        total += float(np.sum(counts * np.exp(log_tail(spec, thr))))
        A = float(hi[-1])
    raise RuntimeError("tail sum did not converge")


# ---------------------------------------------------------------- solve


@dataclass(frozen=True)
class TruncationPolicy:
    epsilon: float = 1e-6
    growth: float = 2.0
    eta: float = 0.5
    max_radius: int | None = None

    def __post_init__(self):
        if not 0 < self.epsilon <= 0.5:
            raise DomainError("epsilon must lie in (0, 0.5]")
        if not 0 < self.eta < 1:
            raise DomainError("eta must lie in (0, 1)")
        if self.growth <= 1:
            raise DomainError("growth must exceed 1")


@dataclass
class VariationalResult:
    kind: Kind
    t: float
    value: float
    argmax_site: LatticeSite
    argmax_radius: int
    scanned_radius: int
    miss_probability: float
    bonus_value: float | None = None

    @property
    def rform_value(self) -> float:
        """max over real r > 0 of the radius form; differs from ``value`` only when
        M_{floor(2dt)} + 2d exceeds every site score."""
        if self.bonus_value is None:
            return self.value
        return max(self.value, self.bonus_value)

    @property
    def bonus_dominates(self) -> bool:
        return self.bonus_value is not None and self.bonus_value > self.value


def _initial_radius(d: int, t: float) -> int:
    return max(math.ceil(2 * d * math.e * t), 16)


def _best(res):
    if len(res) == 0:
        return None
    return float(res.scores[0]), res.sites[0]


def solve_variational(field, t: float, kind, policy: TruncationPolicy | None = None) -> VariationalResult:
    """max_z Psi_t(z) (kind N) or max_z Psi-lower_t(z) (kind NLower) with a miss certificate."""
    kind = Kind(kind)
    policy = policy or TruncationPolicy()
    if t <= 0:
        raise DomainError("t must be positive")
    d = field.d
    score = _SCORE[kind]
    if isinstance(field, ExplicitField):
        return _solve_explicit(field, t, kind)
    cap = field.max_radius if policy.max_radius is None else min(policy.max_radius, field.max_radius)
    R = min(_initial_radius(d, t), cap)
    best, site = _best(field.search(score, t, 0, R, k=1))
    if kind is Kind.N_LOWER and best < 1.0:
        # sites with xi just below 1 occur at every scale, so the supremum is
        # at least 1; it is not attained and the scanned best is kept as witness
        best = 1.0
    while True:
        miss = tail_miss_prob(field.spec, t, kind, best, R)
        if miss <= policy.epsilon:
            break
        if R >= cap:
            partial = _result(field, kind, t, best, site, R, miss)
            raise BudgetExceeded(f"certificate {miss:.3g} > {policy.epsilon} at radius cap {cap}", partial)
        R_new = min(int(math.ceil(R * policy.growth)), cap)
        cand = _best(field.search(score, t, R + 1, R_new, k=1, threshold=best))
        if cand is not None and cand[0] > best:
            best, site = cand
        R = R_new
    return _result(field, kind, t, best, site, R, miss)


def _result(field, kind, t, best, site, R, miss) -> VariationalResult:
    bonus = None
    if kind is Kind.N:
        r2 = int(math.floor(2 * field.d * t))
        bonus = float(field.search("xi", t, 0, r2, k=1).values[0]) + 2.0 * field.d
    site_t = tuple(int(c) for c in site)
    return VariationalResult(kind, float(t), float(best), LatticeSite(site_t), int(np.abs(site).sum()), int(R),
                             float(miss), bonus)


def _solve_explicit(field: ExplicitField, t: float, kind: Kind) -> VariationalResult:
    d = field.d
    R = max(math.ceil(2 * d * math.e * t), field.support_radius + 1)
    res = field.search(_SCORE[kind], t, 0, R, k=1)
    best, site = float(res.scores[0]), res.sites[0]
    v0 = field.default
    if kind is Kind.N:
        outside = v0 - penalty(R + 1, t, d)
    else:
        outside = v0 - ((R + 1) / t) * math.log(v0) if v0 > 1 else v0
    miss = 1.0 if outside > best else 0.0
    return _result(field, kind, t, best, site, R, miss)


def trace(field, kind, t_grid, policy: TruncationPolicy | None = None) -> list[VariationalResult]:
    """Solutions along an increasing time grid for one frozen field.

    Each entry equals an independent solve; the branch-and-bound scan makes a
    fresh solve cheap, so no state is carried between times.
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if np.any(np.diff(t_grid) <= 0):
        raise DomainError("t_grid must be strictly increasing")
    return [solve_variational(field, float(t), kind, policy) for t in t_grid]


# ---------------------------------------------------------------- envelope curves for N, N-lower


def _maximize_over_r(fun, r_lo: float, r_hi: float) -> float:
    grid = np.geomspace(r_lo, r_hi, 4000)
    vals = fun(grid)
    j = int(np.nanargmax(vals))
    lo = grid[max(j - 1, 0)]
    hi = grid[min(j + 1, grid.size - 1)]
    if hi > lo:
        res = optimize.minimize_scalar(lambda r: -fun(np.array([r]))[0], bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-9 * hi})
        return float(max(vals[j], -res.fun))
    return float(vals[j])


def nlower_eventual_lower(t: float, d: int, gamma: float, c: float = 1.0, chat: float | None = None,
                          form: str = "variational") -> float:
    """Eventual lower envelope for N-lower(t) (Weibull potentials).

    ``form="leading"`` returns the two-term asymptotic expression without its
    o-term.  ``form="variational"`` maximises the radius form after replacing
    M_r by its eventual lower envelope and log M_r by gamma^{-1} log log r + chat.
    """
    L = math.log(t)
    if form == "leading":
        return (d * L) ** (1 / gamma) + (1 / gamma**2 - 1 / gamma) * d ** (1 / gamma) * L ** (1 / gamma - 1) * math.log(L)
    chat = (math.log(d) / gamma + 0.5) if chat is None else chat

    def f(r):
        l1 = np.log(r)
        l2 = np.log(l1)
        l3 = np.log(l2)
        m = (d * l1) ** (1 / gamma) - (1 / gamma + c) * (d * l1) ** (1 / gamma - 1) * l3
        return m - (r / (gamma * t)) * l2 - r * chat / t

    return _maximize_over_r(f, 16.0, max(1e3, t * L ** (1 / gamma) * 1e3))


def n_eventual_upper(t: float, d: int, gamma: float, delta: float = 0.5, form: str = "variational") -> float:
    """Eventual upper envelope for N(t) (Weibull potentials); see :func:`nlower_eventual_lower`."""
    L = math.log(t)
    if form == "leading":
        coef = (1 / gamma) * d ** (1 / gamma - 1) + (1 / gamma**2 - 1 / gamma) * d ** (1 / gamma)
        return (d * L) ** (1 / gamma) + coef * L ** (1 / gamma - 1) * math.log(L)

    def m_up(r):
        l1 = np.log(r)
        l2 = np.log(l1)
        return (d * l1) ** (1 / gamma) + (d * l1) ** (1 / gamma - 1) * l2 / gamma + l1 ** (1 / gamma - 1) * l2**delta

    def f(r):
        return m_up(r) - penalty(r, t, d)

    inner = float(m_up(np.array([16.0]))[0]) + 2.0 * d
    return max(inner, _maximize_over_r(f, 16.0, max(1e3, t * L ** (1 / gamma) * 1e3)))
