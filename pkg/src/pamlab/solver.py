"""Total mass of the lattice heat equation with potential.

* :func:`solve_ode` integrates u' = Laplacian u + xi u on a 1-norm ball with
  zero exterior values (Strang splitting, Romberg extrapolation in the step).
* :func:`dense_oracle` exponentiates the same generator densely.
* :func:`fk_lower` / :func:`fk_upper` are per-sample certified bounds on
  log U(t) built from single-site strategies and the jump-count expansion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.special import gammainc, gammaln, logsumexp

from ._backend import backend_name, get_kernels
from .extremes import MaxSeries, extend_max_series
from .field import BudgetExceeded, DomainError, ExplicitField, ball_array, ball_size, ball_size_float, tail_inverse_log
from .variational import Kind, TruncationPolicy, solve_variational

DENSE_MAX_SITES = 2000
ODE_MAX_SITES = 5_000_000
TAYLOR_DEGREE = 16


class NumericalError(ArithmeticError):
    pass


@dataclass
class SolveResult:
    t: float
    log_mass: float
    L: float
    box_radius: int
    step_count: int
    renorm_log_sum: float
    leak_flag: bool
    error_estimate: float = 0.0


@dataclass
class FKBounds:
    t: float
    lower_log: float | None = None
    upper_log: float | None = None
    lower_witness: tuple | None = None
    upper_cutoff: int | None = None
    jump_rate: float = 0.0
    epsilon: float = 0.0


# ---------------------------------------------------------------- box geometry


def _box(d: int, R: int):
    sites = ball_array(d, R)
    n = sites.shape[0]
    side = 2 * R + 3  # one layer of padding so neighbours never wrap
    strides = side ** np.arange(d)
    flat = ((sites + R + 1) * strides).sum(axis=1)
    lookup = np.full(side**d, -1, dtype=np.int64)
    lookup[flat] = np.arange(n)
    nbr = np.empty((n, 2 * d), dtype=np.int64)
    for i in range(d):
        nbr[:, 2 * i] = lookup[flat + strides[i]]
        nbr[:, 2 * i + 1] = lookup[flat - strides[i]]
    origin = int(lookup[((np.zeros(d, np.int64) + R + 1) * strides).sum()])
    return sites, nbr, origin


def _log_mass_fixed(xi_shift, nbr, radius, origin, t, nsteps, kern):
    """Returns (log mass, per-site log u) after ``nsteps`` steps."""
    n = xi_shift.shape[0]
    m = np.zeros(n)
    m[origin] = 1.0
    if t == 0:
        return 0.0, np.where(m > 0, 0.0, -np.inf)
    h = t / nsteps
    d2 = nbr.shape[1]
    nsub = max(1, math.ceil(h * 2 * d2))  # internal step <= 1/(4d)
    # initial scales: free-walk amplitude after one step, so first arrivals are O(1)
    c = radius * math.log(h) - gammaln(radius + 1.0)
    c[origin] = 0.0
    status = kern.strang_steps(m, c, xi_shift, np.ascontiguousarray(nbr), h, nsteps, nsub, TAYLOR_DEGREE)
    if not math.isfinite(status):
        raise NumericalError("non-finite value during integration")
    with np.errstate(divide="ignore"):
        logu = np.where(m > 0, c + np.log(m), -np.inf)
    return float(logsumexp(logu)), logu


def solve_ode(field, t: float, box_radius: int, tol: float = 1e-10, max_levels: int = 12,
              backend: str | None = None) -> SolveResult:
    """log U(t) on the ball of radius ``box_radius`` with zero exterior values.

    The step is halved until the extrapolated value changes by less than
    ``tol * max(1, |log U|)``.
    """
    if box_radius < 1:
        raise DomainError("box_radius must be >= 1")
    if tol <= 0:
        raise DomainError("tol must be positive")
    d = field.d
    if ball_size(d, box_radius) > ODE_MAX_SITES:
        raise MemoryError(f"box of radius {box_radius} exceeds {ODE_MAX_SITES} sites")
    kern = get_kernels(backend or backend_name())
    sites, nbr, origin = _box(d, box_radius)
    xi = field.values(sites)
    shift = float(xi.max())
    xi_shift = xi - shift
    spread = float(shift - xi.min())
    n0 = max(4, math.ceil(t * max(1.0, spread, 2.0 * d)))
    table: list[list[float]] = []
    steps_total = 0
    last = None
    renorm = 0.0
    err = math.inf
    best = (math.inf, None, None)  # (err, value, state) at the smallest change seen
    stalls = 0
    u = None
    radius = np.abs(sites).sum(axis=1).astype(np.float64)
    for k in range(max_levels):
        n = n0 * 2**k
        val, u = _log_mass_fixed(xi_shift, nbr, radius, origin, t, n, kern)
        steps_total += n
        row = [val]
        for j in range(1, k + 1):
            row.append(row[j - 1] + (row[j - 1] - table[k - 1][j - 1]) / (4.0**j - 1.0))
        table.append(row)
        renorm = val
        if k >= 1:
            err = abs(row[-1] - table[k - 1][-1])
            last = row[-1]
            if err < tol * max(1.0, abs(row[-1] + t * shift)):
                break
            # accumulated rounding sets a floor;
            # once refinement stops helping, keep the most stable estimate
            if err < best[0]:
                best, stalls = (err, last, u), 0
            elif k >= 3:
                stalls += 1
                if stalls >= 2:
                    err, last, u = best
                    break
        else:
            last = row[-1]
    else:
        raise NumericalError(f"extrapolation did not reach tol={tol} (last change {err:.3g})")
    log_mass = last + t * shift
    boundary = radius == box_radius
    leak = bool(logsumexp(u[boundary]) > math.log(1e-12) + logsumexp(u))
    return SolveResult(float(t), float(log_mass), float(log_mass / t) if t > 0 else 0.0, int(box_radius),
                       steps_total, float(renorm), leak, float(err))


def solve_ode_converged(field, t: float, box_radius: int, tol: float = 1e-10, box_tol: float = 1e-9,
                        max_doublings: int = 6) -> SolveResult:
    """Double the box until log U(t) moves by less than ``box_tol``."""
    prev = solve_ode(field, t, box_radius, tol)
    for _ in range(max_doublings):
        nxt = solve_ode(field, t, 2 * prev.box_radius, tol)
        # changes below the solvers' own error estimates cannot be resolved
        if abs(nxt.log_mass - prev.log_mass) < max(box_tol, 2.0 * (prev.error_estimate + nxt.error_estimate)):
            nxt.leak_flag = False
            return nxt
        prev = nxt
    prev.leak_flag = True
    return prev


def dense_oracle(field, t: float, box_radius: int) -> float:
    """log U(t) on the ball via a dense matrix exponential of the shifted generator."""
    d = field.d
    if ball_size(d, box_radius) > DENSE_MAX_SITES:
        raise DomainError(f"dense oracle limited to {DENSE_MAX_SITES} sites")
    if t == 0:
        return 0.0
    sites, nbr, origin = _box(d, box_radius)
    n = sites.shape[0]
    xi = field.values(sites)
    s = float(xi.max())
    A = np.zeros((n, n))
    rows = np.repeat(np.arange(n), 2 * d)
    cols = nbr.ravel()
    ok = cols >= 0
    A[rows[ok], cols[ok]] = 1.0
    A[np.arange(n), np.arange(n)] = xi - s - 2.0 * d
    E = expm(t * A)
    return t * s + math.log(E[:, origin].sum())


# ---------------------------------------------------------------- Feynman-Kac bounds


def strategy_log_bound(xi, r, t: float, d: int):
    """log of e^{t(1-rho) xi} e^{-2dt} (rho t)^r / r! at rho = clip(r / (t xi))."""
    xi = np.asarray(xi, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(xi > 0, r / (t * xi), 1.0)
    rho = np.clip(rho, 1e-12, 1.0 - 1e-12)
    val = t * (1.0 - rho) * xi - 2.0 * d * t + r * np.log(rho * t) - gammaln(r + 1.0)
    val = np.where(r == 0, t * xi - 2.0 * d * t, val)
    return val, np.where(r == 0, 0.0, rho)


def fk_lower(field, t: float, box_radius: int | None = None, policy: TruncationPolicy | None = None) -> FKBounds:
    """Best single-site strategy lower bound on log U(t).

    With ``box_radius`` the candidates are the sites of that ball and the bound
    is valid for the Dirichlet problem on it.  Otherwise the candidates are
    all sites that can beat the running best inside the certified radius of
    N-lower(t), using f/t + 2d <= max(Psi-lower, 1 + 1/e).
    """
    if t <= 0:
        raise DomainError("t must be positive")
    d = field.d
    if box_radius is not None:
        sites = ball_array(d, box_radius)
        xi = field.values(sites)
    else:
        nl = solve_variational(field, t, Kind.N_LOWER, policy)
        R = nl.scanned_radius
        cand = field.search("psi_lower", t, 0, R, k=64)
        sites, xi = cand.sites, cand.values
        f, _ = strategy_log_bound(xi, np.abs(sites).sum(axis=1), t, d)
        thr = float(f.max()) / t + 2.0 * d
        if thr > 1.0 + 1.0 / math.e:
            more = field.search("psi_lower", t, 0, R, threshold=thr)
            sites = np.concatenate([sites, more.sites])
            xi = np.concatenate([xi, more.values])
        elif ball_size(d, R) <= 200_000:
            sites = ball_array(d, R)
            xi = field.values(sites)
    r = np.abs(sites).sum(axis=1)
    f, rho = strategy_log_bound(xi, r, t, d)
    j = int(np.argmax(f))
    return FKBounds(float(t), lower_log=float(f[j]),
                    lower_witness=(tuple(int(c) for c in sites[j]), float(rho[j])), jump_rate=2.0 * d * t)


def _log_poisson(n, lam):
    n = np.asarray(n, dtype=np.float64)
    return -lam + n * math.log(lam) - gammaln(n + 1.0)


def _upper_saturating(Mn: np.ndarray, M_after: float, t: float, lam: float) -> float:
    """Exact sum when M_n = Mn[n] for n < len(Mn) and M_after afterwards."""
    R = Mn.shape[0] - 1
    n = np.arange(R + 1)
    terms = t * Mn + _log_poisson(n, lam)
    tail_p = gammainc(R + 1, lam)  # P(J >= R + 1)
    parts = [logsumexp(terms)]
    if tail_p > 0:
        parts.append(t * M_after + math.log(tail_p))
    return float(logsumexp(parts))


def fk_upper(field, t: float, epsilon: float = 1e-6, box_radius: int | None = None, rel_tol: float = 1e-9,
             max_cutoff: int | None = None) -> FKBounds:
    """Jump-count upper bound sum_n e^{t M_n} P(J_t = n) on U(t), in log form.

    With ``box_radius`` (or an explicit field) M_n saturates and the sum is
    exact.  Otherwise terms beyond the cutoff use per-radius thresholds whose
    joint exceedance probability is at most ``epsilon``.
    """
    if t <= 0:
        raise DomainError("t must be positive")
    d = field.d
    lam = 2.0 * d * t
    if box_radius is not None or isinstance(field, ExplicitField):
        R = box_radius if box_radius is not None else field.support_radius + 1
        ser = MaxSeries.start(field, R)
        Mn = ser.value_at(np.arange(R + 1))
        if box_radius is None:
            after = max(float(Mn[-1]), field.default)
        else:
            after = float(Mn[-1])
        return FKBounds(float(t), upper_log=_upper_saturating(Mn, after, t, lam), upper_cutoff=int(R),
                        jump_rate=lam, epsilon=0.0)
    spec = field.spec
    n_max = max(16, math.ceil(3 * lam) + 16)
    cap = max_cutoff or field.max_radius
    ser = MaxSeries.start(field, n_max)
    while True:
        n = np.arange(n_max + 1)
        Mn = ser.value_at(n)
        partial = float(logsumexp(t * Mn + _log_poisson(n, lam)))
        rem = _remainder_log(spec, t, lam, n_max, float(Mn[-1]), epsilon)
        gap = float(np.logaddexp(0.0, rem - partial)) if rem > -math.inf else 0.0
        if gap <= rel_tol:
            total = float(np.logaddexp(partial, rem))
            return FKBounds(float(t), upper_log=total, upper_cutoff=int(n_max), jump_rate=lam, epsilon=epsilon)
        if 2 * n_max > cap:
            loose = FKBounds(float(t), upper_log=float(np.logaddexp(partial, rem)), upper_cutoff=int(n_max),
                             jump_rate=lam, epsilon=epsilon)
            raise BudgetExceeded(f"upper bound cutoff would exceed {cap} (remainder not yet negligible)", loose)
        n_max *= 2
        extend_max_series(ser, n_max)


def _remainder_log(spec, t, lam, n_max, m_cut, epsilon, chunk=4096):
    """log of sum_{n > n_max} e^{t B_n} P(J = n) with B_n the certified bound on M_n."""
    d = spec.d
    phi_cut = 1.0 / math.log(n_max + 2.0)
    logs = []
    start = n_max + 1
    run_max = m_cut
    for _ in range(10_000):
        r = np.arange(start, start + chunk, dtype=np.float64)
        w = (1.0 / np.log(r + 1.0) - 1.0 / np.log(r + 2.0)) / phi_cut
        shell = ball_size_float(d, r) - ball_size_float(d, r - 1)
        b = tail_inverse_log(spec, math.log(epsilon) + np.log(w) - np.log(shell))
        B = np.maximum.accumulate(np.maximum(b, run_max))
        run_max = float(B[-1])
        terms = t * B + _log_poisson(r, lam)
        logs.append(logsumexp(terms))
        # geometric tail once successive ratios stay below 1/2
        ratio = np.diff(terms)
        if r[0] > lam and np.all(ratio[-64:] < -math.log(2.0)) and ratio[-1] <= ratio[-64]:
            logs.append(terms[-1])  # sum_{k>=1} 2^{-k} * last term <= last term
            return float(logsumexp(logs))
        start += chunk
    raise RuntimeError("remainder of the jump-count series did not converge")
