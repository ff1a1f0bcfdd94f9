"""numba implementations of the field and search kernels.

The algorithms are identical to :mod:`pamlab._kernels_numpy`; see that
module for the description of the hierarchical field.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

C1 = np.uint64(0xBF58476D1CE4E5B9)
C2 = np.uint64(0x94D049BB133111EB)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
TWO_M53 = 2.0 ** -53
LN2 = math.log(2.0)


@njit(inline="always", cache=True)
def fmix(z):
    z = (z ^ (z >> S30)) * C1
    z = (z ^ (z >> S27)) * C2
    return z ^ (z >> S31)


@njit(inline="always", cache=True)
def node_hash(level, c, W, key, key2):
    enc = np.uint64(level) << np.uint64(58)
    for i in range(c.shape[0]):
        enc |= np.uint64(c[i]) << np.uint64(i * W)
    return fmix(fmix(enc ^ key) + key2)


@njit(inline="always", cache=True)
def hash_log_u(h):
    return math.log(float((h >> S11) + np.uint64(1)) * TWO_M53)


@njit(inline="always", cache=True)
def value_from_logf(logf, fam, shape):
    if fam == 0:
        fbar = -math.expm1(logf)
        return fbar ** (-1.0 / shape)
    if logf < -LN2:
        e = -math.log1p(-math.exp(logf))
    else:
        e = -math.log(-math.expm1(logf))
    if fam == 1:
        return e ** (1.0 / shape)
    return e


@njit(inline="always", cache=True)
def penalty(r, t, d):
    if r <= 0:
        return 0.0
    return (r / t) * math.log(r / (2.0 * d * math.e * t))


@njit(inline="always", cache=True)
def score_of(kind, x, r, t, d):
    if kind == 0:
        return x
    if kind == 1:
        return x - penalty(r, t, d)
    if x > 1.0:
        return x - (r / t) * math.log(x)
    return x


@njit(cache=True, nogil=True)
def site_logf(z, d, W, key, key2):
    """log F of the field value at each row of ``z`` (shape (n, d))."""
    n = z.shape[0]
    out = np.empty(n, np.float64)
    ltop = W - 1
    off = np.int64(1) << np.int64(W - 1)
    mask = np.uint64((1 << d) - 1)
    u = np.empty(d, np.int64)
    c = np.empty(d, np.int64)
    for s in range(n):
        for i in range(d):
            u[i] = z[s, i] + off
            c[i] = u[i] >> ltop
        h = node_hash(ltop, c, W, key, key2)
        logf = hash_log_u(h) / (2.0 ** (d * ltop))
        for lev in range(ltop, 0, -1):
            amax = h & mask
            bits = np.uint64(0)
            for i in range(d):
                c[i] = u[i] >> (lev - 1)
                bits |= np.uint64(c[i] & 1) << np.uint64(i)
            h = node_hash(lev - 1, c, W, key, key2)
            if bits != amax:
                logf = logf + hash_log_u(h) / (2.0 ** (d * (lev - 1)))
        out[s] = logf
    return out


@njit(cache=True, nogil=True)
def site_values(z, d, W, key, key2, fam, shape):
    lf = site_logf(z, d, W, key, key2)
    out = np.empty(lf.shape[0], np.float64)
    for s in range(lf.shape[0]):
        out[s] = value_from_logf(lf[s], fam, shape)
    return out


@njit(inline="always", cache=True)
def _cube_radii(c, lev, off):
    a = np.int64(0)
    b = np.int64(0)
    side = np.int64(1) << np.int64(lev)
    for i in range(c.shape[0]):
        lo = c[i] * side - off
        hi = lo + side - 1
        if lo > 0:
            a += lo
        elif hi < 0:
            a += -hi
        b += max(abs(lo), abs(hi))
    return a, b


@njit(inline="always", cache=True)
def _upper_bound(kind, m, a, b, t, d):
    if kind == 0:
        return m
    if kind == 1:
        rstar = 2.0 * d * t
        if a <= rstar <= b:
            pmin = -2.0 * d
        elif b < rstar:
            pmin = penalty(b, t, d)
        else:
            pmin = penalty(a, t, d)
        return m - pmin
    lp = math.log(m) if m > 1.0 else 0.0
    return max(min(1.0, m), m - (a / t) * lp)


@njit(inline="always", cache=True)
def _argmax_radius(c, lev, W, key, key2, off, tmp):
    """1-norm of the site carrying the maximum of cube (lev, c)."""
    d = c.shape[0]
    mask = np.uint64((1 << d) - 1)
    for i in range(d):
        tmp[i] = c[i]
    for lv in range(lev, 0, -1):
        amax = node_hash(lv, tmp, W, key, key2) & mask
        for i in range(d):
            tmp[i] = 2 * tmp[i] + np.int64((amax >> np.uint64(i)) & np.uint64(1))
    r = np.int64(0)
    for i in range(d):
        r += abs(tmp[i] - off)
    return r


@njit(cache=True)
def _greedy_dive(c0, lf0, lev, d, W, key, key2, fam, shape, kind, t, rmin, rmax, off, c, cc):
    """Score of the leaf reached by repeatedly entering the child with the best bound."""
    nch = 1 << d
    mask = np.uint64(nch - 1)
    for i in range(d):
        c[i] = c0[i]
    lf = lf0
    for lv in range(lev, 0, -1):
        amax = node_hash(lv, c, W, key, key2) & mask
        ncell = 2.0 ** (d * (lv - 1))
        best = -np.inf
        bch = -1
        blf = 0.0
        for ch in range(nch):
            for i in range(d):
                cc[i] = 2 * c[i] + ((ch >> i) & 1)
            if np.uint64(ch) == amax:
                clf = lf
            else:
                clf = lf + hash_log_u(node_hash(lv - 1, cc, W, key, key2)) / ncell
            a, b = _cube_radii(cc, lv - 1, off)
            aa = max(a, rmin)
            bb = min(b, rmax)
            if aa > bb:
                continue
            u = _upper_bound(kind, value_from_logf(clf, fam, shape), aa, bb, t, d)
            if u > best:
                best = u
                bch = ch
                blf = clf
        if bch < 0:
            return -np.inf
        for i in range(d):
            c[i] = 2 * c[i] + ((bch >> i) & 1)
        lf = blf
    r = np.int64(0)
    for i in range(d):
        r += abs(c[i] - off)
    if r < rmin or r > rmax:
        return -np.inf
    return score_of(kind, value_from_logf(lf, fam, shape), r, t, d)


@njit(cache=True, nogil=True)
def search(d, W, key, key2, fam, shape, kind, t, rmin, rmax, k, thr, max_nodes):
    """Branch-and-bound over dyadic cubes.

    Returns (status, sites, values, scores) for every site in the radius
    window [rmin, rmax] whose score is >= the final pruning level, where the
    pruning level is max(thr, k-th best score) (k <= 0 disables the top-k
    part).  status is 0 on success and 1 when ``max_nodes`` was exceeded.
    """
    ltop = W - 1
    off = np.int64(1) << np.int64(W - 1)
    nch = 1 << d
    mask = np.uint64(nch - 1)
    n = nch
    cs = np.empty((n, d), np.int64)
    lf = np.empty(n, np.float64)
    for j in range(n):
        for i in range(d):
            cs[j, i] = (j >> i) & 1
        h = node_hash(ltop, cs[j], W, key, key2)
        lf[j] = hash_log_u(h) / (2.0 ** (d * ltop))
    tmp = np.empty(d, np.int64)
    tmp2 = np.empty(d, np.int64)
    ndive = max(k, 1) + 2
    for lev in range(ltop, 0, -1):
        ub = np.empty(n, np.float64)
        lb = np.full(n, -np.inf)
        alive = np.zeros(n, np.bool_)
        for j in range(n):
            a, b = _cube_radii(cs[j], lev, off)
            aa = max(a, rmin)
            bb = min(b, rmax)
            if aa > bb:
                continue
            alive[j] = True
            m = value_from_logf(lf[j], fam, shape)
            ub[j] = _upper_bound(kind, m, aa, bb, t, d)
            if ub[j] >= thr:
                ra = _argmax_radius(cs[j], lev, W, key, key2, off, tmp)
                if rmin <= ra <= rmax:
                    lb[j] = score_of(kind, m, ra, t, d)
        order = np.argsort(-ub)
        for jj in range(min(ndive, n)):
            j = order[jj]
            if not alive[j] or ub[j] < thr:
                break
            g = _greedy_dive(cs[j], lf[j], lev, d, W, key, key2, fam, shape, kind, t, rmin, rmax, off, tmp, tmp2)
            if g > lb[j]:
                lb[j] = g
        tau = thr
        if k > 0:
            nfin = 0
            for j in range(n):
                if lb[j] > -np.inf:
                    nfin += 1
            if nfin >= k:
                kth = -np.partition(-lb, k - 1)[k - 1]
                if kth > tau:
                    tau = kth
        keep = 0
        for j in range(n):
            if alive[j] and ub[j] >= tau:
                keep += 1
        if keep * nch > max_nodes:
            return 1, np.empty((0, d), np.int64), np.empty(0), np.empty(0)
        ncs = np.empty((keep * nch, d), np.int64)
        nlf = np.empty(keep * nch, np.float64)
        q = 0
        ncell = 2.0 ** (d * (lev - 1))
        for j in range(n):
            if not (alive[j] and ub[j] >= tau):
                continue
            h = node_hash(lev, cs[j], W, key, key2)
            amax = h & mask
            for ch in range(nch):
                for i in range(d):
                    ncs[q, i] = 2 * cs[j, i] + ((ch >> i) & 1)
                if np.uint64(ch) == amax:
                    nlf[q] = lf[j]
                else:
                    hc = node_hash(lev - 1, ncs[q], W, key, key2)
                    nlf[q] = lf[j] + hash_log_u(hc) / ncell
                q += 1
        cs = ncs
        lf = nlf
        n = keep * nch
    # leaves: exact scores
    sc = np.full(n, -np.inf)
    vals = np.empty(n, np.float64)
    for j in range(n):
        r = np.int64(0)
        for i in range(d):
            r += abs(cs[j, i] - off)
        x = value_from_logf(lf[j], fam, shape)
        vals[j] = x
        if rmin <= r <= rmax:
            sc[j] = score_of(kind, x, r, t, d)
    tau = thr
    if k > 0:
        nfin = 0
        for j in range(n):
            if sc[j] > -np.inf:
                nfin += 1
        if nfin >= k:
            kth = -np.partition(-sc, k - 1)[k - 1]
            if kth > tau:
                tau = kth
    keep = 0
    for j in range(n):
        if sc[j] > -np.inf and sc[j] >= tau:
            keep += 1
    sites = np.empty((keep, d), np.int64)
    ov = np.empty(keep, np.float64)
    osc = np.empty(keep, np.float64)
    q = 0
    for j in range(n):
        if sc[j] > -np.inf and sc[j] >= tau:
            for i in range(d):
                sites[q, i] = cs[j, i] - off
            ov[q] = vals[j]
            osc[q] = sc[j]
            q += 1
    return 0, sites, ov, osc


RESCALE_HI = 1e30
RESCALE_LO = 1e-30


GAUGE_CLAMP = 700.0


@njit(cache=True, nogil=True)
def _gauge(c, nbr, s, fac):
    for j in range(nbr.shape[1]):
        q = nbr[s, j]
        if q >= 0:
            g = min(max(c[q] - c[s], -GAUGE_CLAMP), GAUGE_CLAMP)
            fac[s, j] = math.exp(g)
            fac[q, j ^ 1] = math.exp(-g)


@njit(cache=True, nogil=True)
def _anchor_unreached(m, c, nbr, hop, sweeps, fac):
    """Give not-yet-reached sites scales one hop below their reached neighbours."""
    ns = m.shape[0]
    anchored = m > 0.0
    pending = 0
    for _ in range(sweeps):
        pending = 0
        for s in range(ns):
            if anchored[s]:
                continue
            best = -np.inf
            for j in range(nbr.shape[1]):
                q = nbr[s, j]
                if q >= 0 and anchored[q] and c[q] + hop > best:
                    best = c[q] + hop
            if best > -np.inf:
                c[s] = best
                anchored[s] = True
                _gauge(c, nbr, s, fac)
            else:
                pending += 1
        if pending == 0:
            break
    return pending


@njit(cache=True, nogil=True)
def strang_steps(m, c, xi_shift, nbr, h, nsteps, nsub, deg):
    """Advance u = m * exp(c) by ``nsteps`` Strang steps of size ``h``.

    ``xi_shift`` is the potential minus its maximum (so <= 0); ``nbr`` holds
    neighbour indices (-1 outside the box, column 2i+1 is the reverse of 2i).
    Each site keeps its own log scale ``c``, refreshed whenever its mantissa
    leaves [1e-30, 1e30], so widely separated magnitudes never underflow.
    Sites the walk has not reached yet are re-anchored to their reached
    neighbours before every step.
    The hopping factor is exp(-2d hs) times a Taylor series in the
    nonnegative adjacency, hence free of cancellation.  Returns 0, or nan
    if a non-finite value appears.
    """
    ns = m.shape[0]
    nn = nbr.shape[1]
    half = np.empty(ns)
    for s in range(ns):
        half[s] = math.exp(0.5 * h * xi_shift[s])
    hs = h / nsub
    damp = math.exp(-nn * hs)
    fac = np.ones((ns, nn))
    for s in range(ns):
        _gauge(c, nbr, s, fac)
    term = np.empty(ns)
    nxt = np.empty(ns)
    acc = np.empty(ns)
    hop = math.log(h)
    reach = deg * nsub + 2
    unreached = 0
    for s in range(ns):
        if m[s] == 0.0:
            unreached += 1
    for _ in range(nsteps):
        if unreached:
            _anchor_unreached(m, c, nbr, hop, reach, fac)
        for s in range(ns):
            m[s] *= half[s]
        for _sub in range(nsub):
            for s in range(ns):
                term[s] = m[s]
                acc[s] = m[s]
            for p in range(1, deg + 1):
                coef = hs / p
                for s in range(ns):
                    v = 0.0
                    for j in range(nn):
                        q = nbr[s, j]
                        if q >= 0:
                            v += fac[s, j] * term[q]
                    nxt[s] = coef * v
                for s in range(ns):
                    term[s] = nxt[s]
                    acc[s] += nxt[s]
            for s in range(ns):
                m[s] = damp * acc[s]
        unreached = 0
        for s in range(ns):
            m[s] *= half[s]
            x = m[s]
            if not math.isfinite(x):
                return np.nan
            if x == 0.0:
                unreached += 1
            if x > 0.0 and (x > RESCALE_HI or x < RESCALE_LO):
                c[s] += math.log(x)
                m[s] = 1.0
                _gauge(c, nbr, s, fac)
    return 0.0
