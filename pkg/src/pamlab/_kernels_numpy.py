"""Pure-numpy kernels (fallback backend and reference for the numba port).

Hierarchical field
------------------
Coordinates are shifted by ``off = 2**(W-1)`` so each axis lives in
``[0, 2**W)``.  A node at level ``L`` is the dyadic cube whose shifted
coordinates share the prefix ``c_i = u_i >> L``; it holds ``2**(d*L)``
sites.  Each node is keyed by ``(L, c)`` packed into 64 bits and hashed
with two splitmix64 finalizer rounds around the seed keys.

The field is defined top-down through ``log F`` of each node maximum:

* a top node (level ``W-1``) gets ``log F = log(U) / n_top``;
* the low ``d`` hash bits of a node name the child that carries its maximum,
  which inherits the parent's ``log F``;
* every other child gets ``log F_parent + log(U_child) / n_child``, the law
  of the maximum of ``n_child`` i.i.d. draws conditioned to lie below the
  parent maximum.

A site value is ``F^{-1}(exp(log F_leaf))``.  The construction reproduces
the i.i.d. law exactly, every value is a pure function of the site, and the
maximum of any dyadic cube is available without visiting its sites, which is
what makes branch-and-bound over the infinite lattice cheap.
"""
from __future__ import annotations

import math

import numpy as np

C1 = np.uint64(0xBF58476D1CE4E5B9)
C2 = np.uint64(0x94D049BB133111EB)
TWO_M53 = 2.0 ** -53
LN2 = math.log(2.0)


def fmix(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * C1
    z = (z ^ (z >> np.uint64(27))) * C2
    return z ^ (z >> np.uint64(31))


def node_hash(level: int, c: np.ndarray, W: int, key, key2) -> np.ndarray:
    c = np.asarray(c, dtype=np.int64)
    enc = np.full(c.shape[0], np.uint64(level) << np.uint64(58), dtype=np.uint64)
    for i in range(c.shape[1]):
        enc |= c[:, i].astype(np.uint64) << np.uint64(i * W)
    return fmix(fmix(enc ^ np.uint64(key)) + np.uint64(key2))


def hash_log_u(h: np.ndarray) -> np.ndarray:
    return np.log(((h >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * TWO_M53)


def value_from_logf(logf, fam: int, shape: float) -> np.ndarray:
    logf = np.asarray(logf, dtype=np.float64)
    if fam == 0:
        return (-np.expm1(logf)) ** (-1.0 / shape)
    with np.errstate(divide="ignore"):
        e = np.where(
            logf < -LN2,
            -np.log1p(-np.exp(np.minimum(logf, -LN2))),
            -np.log(-np.expm1(np.maximum(logf, -LN2))),
        )
    if fam == 1:
        return e ** (1.0 / shape)
    return e


def penalty(r, t: float, d: int) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = (r / t) * np.log(r / (2.0 * d * math.e * t))
    return np.where(r > 0, p, 0.0)


def score_of(kind: int, x, r, t: float, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if kind == 0:
        return x.copy()
    if kind == 1:
        return x - penalty(r, t, d)
    r = np.asarray(r, dtype=np.float64)
    return np.where(x > 1.0, x - (r / t) * np.log(np.maximum(x, 1.0)), x)


def site_logf(z: np.ndarray, d: int, W: int, key, key2) -> np.ndarray:
    z = np.asarray(z, dtype=np.int64).reshape(-1, d)
    ltop = W - 1
    off = np.int64(1) << np.int64(W - 1)
    mask = np.uint64((1 << d) - 1)
    u = z + off
    c = u >> ltop
    h = node_hash(ltop, c, W, key, key2)
    logf = hash_log_u(h) / (2.0 ** (d * ltop))
    for lev in range(ltop, 0, -1):
        amax = h & mask
        c = u >> (lev - 1)
        bits = np.zeros(z.shape[0], dtype=np.uint64)
        for i in range(d):
            bits |= (c[:, i] & 1).astype(np.uint64) << np.uint64(i)
        h = node_hash(lev - 1, c, W, key, key2)
        logf = np.where(bits != amax, logf + hash_log_u(h) / (2.0 ** (d * (lev - 1))), logf)
    return logf


def site_values(z, d, W, key, key2, fam, shape) -> np.ndarray:
    return value_from_logf(site_logf(z, d, W, key, key2), fam, shape)


def _cube_radii(cs: np.ndarray, lev: int, off: int):
    side = np.int64(1) << np.int64(lev)
    lo = cs * side - off
    hi = lo + side - 1
    a = np.where(lo > 0, lo, np.where(hi < 0, -hi, 0)).sum(axis=1)
    b = np.maximum(np.abs(lo), np.abs(hi)).sum(axis=1)
    return a, b


def _upper_bound(kind, m, a, b, t, d):
    if kind == 0:
        return m.copy()
    if kind == 1:
        rstar = 2.0 * d * t
        pmin = np.where(
            (a <= rstar) & (rstar <= b),
            -2.0 * d,
            np.where(b < rstar, penalty(b, t, d), penalty(a, t, d)),
        )
        return m - pmin
    lp = np.log(np.maximum(m, 1.0))
    return np.maximum(np.minimum(1.0, m), m - (a / t) * lp)


def _argmax_radius(cs, lev, W, key, key2, off):
    """1-norm of the site carrying each cube's maximum (follow argmax bits)."""
    d = cs.shape[1]
    mask = np.uint64((1 << d) - 1)
    c = cs.copy()
    for lv in range(lev, 0, -1):
        amax = node_hash(lv, c, W, key, key2) & mask
        for i in range(d):
            c[:, i] = 2 * c[:, i] + ((amax >> np.uint64(i)) & np.uint64(1)).astype(np.int64)
    return np.abs(c - off).sum(axis=1)


def _greedy_dive(cs, lf, lev, d, W, key, key2, fam, shape, kind, t, rmin, rmax, off):
    """Leaf score reached from each cube by always entering the child with the best bound."""
    nch = 1 << d
    mask = np.uint64(nch - 1)
    j = np.arange(nch)
    chbits = ((j[:, None] >> np.arange(d)[None, :]) & 1).astype(np.int64)
    c = cs.copy()
    lf = lf.copy()
    dead = np.zeros(c.shape[0], dtype=bool)
    for lv in range(lev, 0, -1):
        amax = node_hash(lv, c, W, key, key2) & mask
        cc = (2 * c[:, None, :] + chbits[None, :, :]).reshape(-1, d)
        is_amax = (j[None, :].astype(np.uint64) == amax[:, None]).reshape(-1)
        clf = np.repeat(lf, nch)
        clf = np.where(is_amax, clf, clf + hash_log_u(node_hash(lv - 1, cc, W, key, key2)) / 2.0 ** (d * (lv - 1)))
        a, b = _cube_radii(cc, lv - 1, off)
        aa = np.maximum(a, rmin)
        bb = np.minimum(b, rmax)
        ub = np.where(aa <= bb, _upper_bound(kind, value_from_logf(clf, fam, shape), aa, bb, t, d), -np.inf)
        ub = ub.reshape(-1, nch)
        pick = np.argmax(ub, axis=1)
        dead |= ~np.isfinite(ub[np.arange(ub.shape[0]), pick])
        rows = np.arange(ub.shape[0]) * nch + pick
        c = cc[rows]
        lf = clf[rows]
    r = np.abs(c - off).sum(axis=1)
    ok = ~dead & (r >= rmin) & (r <= rmax)
    return np.where(ok, score_of(kind, value_from_logf(lf, fam, shape), r, t, d), -np.inf)


def _kth_largest(x: np.ndarray, k: int) -> float:
    fin = x[np.isfinite(x)]
    if k <= 0 or fin.size < k:
        return -np.inf
    return float(-np.partition(-fin, k - 1)[k - 1])


def search(d, W, key, key2, fam, shape, kind, t, rmin, rmax, k, thr, max_nodes):
    """Level-synchronous branch-and-bound; same contract as the numba kernel."""
    ltop = W - 1
    off = np.int64(1) << np.int64(W - 1)
    nch = 1 << d
    mask = np.uint64(nch - 1)
    j = np.arange(nch)
    cs = ((j[:, None] >> np.arange(d)[None, :]) & 1).astype(np.int64)
    lf = hash_log_u(node_hash(ltop, cs, W, key, key2)) / (2.0 ** (d * ltop))
    for lev in range(ltop, 0, -1):
        a, b = _cube_radii(cs, lev, off)
        aa = np.maximum(a, rmin)
        bb = np.minimum(b, rmax)
        alive = aa <= bb
        m = value_from_logf(lf, fam, shape)
        ub = np.where(alive, _upper_bound(kind, m, aa, bb, t, d), -np.inf)
        lb = np.full(cs.shape[0], -np.inf)
        cand = np.flatnonzero(alive & (ub >= thr))
        if cand.size:
            ra = _argmax_radius(cs[cand], lev, W, key, key2, off)
            ok = (ra >= rmin) & (ra <= rmax)
            lb[cand[ok]] = score_of(kind, m[cand[ok]], ra[ok], t, d)
        top = np.argsort(-ub, kind="stable")[: max(k, 1) + 2]
        top = top[alive[top] & (ub[top] >= thr)]
        if top.size:
            g = _greedy_dive(cs[top], lf[top], lev, d, W, key, key2, fam, shape, kind, t, rmin, rmax, off)
            lb[top] = np.maximum(lb[top], g)
        tau = max(thr, _kth_largest(lb, k))
        sel = alive & (ub >= tau)
        keep = int(sel.sum())
        if keep * nch > max_nodes:
            return 1, np.empty((0, d), np.int64), np.empty(0), np.empty(0)
        pc = cs[sel]
        plf = lf[sel]
        amax = node_hash(lev, pc, W, key, key2) & mask
        chbits = ((j[:, None] >> np.arange(d)[None, :]) & 1).astype(np.int64)
        ncs = (2 * pc[:, None, :] + chbits[None, :, :]).reshape(-1, d)
        is_amax = (j[None, :].astype(np.uint64) == amax[:, None]).reshape(-1)
        hc = node_hash(lev - 1, ncs, W, key, key2)
        ncell = 2.0 ** (d * (lev - 1))
        nlf = np.repeat(plf, nch)
        nlf = np.where(is_amax, nlf, nlf + hash_log_u(hc) / ncell)
        cs, lf = ncs, nlf
    z = cs - off
    r = np.abs(z).sum(axis=1)
    vals = value_from_logf(lf, fam, shape)
    inw = (r >= rmin) & (r <= rmax)
    sc = np.where(inw, score_of(kind, vals, r, t, d), -np.inf)
    tau = max(thr, _kth_largest(sc, k))
    sel = np.isfinite(sc) & (sc >= tau)
    return 0, z[sel], vals[sel], sc[sel]


RESCALE_HI = 1e30
RESCALE_LO = 1e-30
GAUGE_CLAMP = 700.0


def _gauge(c, idx, valid):
    g = np.clip(c[idx] - c[:, None], -GAUGE_CLAMP, GAUGE_CLAMP)
    return np.where(valid, np.exp(np.where(valid, g, 0.0)), 0.0)


def _anchor_unreached(m, c, idx, valid, hop, sweeps):
    anchored = m > 0.0
    for _ in range(sweeps):
        if anchored.all():
            break
        cand = np.where(valid & anchored[idx], c[idx] + hop, -np.inf).max(axis=1)
        new = ~anchored & np.isfinite(cand)
        if not new.any():
            break
        c[new] = cand[new]
        anchored |= new


def strang_steps(m, c, xi_shift, nbr, h, nsteps, nsub, deg):
    nn = nbr.shape[1]
    half = np.exp(0.5 * h * xi_shift)
    hs = h / nsub
    damp = math.exp(-nn * hs)
    valid = nbr >= 0
    idx = np.where(valid, nbr, 0)
    hop = math.log(h)
    fac = None
    for _ in range(nsteps):
        if fac is None or not np.all(m > 0.0):
            _anchor_unreached(m, c, idx, valid, hop, deg * nsub + 2)
            fac = _gauge(c, idx, valid)
        m *= half
        for _sub in range(nsub):
            term = m.copy()
            acc = m.copy()
            for p in range(1, deg + 1):
                term = (hs / p) * (fac * term[idx]).sum(axis=1)
                acc += term
            m[:] = damp * acc
        m *= half
        if not np.all(np.isfinite(m)):
            return float("nan")
        out = (m > 0.0) & ((m > RESCALE_HI) | (m < RESCALE_LO))
        if out.any():
            c[out] += np.log(m[out])
            m[out] = 1.0
            fac = _gauge(c, idx, valid)
    return 0.0
