"""Pure numpy implementations of the numerical kernels.

Every function here has a twin with the same signature in the compiled
``_core`` extension.  Arithmetic is written in the same order in both so the
two backends agree to the last bit for integer work and to within an ulp or
two wherever a libm call (``log``, ``sqrt``) is involved.
"""

import numpy as np

BACKEND = "python"

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SH32 = np.uint64(32)
_SH11 = np.uint64(11)

# Wichura AS241 (PPND16) coefficients, highest degree first.
_A = (2509.0809287301226727, 33430.575583588128105, 67265.770927008700853,
      45921.953931549871457, 13731.693765509461125, 1971.5909503065514427,
      133.14166789178437745, 3.387132872796366608)
_B = (5226.495278852545925, 28729.085735721942674, 39307.89580009271061,
      21213.794301586595867, 5394.1960214247511077, 687.1870074920579083,
      42.313330701600911252, 1.0)
_C = (7.7454501427834140764e-4, 0.0227238449892691845833,
      0.24178072517745061177, 1.27045825245236838258, 3.64784832476320460504,
      5.7694972214606914055, 4.6303378461565452959, 1.42343711074968357734)
_D = (1.05075007164441684324e-9, 5.475938084995344946e-4,
      0.0151986665636164571966, 0.14810397642748007459,
      0.68976733498510000455, 1.6763848301838038494, 2.05319162663775882187,
      1.0)
_E = (2.01033439929228813265e-7, 2.71155556874348757815e-5,
      0.0012426609473880784386, 0.026532189526576123093,
      0.29656057182850489123, 1.7848265399172913358, 5.4637849111641143699,
      6.6579046435011037772)
_F = (2.04426310338993978564e-15, 1.4215117583164458887e-7,
      1.8463183175100546818e-5, 7.868691311456132591e-4,
      0.0148753612908506148525, 0.13692988092273580531,
      0.59983220655588793769, 1.0)


def _horner(coefs, r):
    acc = np.full_like(r, coefs[0])
    for c in coefs[1:]:
        acc = acc * r + c
    return acc


def philox4x32(ctr, key):
    """Philox4x32-10 block function.

    ``ctr`` is a ``(..., 4)`` array of uint32 words, ``key`` a pair of
    uint32.  Returns the ``(..., 4)`` uint32 output block.
    """
    ctr = np.asarray(ctr, dtype=np.uint64)
    c0, c1, c2, c3 = (ctr[..., i].copy() for i in range(4))
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF
    for rnd in range(10):
        if rnd:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        p0 = c0 * _M0
        p1 = c2 * _M1
        hi0, lo0 = p0 >> _SH32, p0 & _MASK32
        hi1, lo1 = p1 >> _SH32, p1 & _MASK32
        c0 = hi1 ^ c1 ^ np.uint64(k0)
        c1 = lo1
        c2 = hi0 ^ c3 ^ np.uint64(k1)
        c3 = lo0
    return np.stack([c0, c1, c2, c3], axis=-1).astype(np.uint32)


def inverse_normal_cdf(p):
    """Standard normal quantile (AS241), vectorised over ``p`` in (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    q = p - 0.5
    out = np.empty_like(p)
    central = np.abs(q) <= 0.425
    if central.any():
        qc = q[central]
        r = 0.180625 - qc * qc
        out[central] = qc * _horner(_A, r) / _horner(_B, r)
    tail = ~central
    if tail.any():
        qt = q[tail]
        r = np.where(qt < 0.0, p[tail], 1.0 - p[tail])
        r = np.sqrt(-np.log(r))
        near = r <= 5.0
        val = np.empty_like(r)
        rn = r[near] - 1.6
        val[near] = _horner(_C, rn) / _horner(_D, rn)
        rf = r[~near] - 5.0
        val[~near] = _horner(_E, rf) / _horner(_F, rf)
        out[tail] = np.where(qt < 0.0, -val, val)
    return out


def _uniform_pairs(block):
    w = block.astype(np.uint64)
    x0 = ((w[..., 0] << _SH32) | w[..., 1]) >> _SH11
    x1 = ((w[..., 2] << _SH32) | w[..., 3]) >> _SH11
    scale = 1.0 / 9007199254740992.0
    u0 = (x0.astype(np.float64) + 0.5) * scale
    u1 = (x1.astype(np.float64) + 0.5) * scale
    return u0, u1


def normals(seed, step, rep_ids, particle_ids, dim):
    """Standard normals for one fine step, shape ``(R, N, dim)``.

    The counter for replication ``r``, particle ``p``, lane ``l`` is
    ``(step, p, r, l)``; each Philox block yields two normals.
    """
    rep_ids = np.asarray(rep_ids, dtype=np.uint64)
    particle_ids = np.asarray(particle_ids, dtype=np.uint64)
    nlanes = (dim + 1) // 2
    R, N = rep_ids.shape[0], particle_ids.shape[0]
    ctr = np.empty((R, N, nlanes, 4), dtype=np.uint64)
    ctr[..., 0] = np.uint64(step & 0xFFFFFFFF)
    ctr[..., 1] = particle_ids[None, :, None]
    ctr[..., 2] = rep_ids[:, None, None]
    ctr[..., 3] = np.arange(nlanes, dtype=np.uint64)[None, None, :]
    key = (seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF)
    u0, u1 = _uniform_pairs(philox4x32(ctr, key))
    u = np.stack([u0, u1], axis=-1).reshape(R, N, 2 * nlanes)[..., :dim]
    return inverse_normal_cdf(u)


def brownian_increments(seed, fine_start, ratio, sqrt_h_fine, rep_ids,
                        particle_ids, dim):
    """Sum of ``ratio`` consecutive fine increments, accumulated in order."""
    acc = np.zeros((len(rep_ids), len(particle_ids), dim))
    for j in range(ratio):
        acc += sqrt_h_fine * normals(seed, fine_start + j, rep_ids,
                                     particle_ids, dim)
    return acc


def w1_sorted_1d(x, wx, y, wy):
    """W1 between two 1-d weighted measures with sorted atoms.

    Computed as the integral of ``|F - G|`` over the merged support, which
    equals the cost of the quantile (monotone) coupling.
    """
    pts = np.concatenate([x, y])
    jump = np.concatenate([wx, -np.asarray(wy)])
    order = np.argsort(pts, kind="stable")
    pts = pts[order]
    diff = np.cumsum(jump[order])[:-1]
    return float(np.sum(np.abs(diff) * np.diff(pts)))


def minplus_backup(cost, nxt, values):
    """One finite-horizon backup: ``min_r cost[s, r] + values[nxt[s, r]]``.

    Returns the new values and the first minimising column per row.
    """
    cand = cost + values[nxt]
    idx = np.argmin(cand, axis=1)
    return cand[np.arange(cand.shape[0]), idx], idx


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _quick_two_sum(a, b):
    s = a + b
    return s, b - (s - a)


def _split(a):
    c = 134217729.0 * a
    hi = c - (c - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def bellman_dd(cost, nxt, vhi, vlo, beta):
    """Discounted Bellman sweep in double-double arithmetic.

    Candidates ``cost + beta * V[nxt]`` are formed with ~106-bit precision
    so that successive sup-norm residuals are not swamped by rounding.
    Returns ``(new_hi, new_lo, argmin)``.
    """
    hi = vhi[nxt]
    lo = vlo[nxt]
    p, e = _two_prod(hi, beta)
    e = e + lo * beta
    p, e = _quick_two_sum(p, e)
    s, f = _two_sum(p, cost)
    f = f + e
    s, f = _quick_two_sum(s, f)
    mhi = s.min(axis=1)
    tie = s == mhi[:, None]
    flo = np.where(tie, f, np.inf)
    mlo = flo.min(axis=1)
    idx = np.argmax(tie & (flo == mlo[:, None]), axis=1)
    return mhi, mlo, idx


def dd_sup_diff(ahi, alo, bhi, blo):
    """Sup-norm of ``a - b`` for double-double vectors, rounded to double."""
    s, e = _two_sum(ahi, -bhi)
    e = e + (alo - blo)
    s, e = _quick_two_sum(s, e)
    return float(np.max(np.abs(s))) if s.size else 0.0
