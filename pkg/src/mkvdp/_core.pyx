# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; see ``_pycore`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, sqrt, fabs, INFINITY
from libc.stdint cimport uint32_t, uint64_t, int64_t

cnp.import_array()

BACKEND = "cython"

cdef uint64_t M0 = 0xD2511F53
cdef uint64_t M1 = 0xCD9E8D57
cdef uint32_t W0 = 0x9E3779B9
cdef uint32_t W1 = 0xBB67AE85

cdef double[8] A = [2509.0809287301226727, 33430.575583588128105,
                    67265.770927008700853, 45921.953931549871457,
                    13731.693765509461125, 1971.5909503065514427,
                    133.14166789178437745, 3.387132872796366608]
cdef double[8] B = [5226.495278852545925, 28729.085735721942674,
                    39307.89580009271061, 21213.794301586595867,
                    5394.1960214247511077, 687.1870074920579083,
                    42.313330701600911252, 1.0]
cdef double[8] C = [7.7454501427834140764e-4, 0.0227238449892691845833,
                    0.24178072517745061177, 1.27045825245236838258,
                    3.64784832476320460504, 5.7694972214606914055,
                    4.6303378461565452959, 1.42343711074968357734]
cdef double[8] D = [1.05075007164441684324e-9, 5.475938084995344946e-4,
                    0.0151986665636164571966, 0.14810397642748007459,
                    0.68976733498510000455, 1.6763848301838038494,
                    2.05319162663775882187, 1.0]
cdef double[8] E = [2.01033439929228813265e-7, 2.71155556874348757815e-5,
                    0.0012426609473880784386, 0.026532189526576123093,
                    0.29656057182850489123, 1.7848265399172913358,
                    5.4637849111641143699, 6.6579046435011037772]
cdef double[8] F = [2.04426310338993978564e-15, 1.4215117583164458887e-7,
                    1.8463183175100546818e-5, 7.868691311456132591e-4,
                    0.0148753612908506148525, 0.13692988092273580531,
                    0.59983220655588793769, 1.0]


cdef inline double horner(double* c, double r) noexcept nogil:
    cdef double acc = c[0]
    cdef int i
    for i in range(1, 8):
        acc = acc * r + c[i]
    return acc


cdef inline double ppnd16(double p) noexcept nogil:
    cdef double q = p - 0.5
    cdef double r, val
    if fabs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * horner(A, r) / horner(B, r)
    r = p if q < 0.0 else 1.0 - p
    r = sqrt(-log(r))
    if r <= 5.0:
        r = r - 1.6
        val = horner(C, r) / horner(D, r)
    else:
        r = r - 5.0
        val = horner(E, r) / horner(F, r)
    return -val if q < 0.0 else val


cdef inline void philox(uint32_t* c, uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint64_t p0, p1
    cdef uint32_t c0 = c[0], c1 = c[1], c2 = c[2], c3 = c[3]
    cdef int rnd
    for rnd in range(10):
        if rnd:
            k0 = <uint32_t>(k0 + W0)
            k1 = <uint32_t>(k1 + W1)
        p0 = M0 * <uint64_t>c0
        p1 = M1 * <uint64_t>c2
        c0 = <uint32_t>(p1 >> 32) ^ c1 ^ k0
        c1 = <uint32_t>p1
        c2 = <uint32_t>(p0 >> 32) ^ c3 ^ k1
        c3 = <uint32_t>p0
    c[0] = c0
    c[1] = c1
    c[2] = c2
    c[3] = c3


def philox4x32(ctr, key):
    arr = np.ascontiguousarray(ctr, dtype=np.uint32)
    shape = arr.shape
    cdef uint32_t[:, ::1] flat = arr.reshape(-1, 4).copy()
    cdef uint32_t k0 = <uint32_t>(int(key[0]) & 0xFFFFFFFF)
    cdef uint32_t k1 = <uint32_t>(int(key[1]) & 0xFFFFFFFF)
    cdef Py_ssize_t i
    for i in range(flat.shape[0]):
        philox(&flat[i, 0], k0, k1)
    return np.asarray(flat).reshape(shape)


def inverse_normal_cdf(p):
    arr = np.asarray(p, dtype=np.float64)
    cdef double[::1] src = arr.ravel().copy()
    cdef Py_ssize_t i
    for i in range(src.shape[0]):
        src[i] = ppnd16(src[i])
    return np.asarray(src).reshape(arr.shape)


cdef inline void fill_normals(double* out, uint64_t seed, uint64_t step,
                              uint64_t rep, uint64_t particle, int dim,
                              double scale, bint accumulate) noexcept nogil:
    cdef uint32_t c[4]
    cdef uint64_t x0, x1
    cdef double u
    cdef int lane, j
    cdef double inv53 = 1.0 / 9007199254740992.0
    for lane in range((dim + 1) // 2):
        c[0] = <uint32_t>step
        c[1] = <uint32_t>particle
        c[2] = <uint32_t>rep
        c[3] = <uint32_t>lane
        philox(c, <uint32_t>seed, <uint32_t>(seed >> 32))
        x0 = ((<uint64_t>c[0] << 32) | c[1]) >> 11
        x1 = ((<uint64_t>c[2] << 32) | c[3]) >> 11
        j = 2 * lane
        u = (<double>x0 + 0.5) * inv53
        if accumulate:
            out[j] += scale * ppnd16(u)
        else:
            out[j] = ppnd16(u)
        if j + 1 < dim:
            u = (<double>x1 + 0.5) * inv53
            if accumulate:
                out[j + 1] += scale * ppnd16(u)
            else:
                out[j + 1] = ppnd16(u)


def normals(seed, step, rep_ids, particle_ids, int dim):
    cdef uint64_t[::1] reps = np.ascontiguousarray(rep_ids, dtype=np.uint64)
    cdef uint64_t[::1] parts = np.ascontiguousarray(particle_ids, dtype=np.uint64)
    cdef Py_ssize_t R = reps.shape[0], N = parts.shape[0], r, i
    out = np.empty((R, N, dim))
    cdef double[:, :, ::1] o = out
    cdef uint64_t s = <uint64_t>seed, k = <uint64_t>step
    with nogil:
        for r in range(R):
            for i in range(N):
                fill_normals(&o[r, i, 0], s, k, reps[r], parts[i], dim, 1.0, 0)
    return out


def brownian_increments(seed, fine_start, int ratio, double sqrt_h_fine,
                        rep_ids, particle_ids, int dim):
    cdef uint64_t[::1] reps = np.ascontiguousarray(rep_ids, dtype=np.uint64)
    cdef uint64_t[::1] parts = np.ascontiguousarray(particle_ids, dtype=np.uint64)
    cdef Py_ssize_t R = reps.shape[0], N = parts.shape[0], r, i
    cdef int j
    out = np.zeros((R, N, dim))
    cdef double[:, :, ::1] o = out
    cdef uint64_t s = <uint64_t>seed, k0 = <uint64_t>fine_start
    with nogil:
        for j in range(ratio):
            for r in range(R):
                for i in range(N):
                    fill_normals(&o[r, i, 0], s, k0 + j, reps[r], parts[i],
                                 dim, sqrt_h_fine, 1)
    return out


def w1_sorted_1d(x, wx, y, wy):
    """Quantile coupling by a two-pointer sweep over sorted atoms."""
    cdef double[::1] xs = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] ys = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] a = np.ascontiguousarray(wx, dtype=np.float64).copy()
    cdef double[::1] b = np.ascontiguousarray(wy, dtype=np.float64).copy()
    cdef Py_ssize_t i = 0, j = 0, n = xs.shape[0], m = ys.shape[0]
    cdef double total = 0.0, move
    with nogil:
        while i < n and j < m:
            move = a[i] if a[i] < b[j] else b[j]
            total += move * fabs(xs[i] - ys[j])
            a[i] -= move
            b[j] -= move
            if a[i] <= b[j]:
                i += 1
            else:
                j += 1
    return total


def minplus_backup(cost, nxt, values):
    cdef double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef int64_t[:, ::1] nx = np.ascontiguousarray(nxt, dtype=np.int64)
    cdef double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t K = c.shape[0], Rn = c.shape[1], s, r, best
    out = np.empty(K)
    idx = np.empty(K, dtype=np.int64)
    cdef double[::1] o = out
    cdef int64_t[::1] ix = idx
    cdef double cand, bv
    with nogil:
        for s in range(K):
            best = 0
            bv = c[s, 0] + v[nx[s, 0]]
            for r in range(1, Rn):
                cand = c[s, r] + v[nx[s, r]]
                if cand < bv:
                    bv = cand
                    best = r
            o[s] = bv
            ix[s] = best
    return out, idx


cdef inline void two_sum(double a, double b, double* s, double* e) noexcept nogil:
    cdef double ss = a + b
    cdef double bb = ss - a
    s[0] = ss
    e[0] = (a - (ss - bb)) + (b - bb)


cdef inline void quick_two_sum(double a, double b, double* s, double* e) noexcept nogil:
    cdef double ss = a + b
    s[0] = ss
    e[0] = b - (ss - a)


cdef inline void two_prod(double a, double b, double* p, double* e) noexcept nogil:
    cdef double pp = a * b
    cdef double c = 134217729.0 * a
    cdef double ah = c - (c - a)
    cdef double al = a - ah
    c = 134217729.0 * b
    cdef double bh = c - (c - b)
    cdef double bl = b - bh
    p[0] = pp
    e[0] = ((ah * bh - pp) + ah * bl + al * bh) + al * bl


def bellman_dd(cost, nxt, vhi, vlo, double beta):
    cdef double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef int64_t[:, ::1] nx = np.ascontiguousarray(nxt, dtype=np.int64)
    cdef double[::1] hi = np.ascontiguousarray(vhi, dtype=np.float64)
    cdef double[::1] lo = np.ascontiguousarray(vlo, dtype=np.float64)
    cdef Py_ssize_t K = c.shape[0], Rn = c.shape[1], s, r, best
    ohi = np.empty(K)
    olo = np.empty(K)
    idx = np.empty(K, dtype=np.int64)
    cdef double[::1] oh = ohi, ol = olo
    cdef int64_t[::1] ix = idx
    cdef double p, e, sh, sl, bh, bl
    with nogil:
        for s in range(K):
            bh = INFINITY
            bl = INFINITY
            best = 0
            for r in range(Rn):
                two_prod(hi[nx[s, r]], beta, &p, &e)
                e = e + lo[nx[s, r]] * beta
                quick_two_sum(p, e, &p, &e)
                two_sum(p, c[s, r], &sh, &sl)
                sl = sl + e
                quick_two_sum(sh, sl, &sh, &sl)
                if sh < bh or (sh == bh and sl < bl):
                    bh = sh
                    bl = sl
                    best = r
            oh[s] = bh
            ol[s] = bl
            ix[s] = best
    return ohi, olo, idx


def dd_sup_diff(ahi, alo, bhi, blo):
    cdef double[::1] a1 = np.ascontiguousarray(ahi, dtype=np.float64)
    cdef double[::1] a2 = np.ascontiguousarray(alo, dtype=np.float64)
    cdef double[::1] b1 = np.ascontiguousarray(bhi, dtype=np.float64)
    cdef double[::1] b2 = np.ascontiguousarray(blo, dtype=np.float64)
    cdef Py_ssize_t i
    cdef double s, e, best = 0.0
    for i in range(a1.shape[0]):
        two_sum(a1[i], -b1[i], &s, &e)
        e = e + (a2[i] - b2[i])
        quick_two_sum(s, e, &s, &e)
        if fabs(s) > best:
            best = fabs(s)
    return best
