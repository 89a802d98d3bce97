# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_fallback.py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()

DEF JACOBI_SWEEPS = 60
DEF JACOBI_TOL = 1e-15


cdef void _jacobi_one(double[:, :] a, double[:] sv) noexcept nogil:
    cdef Py_ssize_t rows = a.shape[0]
    cdef Py_ssize_t n = a.shape[1]
    cdef Py_ssize_t p, q, i, sweep
    cdef double alpha, beta, gamma, zeta, t, c, s, off, x, y, scale
    for sweep in range(JACOBI_SWEEPS):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(rows):
                    alpha += a[i, p] * a[i, p]
                    beta += a[i, q] * a[i, q]
                    gamma += a[i, p] * a[i, q]
                scale = sqrt(alpha * beta)
                if scale <= 0.0 or fabs(gamma) <= JACOBI_TOL * scale:
                    continue
                if fabs(gamma) / scale > off:
                    off = fabs(gamma) / scale
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta == 0.0:
                    t = 1.0
                elif zeta > 0.0:
                    t = 1.0 / (zeta + sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for i in range(rows):
                    x = a[i, p]
                    y = a[i, q]
                    a[i, p] = c * x - s * y
                    a[i, q] = s * x + c * y
        if off < JACOBI_TOL:
            break
    for p in range(n):
        alpha = 0.0
        for i in range(rows):
            alpha += a[i, p] * a[i, p]
        sv[p] = sqrt(alpha)


def singular_values(mats):
    cdef cnp.ndarray[cnp.float64_t, ndim=3] a = np.array(mats, dtype=np.float64, copy=True, ndmin=3)
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t n = a.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((m, n))
    cdef double[:, :, :] av = a
    cdef double[:, :] ov = out
    cdef Py_ssize_t j
    for j in range(m):
        _jacobi_one(av[j], ov[j])
    return -np.sort(-out, axis=1)


def locate_simplices(points, inv, origin, double tol):
    cdef double[:, :] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef double[:, :, :] M = np.ascontiguousarray(inv, dtype=np.float64)
    cdef double[:, :] O = np.ascontiguousarray(origin, dtype=np.float64)
    cdef Py_ssize_t npts = P.shape[0]
    cdef Py_ssize_t d = P.shape[1]
    cdef Py_ssize_t ntri = M.shape[0]
    idx_arr = np.full(npts, -1, dtype=np.int64)
    bary_arr = np.zeros((npts, d + 1))
    cdef long long[:] idx = idx_arr
    cdef double[:, :] bary = bary_arr
    cdef double lam[16]
    cdef double rel[16]
    cdef Py_ssize_t p, t, i, j
    cdef double s, v
    cdef bint ok
    if d > 15:
        raise ValueError("dimension too large for compiled locator")
    with nogil:
        for p in range(npts):
            for t in range(ntri):
                for j in range(d):
                    rel[j] = P[p, j] - O[t, j]
                s = 0.0
                ok = True
                for i in range(d):
                    v = 0.0
                    for j in range(d):
                        v = v + M[t, i, j] * rel[j]
                    if v < -tol:
                        ok = False
                        break
                    lam[i] = v
                    s = s + v
                if not ok or 1.0 - s < -tol:
                    continue
                idx[p] = t
                bary[p, 0] = 1.0 - s
                for i in range(d):
                    bary[p, i + 1] = lam[i]
                break
    return idx_arr, bary_arr


def clip_halfplanes(coef, double box):
    cdef double[:, :, :] C = np.ascontiguousarray(coef, dtype=np.float64)
    cdef Py_ssize_t ntri = C.shape[0]
    cdef Py_ssize_t m = C.shape[1]
    cdef Py_ssize_t maxv = m + 4
    out_arr = np.zeros((ntri, maxv, 2))
    counts_arr = np.zeros(ntri, dtype=np.int64)
    cdef double[:, :, :] out = out_arr
    cdef long long[:] counts = counts_arr
    cdef double bu[64]
    cdef double bv[64]
    cdef double nu[64]
    cdef double nv[64]
    cdef Py_ssize_t t, h, i, npoly, nn, i2
    cdef double a, b, c, f1, f2, r, u1, v1, u2, v2
    if maxv > 64:
        raise ValueError("too many half-planes for compiled clipper")
    with nogil:
        for t in range(ntri):
            bu[0] = -box; bv[0] = -box
            bu[1] = box; bv[1] = -box
            bu[2] = box; bv[2] = box
            bu[3] = -box; bv[3] = box
            npoly = 4
            for h in range(m):
                if npoly == 0:
                    break
                a = C[t, h, 0]
                b = C[t, h, 1]
                c = C[t, h, 2]
                nn = 0
                for i in range(npoly):
                    i2 = i + 1
                    if i2 == npoly:
                        i2 = 0
                    u1 = bu[i]; v1 = bv[i]
                    u2 = bu[i2]; v2 = bv[i2]
                    f1 = a + b * u1 + c * v1
                    f2 = a + b * u2 + c * v2
                    if f1 >= 0.0:
                        nu[nn] = u1; nv[nn] = v1
                        nn = nn + 1
                    if (f1 >= 0.0) != (f2 >= 0.0):
                        r = f1 / (f1 - f2)
                        nu[nn] = u1 + r * (u2 - u1)
                        nv[nn] = v1 + r * (v2 - v1)
                        nn = nn + 1
                for i in range(nn):
                    bu[i] = nu[i]
                    bv[i] = nv[i]
                npoly = nn
            if npoly >= 3:
                if npoly > maxv:
                    npoly = maxv
                for i in range(npoly):
                    out[t, i, 0] = bu[i]
                    out[t, i, 1] = bv[i]
                counts[t] = npoly
    return out_arr, counts_arr
