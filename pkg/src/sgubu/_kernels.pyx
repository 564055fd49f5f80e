# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled step kernels for separable quadratic-sum targets.

Same interface and arithmetic order as ``_kernels_py``.  Built with
``-ffp-contract=off`` so no fused multiply-adds change the rounding.
"""

from libc.math cimport isfinite, sqrt
from libc.stdint cimport int64_t

NAME = "cython"
cdef double INV_SQRT2 = 1.0 / sqrt(2.0)


cdef inline double _grad(double xj, Py_ssize_t j, const double[:, ::1] P, const double[:, ::1] Cn,
                         bint full, const int64_t[:, :, ::1] batch, Py_ssize_t s, Py_ssize_t c,
                         double scale) noexcept nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t i, t, idx
    if full:
        for i in range(P.shape[0]):
            acc = acc + P[i, j] * (xj - Cn[i, j])
        return acc
    for t in range(batch.shape[2]):
        idx = batch[s, c, t]
        acc = acc + P[idx, j] * (xj - Cn[idx, j])
    return scale * acc


def advance(int method, double[:, ::1] x, double[:, ::1] v, double h, double hg, double sq, coeffs,
            const double[:, ::1] P, const double[:, ::1] Cn, double scale,
            const int64_t[:, :, ::1] batch, const double[:, :, :, ::1] xi1,
            const double[:, :, :, ::1] xi2, const double[:, :, ::1] noise,
            double[:, :, ::1] out_x, double[:, :, ::1] out_v):
    """Advance ``x``, ``v`` in place; return the first non-finite step index or -1."""
    cdef double eta = coeffs[0], F = coeffs[1], nx1 = coeffs[2], nx2 = coeffs[3]
    cdef double nv1 = coeffs[4], nv2 = coeffs[5]
    cdef bint full = batch is None
    cdef bint has_noise = noise is not None
    cdef bint rec_x = out_x is not None
    cdef bint rec_v = out_v is not None
    cdef Py_ssize_t S = xi1.shape[0], C = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t s, c, j
    cdef double xv, vv, g, a1, a2
    cdef int bad = -1
    cdef bint finite
    if method == 0 and xi2 is None:
        raise ValueError("UBU needs xi2")
    with nogil:
        for s in range(S):
            finite = True
            for c in range(C):
                for j in range(d):
                    xv = x[c, j]
                    vv = v[c, j]
                    if method == 0:
                        a1 = xi1[s, 0, c, j]
                        a2 = xi2[s, 0, c, j]
                        xv = xv + F * vv + nx1 * a1 + nx2 * a2
                        vv = eta * vv + nv1 * a1 + nv2 * a2
                        g = _grad(xv, j, P, Cn, full, batch, s, c, scale)
                        if has_noise:
                            g = g + noise[s, c, j]
                        vv = vv - h * g
                        a1 = xi1[s, 1, c, j]
                        a2 = xi2[s, 1, c, j]
                        xv = xv + F * vv + nx1 * a1 + nx2 * a2
                        vv = eta * vv + nv1 * a1 + nv2 * a2
                    elif method == 1:
                        xv = xv + h * vv
                        g = _grad(xv, j, P, Cn, full, batch, s, c, scale)
                        if has_noise:
                            g = g + noise[s, c, j]
                        vv = vv - h * g - hg * vv + sq * ((xi1[s, 0, c, j] + xi1[s, 1, c, j]) * INV_SQRT2)
                    else:
                        g = _grad(xv, j, P, Cn, full, batch, s, c, scale)
                        if has_noise:
                            g = g + noise[s, c, j]
                        xv = xv - h * g + sq * ((xi1[s, 0, c, j] + xi1[s, 1, c, j]) * INV_SQRT2)
                    x[c, j] = xv
                    v[c, j] = vv
                    if rec_x:
                        out_x[s, c, j] = xv
                    if rec_v:
                        out_v[s, c, j] = vv
                    if not (isfinite(xv) and isfinite(vv)):
                        finite = False
            if not finite:
                bad = <int>s
                break
    return bad
