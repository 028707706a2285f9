# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled hot kernels: dense/separable correlation bands, per-beam signal
accumulation and the range-stacking overwrite pass.

Accumulation order (row-major over kernel cells, ascending range bins) and
the expression tree of every floating-point term match ``_kernels_py.py``
exactly; together with -ffp-contract=off this makes both backends and the
brute-force oracle bit-identical.
"""

import numpy as np

cimport cython
cimport numpy as cnp


def correlate2d_direct_band(double[:, ::1] img, double[:, ::1] ker,
                            double[:, ::1] out, Py_ssize_t y0, Py_ssize_t y1):
    cdef Py_ssize_t H = img.shape[0], W = img.shape[1]
    cdef Py_ssize_t kh = ker.shape[0], kw = ker.shape[1]
    cdef Py_ssize_t cy = kh // 2, cx = kw // 2
    cdef Py_ssize_t x, y, i, j, yy, xx
    cdef double acc
    with nogil:
        for y in range(y0, y1):
            for x in range(W):
                acc = 0.0
                for j in range(kh):
                    yy = y + j - cy
                    if yy < 0 or yy >= H:
                        continue
                    for i in range(kw):
                        xx = x + i - cx
                        if xx < 0 or xx >= W:
                            continue
                        acc += ker[j, i] * img[yy, xx]
                out[y, x] = acc


def correlate_sep_h_band(double[:, ::1] img, double[::1] h,
                         double[:, ::1] out, Py_ssize_t y0, Py_ssize_t y1):
    # row-contiguous accumulation; per-pixel add order (i ascending) matches
    # the per-pixel scalar loop and the NumPy twin bit for bit
    cdef Py_ssize_t W = img.shape[1]
    cdef Py_ssize_t kw = h.shape[0]
    cdef Py_ssize_t cx = kw // 2
    cdef Py_ssize_t x, y, i, sx, a0, a1
    cdef double w
    with nogil:
        for y in range(y0, y1):
            for x in range(W):
                out[y, x] = 0.0
            for i in range(kw):
                w = h[i]
                sx = i - cx
                a0 = -sx if sx < 0 else 0
                a1 = W - sx if sx > 0 else W
                for x in range(a0, a1):
                    out[y, x] += w * img[y, x + sx]


def correlate_sep_v_band(double[:, ::1] img, double[::1] v,
                         double[:, ::1] out, Py_ssize_t y0, Py_ssize_t y1):
    cdef Py_ssize_t H = img.shape[0], W = img.shape[1]
    cdef Py_ssize_t kh = v.shape[0]
    cdef Py_ssize_t cy = kh // 2
    cdef Py_ssize_t x, y, j, yy
    cdef double w
    with nogil:
        for y in range(y0, y1):
            for x in range(W):
                out[y, x] = 0.0
            for j in range(kh):
                yy = y + j - cy
                if yy < 0 or yy >= H:
                    continue
                w = v[j]
                for x in range(W):
                    out[y, x] += w * img[yy, x]


def beam_accumulate(double[:, ::1] rho, int[:, ::1] lo, int[:, ::1] hi,
                    double[:, ::1] ker, Py_ssize_t u0, Py_ssize_t v0,
                    double[::1] eta):
    cdef Py_ssize_t H = rho.shape[0], W = rho.shape[1]
    cdef Py_ssize_t kh = ker.shape[0], kw = ker.shape[1]
    cdef Py_ssize_t cy = kh // 2, cx = kw // 2
    cdef Py_ssize_t i, j, x, y
    cdef int s, s0, s1
    cdef double share
    with nogil:
        for j in range(kh):
            y = v0 + j - cy
            if y < 0 or y >= H:
                continue
            for i in range(kw):
                x = u0 + i - cx
                if x < 0 or x >= W:
                    continue
                s0 = lo[y, x]
                if s0 < 0:
                    continue
                s1 = hi[y, x]
                share = (rho[y, x] * ker[j, i]) / <double>(s1 - s0 + 1)
                for s in range(s0, s1 + 1):
                    eta[s] += share


def stack_update_band(double[:, ::1] conv, int s, double rho_min,
                      bint strongest, double[:, ::1] eta_nearest,
                      int[:, ::1] s_nearest, Py_ssize_t y0, Py_ssize_t y1):
    cdef Py_ssize_t W = conv.shape[1]
    cdef Py_ssize_t x, y
    cdef double c
    with nogil:
        for y in range(y0, y1):
            for x in range(W):
                c = conv[y, x]
                if c >= rho_min and (not strongest or c > eta_nearest[y, x]):
                    eta_nearest[y, x] = c
                    s_nearest[y, x] = s
