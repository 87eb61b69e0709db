# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scalar-loop kernels: edit distance and bilinear resampling."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def levenshtein(str a, str b):
    """Unit-cost insert/delete/substitute distance between two strings."""
    cdef Py_ssize_t n = len(a), m = len(b), i, j
    cdef Py_UCS4 ca
    cdef Py_ssize_t best, sub
    if n < m:
        a, b = b, a
        n, m = m, n
    if m == 0:
        return n
    cdef cnp.ndarray[cnp.intp_t, ndim=1] prev = np.arange(m + 1, dtype=np.intp)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] cur = np.empty(m + 1, dtype=np.intp)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] tmp
    cdef Py_UCS4[:] bb = np.array([ord(c) for c in b], dtype=np.uint32)
    for i in range(1, n + 1):
        ca = a[i - 1]
        cur[0] = i
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if ca == bb[j - 1] else 1)
            best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            if sub < best:
                best = sub
            cur[j] = best
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[m])


def bilinear_resize(double[:, :, ::1] img, Py_ssize_t out_h, Py_ssize_t out_w):
    """Half-pixel-centred bilinear resize of an (H, W, C) float64 image."""
    cdef Py_ssize_t in_h = img.shape[0], in_w = img.shape[1], ch = img.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.empty((out_h, out_w, ch), dtype=np.float64)
    cdef double sy = <double>in_h / out_h, sx = <double>in_w / out_w
    cdef double fy, fx, ty, tx, top, bot
    cdef Py_ssize_t y, x, c, y0, y1, x0, x1
    for y in range(out_h):
        fy = (y + 0.5) * sy - 0.5
        if fy < 0:
            fy = 0
        y0 = <Py_ssize_t>floor(fy)
        if y0 > in_h - 1:
            y0 = in_h - 1
        y1 = y0 + 1 if y0 < in_h - 1 else y0
        ty = fy - y0
        for x in range(out_w):
            fx = (x + 0.5) * sx - 0.5
            if fx < 0:
                fx = 0
            x0 = <Py_ssize_t>floor(fx)
            if x0 > in_w - 1:
                x0 = in_w - 1
            x1 = x0 + 1 if x0 < in_w - 1 else x0
            tx = fx - x0
            for c in range(ch):
                top = img[y0, x0, c] + tx * (img[y0, x1, c] - img[y0, x0, c])
                bot = img[y1, x0, c] + tx * (img[y1, x1, c] - img[y1, x0, c])
                out[y, x, c] = top + ty * (bot - top)
    return out
