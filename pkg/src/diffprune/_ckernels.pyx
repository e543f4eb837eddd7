# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im kernels for strided, zero-padded 2-D convolution.

Column layout is ``[C*kh*kw, N*Ho*Wo]`` with rows ordered (c, i, j) and
columns ordered (n, oh, ow), matching :mod:`diffprune._kernels_py`.
"""
import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy, memset

ctypedef fused real:
    float
    double


cdef inline void _valid_range(Py_ssize_t j, Py_ssize_t stride, Py_ssize_t pad,
                              Py_ssize_t w, Py_ssize_t wo,
                              Py_ssize_t *lo, Py_ssize_t *hi) noexcept nogil:
    # output columns ow with 0 <= ow*stride + j - pad < w
    cdef Py_ssize_t a = pad - j
    lo[0] = 0 if a <= 0 else (a + stride - 1) // stride
    a = w - 1 + pad - j
    hi[0] = -1 if a < 0 else a // stride
    hi[0] += 1
    if hi[0] > wo:
        hi[0] = wo
    if lo[0] > hi[0]:
        lo[0] = hi[0]


def _im2col(const real[:, :, :, ::1] x, real[:, ::1] cols,
            Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad,
            Py_ssize_t ho, Py_ssize_t wo):
    cdef Py_ssize_t n_batch = x.shape[0], n_chan = x.shape[1]
    cdef Py_ssize_t h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t c, i, j, n, oh, ow, row, col, ih, lo, hi, off
    with nogil:
        for c in range(n_chan):
            for i in range(kh):
                for j in range(kw):
                    row = (c * kh + i) * kw + j
                    _valid_range(j, stride, pad, w, wo, &lo, &hi)
                    off = j - pad
                    col = 0
                    for n in range(n_batch):
                        for oh in range(ho):
                            ih = oh * stride + i - pad
                            if ih < 0 or ih >= h:
                                for ow in range(wo):
                                    cols[row, col + ow] = 0
                            else:
                                for ow in range(lo):
                                    cols[row, col + ow] = 0
                                if stride == 1 and hi > lo:
                                    memcpy(&cols[row, col + lo], &x[n, c, ih, lo + off],
                                           (hi - lo) * sizeof(real))
                                else:
                                    for ow in range(lo, hi):
                                        cols[row, col + ow] = x[n, c, ih, ow * stride + off]
                                for ow in range(hi, wo):
                                    cols[row, col + ow] = 0
                            col += wo


def _col2im(const real[:, ::1] cols, real[:, :, :, ::1] dx,
            Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad,
            Py_ssize_t ho, Py_ssize_t wo):
    cdef Py_ssize_t n_batch = dx.shape[0], n_chan = dx.shape[1]
    cdef Py_ssize_t h = dx.shape[2], w = dx.shape[3]
    cdef Py_ssize_t c, i, j, n, oh, ow, row, col, ih, lo, hi, off
    with nogil:
        for c in range(n_chan):
            for i in range(kh):
                for j in range(kw):
                    row = (c * kh + i) * kw + j
                    _valid_range(j, stride, pad, w, wo, &lo, &hi)
                    off = j - pad
                    col = 0
                    for n in range(n_batch):
                        for oh in range(ho):
                            ih = oh * stride + i - pad
                            if ih >= 0 and ih < h:
                                for ow in range(lo, hi):
                                    dx[n, c, ih, ow * stride + off] += cols[row, col + ow]
                            col += wo


def im2col(x, int kh, int kw, int stride, int pad):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols = np.empty((c * kh * kw, n * ho * wo), dtype=x.dtype)
    _im2col(x, cols, kh, kw, stride, pad, ho, wo)
    return cols


def col2im(cols, tuple x_shape, int kh, int kw, int stride, int pad):
    cols = np.ascontiguousarray(cols)
    n, c, h, w = x_shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    dx = np.zeros(x_shape, dtype=cols.dtype)
    _col2im(cols, dx, kh, kw, stride, pad, ho, wo)
    return dx
