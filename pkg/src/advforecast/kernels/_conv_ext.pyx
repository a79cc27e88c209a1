# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stride-1 "same" convolution: im2col/col2im loops plus BLAS dgemm.

Mirrors ``_conv_py`` exactly in layout and semantics; results agree with it to
rounding (BLAS call shapes differ from numpy's batched matmul).
"""

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _im2col(const double[:, :, ::1] x, double[:, ::1] cols, int k) noexcept nogil:
    # x: (C, H, W) for one sample, cols: (C*K*K, H*W)
    cdef int c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef int p = k // 2
    cdef int ci, ky, kx, y, xx, sy, sx, row
    for ci in range(c):
        for ky in range(k):
            for kx in range(k):
                row = (ci * k + ky) * k + kx
                for y in range(h):
                    sy = y + ky - p
                    if sy < 0 or sy >= h:
                        for xx in range(w):
                            cols[row, y * w + xx] = 0.0
                        continue
                    for xx in range(w):
                        sx = xx + kx - p
                        if sx < 0 or sx >= w:
                            cols[row, y * w + xx] = 0.0
                        else:
                            cols[row, y * w + xx] = x[ci, sy, sx]


cdef void _col2im(const double[:, ::1] cols, double[:, :, ::1] gx, int k) noexcept nogil:
    cdef int c = gx.shape[0], h = gx.shape[1], w = gx.shape[2]
    cdef int p = k // 2
    cdef int ci, ky, kx, y, xx, sy, sx, row
    for ci in range(c):
        for ky in range(k):
            for kx in range(k):
                row = (ci * k + ky) * k + kx
                for y in range(h):
                    sy = y + ky - p
                    if sy < 0 or sy >= h:
                        continue
                    for xx in range(w):
                        sx = xx + kx - p
                        if sx >= 0 and sx < w:
                            gx[ci, sy, sx] += cols[row, y * w + xx]


def conv2d_forward(x, weight, bias):
    cdef const double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, ::1] wm = np.ascontiguousarray(weight, dtype=np.float64).reshape(weight.shape[0], -1)
    cdef const double[::1] bv = np.ascontiguousarray(bias, dtype=np.float64)
    cdef int n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3]
    cdef int f = wm.shape[0], k = weight.shape[2]
    cdef int q = c * k * k, hw = h * w
    out = np.empty((n, f, h, w))
    cdef double[:, :, ::1] ov = out.reshape(n, f, hw)
    cdef double[:, ::1] cols = np.empty((q, hw))
    cdef int i, fi, j
    cdef double one = 1.0, zero = 0.0
    cdef char tn = b'N'
    with nogil:
        for i in range(n):
            _im2col(xv[i], cols, k)
            # out_i (F x HW, row-major) = W (F x Q) @ cols (Q x HW)
            dgemm(&tn, &tn, &hw, &f, &q, &one, &cols[0, 0], &hw, &wm[0, 0], &q,
                  &zero, &ov[i, 0, 0], &hw)
            for fi in range(f):
                for j in range(hw):
                    ov[i, fi, j] += bv[fi]
    return out


def conv2d_backward(x, weight, grad_out, bint need_input=True, bint need_weight=True):
    """Return (grad_x, grad_weight, grad_bias); entries not requested are None."""
    cdef const double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, ::1] wm = np.ascontiguousarray(weight, dtype=np.float64).reshape(weight.shape[0], -1)
    cdef int n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3]
    cdef int f = wm.shape[0], k = weight.shape[2]
    cdef int q = c * k * k, hw = h * w
    cdef const double[:, :, ::1] gv = np.ascontiguousarray(grad_out, dtype=np.float64).reshape(n, f, hw)
    cdef double[:, ::1] cols = np.empty((q, hw))
    cdef double[:, :, :, ::1] gxv
    cdef double[:, ::1] gwv
    cdef double[::1] gbv
    cdef int i, fi, j
    cdef double one = 1.0, zero = 0.0, acc
    cdef char tn = b'N', tt = b'T'
    gx = gw = gb = None
    if need_input:
        gx = np.zeros((n, c, h, w))
        gxv = gx
    if need_weight:
        gw = np.zeros((f, q))
        gb = np.zeros(f)
        gwv = gw
        gbv = gb
    with nogil:
        for i in range(n):
            if need_weight:
                _im2col(xv[i], cols, k)
                # gw^T (Q x F, col-major) += cols^T^T ... i.e. gw += g_i @ cols^T
                dgemm(&tt, &tn, &q, &f, &hw, &one, &cols[0, 0], &hw, &gv[i, 0, 0], &hw,
                      &one, &gwv[0, 0], &q)
                for fi in range(f):
                    acc = 0.0
                    for j in range(hw):
                        acc = acc + gv[i, fi, j]
                    gbv[fi] += acc
            if need_input:
                # dcols (Q x HW, row-major) = W^T (Q x F) @ g_i (F x HW)
                dgemm(&tn, &tt, &hw, &q, &f, &one, &gv[i, 0, 0], &hw, &wm[0, 0], &q,
                      &zero, &cols[0, 0], &hw)
                _col2im(cols, gxv[i], k)
    if need_weight:
        gw = gw.reshape(weight.shape)
    return gx, gw, gb
