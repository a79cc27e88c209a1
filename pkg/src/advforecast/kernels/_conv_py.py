"""Pure numpy implementation of the stride-1, zero-padded ("same") 2-D convolution.

Layout is NCHW for activations and (F, C, K, K) for filters. Both the forward
pass and the two backward products go through an im2col buffer of shape
(N, C*K*K, H*W) so that the heavy lifting lands in a single batched matmul.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(x, k):
    n, c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (N, C, H, W, K, K)
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * k * k, h * w)


def _col2im(cols, shape, k):
    n, c, h, w = shape
    p = k // 2
    cols = cols.reshape(n, c, k, k, h, w)
    out = np.zeros((n, c, h + 2 * p, w + 2 * p))
    for ky in range(k):
        for kx in range(k):
            out[:, :, ky:ky + h, kx:kx + w] += cols[:, :, ky, kx]
    return out[:, :, p:p + h, p:p + w]


def conv2d_forward(x, weight, bias):
    n, _, h, w = x.shape
    f, _, k, _ = weight.shape
    cols = _im2col(x, k)
    out = np.matmul(weight.reshape(f, -1), cols)
    out += bias[None, :, None]
    return out.reshape(n, f, h, w)


def conv2d_backward(x, weight, grad_out, need_input=True, need_weight=True):
    """Return (grad_x, grad_weight, grad_bias); entries not requested are None."""
    n, _, h, w = x.shape
    f, _, k, _ = weight.shape
    g = grad_out.reshape(n, f, h * w)
    gx = gw = gb = None
    if need_input:
        dcols = np.matmul(weight.reshape(f, -1).T, g)
        gx = _col2im(dcols, x.shape, k)
    if need_weight:
        cols = _im2col(x, k)
        gw = np.einsum("nfp,nqp->fq", g, cols).reshape(weight.shape)
        gb = g.sum(axis=(0, 2))
    return gx, gw, gb
