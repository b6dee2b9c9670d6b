"""Pure-numpy 2-D convolution kernels: forward plus both gradients.

Layout: activations [B, C, H, W], weights [O, C, KH, KW], float64.
Callers apply zero padding before handing arrays to these kernels, so every
function here sees the padded geometry. Stride is one int for both axes.

The loops run over kernel offsets only (KH*KW iterations); each iteration is
a strided-view tensordot, so the heavy lifting stays in BLAS.
"""

import numpy as np


def conv2d_forward(x, w, stride):
    b, c, h, wd = x.shape
    o, c2, kh, kw = w.shape
    ho = (h - kh) // stride + 1
    wo = (wd - kw) // stride + 1
    out = np.zeros((b, o, ho, wo), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            patch = x[:, :, i : i + stride * (ho - 1) + 1 : stride,
                      j : j + stride * (wo - 1) + 1 : stride]
            # [O,C] . [B,C,Ho,Wo] -> [O,B,Ho,Wo]
            out += np.moveaxis(
                np.tensordot(w[:, :, i, j], patch, axes=([1], [1])), 0, 1)
    return out


def conv2d_grad_input(g, w, stride, h, wd):
    """Gradient wrt the (padded) input, shape [B, C, h, wd]."""
    b, o, ho, wo = g.shape
    _, c, kh, kw = w.shape
    gx = np.zeros((b, c, h, wd), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(w[:, :, i, j], g, axes=([0], [1]))  # [C,B,Ho,Wo]
            gx[:, :, i : i + stride * (ho - 1) + 1 : stride,
               j : j + stride * (wo - 1) + 1 : stride] += np.moveaxis(contrib, 0, 1)
    return gx


def conv2d_grad_weight(g, x, stride, kh, kw):
    """Gradient wrt the weights, shape [O, C, kh, kw]. x is the padded input."""
    b, o, ho, wo = g.shape
    c = x.shape[1]
    gw = np.zeros((o, c, kh, kw), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            patch = x[:, :, i : i + stride * (ho - 1) + 1 : stride,
                      j : j + stride * (wo - 1) + 1 : stride]
            gw[:, :, i, j] = np.tensordot(g, patch, axes=([0, 2, 3], [0, 2, 3]))
    return gw
