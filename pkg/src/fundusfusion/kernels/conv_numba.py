"""Numba-jitted convolution kernels, same contracts as conv_numpy.

Sequential (no prange): the model must give bit-stable results on a single
core, and the desk-scale arrays are too small for threading to pay anyway.
cache=True keeps compiled artifacts across processes.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_forward(x, w, stride):
    b, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h - kh) // stride + 1
    wo = (wd - kw) // stride + 1
    out = np.zeros((b, o, ho, wo), dtype=np.float64)
    for n in range(b):
        for oc in range(o):
            for y in range(ho):
                for z in range(wo):
                    acc = 0.0
                    for ic in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                acc += x[n, ic, y * stride + i, z * stride + j] * w[oc, ic, i, j]
                    out[n, oc, y, z] = acc
    return out


@njit(cache=True)
def conv2d_grad_input(g, w, stride, h, wd):
    b, o, ho, wo = g.shape
    _, c, kh, kw = w.shape
    gx = np.zeros((b, c, h, wd), dtype=np.float64)
    for n in range(b):
        for oc in range(o):
            for y in range(ho):
                for z in range(wo):
                    gv = g[n, oc, y, z]
                    for ic in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                gx[n, ic, y * stride + i, z * stride + j] += gv * w[oc, ic, i, j]
    return gx


@njit(cache=True)
def conv2d_grad_weight(g, x, stride, kh, kw):
    b, o, ho, wo = g.shape
    c = x.shape[1]
    gw = np.zeros((o, c, kh, kw), dtype=np.float64)
    for n in range(b):
        for oc in range(o):
            for y in range(ho):
                for z in range(wo):
                    gv = g[n, oc, y, z]
                    for ic in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                gw[oc, ic, i, j] += gv * x[n, ic, y * stride + i, z * stride + j]
    return gw


def warmup():
    """Trigger JIT compilation on token-sized inputs."""
    x = np.ones((1, 2, 4, 4))
    w = np.ones((3, 2, 2, 2))
    out = conv2d_forward(x, w, 2)
    conv2d_grad_input(out, w, 2, 4, 4)
    conv2d_grad_weight(out, x, 2, 2, 2)
