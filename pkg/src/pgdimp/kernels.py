"""Hot numeric kernels for the classifier runtime.

Every kernel exists twice: an explicit-loop version compiled with numba and
a broadcasting numpy version. Both compute each sample's outputs from that
sample alone, with a reduction order that does not depend on the batch size,
so a batch of N gives bit-identical rows to N batches of one. The attack
loop relies on that when it freezes finished samples.

Shapes:
    conv:  x (N, C, H, W), w (O, C, kh, kw), b (O,) -> (N, O, H-kh+1, W-kw+1)
    dense: x (N, K), w (M, K), b (M,) -> (N, M)
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import USE_NUMBA, njit

# ----------------------------------------------------------------------------
# numpy
# ----------------------------------------------------------------------------


def _np_conv2d_forward(x, w, b):
    o, c, kh, kw = w.shape
    patches = sliding_window_view(x, (kh, kw), axis=(2, 3))  # N C Ho Wo kh kw
    n, _, ho, wo = patches.shape[:4]
    cols = np.ascontiguousarray(patches.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho, wo, 1, c * kh * kw)
    out = (cols * w.reshape(1, 1, 1, o, c * kh * kw)).sum(axis=-1)
    out += b
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _np_conv2d_backward_input(g, w):
    o, c, kh, kw = w.shape
    n, _, ho, wo = g.shape
    padded = np.zeros((n, o, ho + 2 * (kh - 1), wo + 2 * (kw - 1)))
    padded[:, :, kh - 1 : kh - 1 + ho, kw - 1 : kw - 1 + wo] = g
    patches = sliding_window_view(padded, (kh, kw), axis=(2, 3))  # N O H W kh kw
    h, wd = patches.shape[2:4]
    cols = np.ascontiguousarray(patches.transpose(0, 2, 3, 1, 4, 5)).reshape(n, h, wd, 1, o * kh * kw)
    # full correlation with the spatially flipped kernel, input channels as outputs
    wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)).reshape(1, 1, 1, c, o * kh * kw)
    out = (cols * wf).sum(axis=-1)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _np_conv2d_backward_weight(x, g, kh, kw):
    patches = sliding_window_view(x, (kh, kw), axis=(2, 3))  # N C Ho Wo kh kw
    return np.einsum("ncijkl,noij->ockl", patches, g)


def _np_dense_forward(x, w, b):
    return (x[:, None, :] * w[None, :, :]).sum(axis=-1) + b


def _np_dense_backward_input(g, w):
    wt = np.ascontiguousarray(w.T)
    return (g[:, None, :] * wt[None, :, :]).sum(axis=-1)


# ----------------------------------------------------------------------------
# numba
# ----------------------------------------------------------------------------


@njit
def _nb_conv2d_forward(x, w, b):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = h - kh + 1
    wo = wd - kw + 1
    out = np.empty((n, o, ho, wo))
    for s in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ic in range(c):
                        for p in range(kh):
                            for q in range(kw):
                                acc += x[s, ic, i + p, j + q] * w[oc, ic, p, q]
                    out[s, oc, i, j] = acc + b[oc]
    return out


@njit
def _nb_conv2d_backward_input(g, w):
    n, o, ho, wo = g.shape
    _, c, kh, kw = w.shape
    h = ho + kh - 1
    wd = wo + kw - 1
    out = np.zeros((n, c, h, wd))
    for s in range(n):
        for ic in range(c):
            for y in range(h):
                for z in range(wd):
                    acc = 0.0
                    for oc in range(o):
                        for p in range(kh):
                            i = y - p
                            if i < 0 or i >= ho:
                                continue
                            for q in range(kw):
                                j = z - q
                                if j < 0 or j >= wo:
                                    continue
                                acc += g[s, oc, i, j] * w[oc, ic, p, q]
                    out[s, ic, y, z] = acc
    return out


@njit
def _nb_conv2d_backward_weight(x, g, kh, kw):
    n, c, h, wd = x.shape
    _, o, ho, wo = g.shape
    out = np.zeros((o, c, kh, kw))
    for oc in range(o):
        for ic in range(c):
            for p in range(kh):
                for q in range(kw):
                    acc = 0.0
                    for s in range(n):
                        for i in range(ho):
                            for j in range(wo):
                                acc += x[s, ic, i + p, j + q] * g[s, oc, i, j]
                    out[oc, ic, p, q] = acc
    return out


@njit
def _nb_dense_forward(x, w, b):
    n, k = x.shape
    m = w.shape[0]
    out = np.empty((n, m))
    for s in range(n):
        for r in range(m):
            acc = 0.0
            for i in range(k):
                acc += x[s, i] * w[r, i]
            out[s, r] = acc + b[r]
    return out


@njit
def _nb_dense_backward_input(g, w):
    n, m = g.shape
    k = w.shape[1]
    out = np.zeros((n, k))
    for s in range(n):
        for i in range(k):
            acc = 0.0
            for r in range(m):
                acc += g[s, r] * w[r, i]
            out[s, i] = acc
    return out


NUMPY_KERNELS = {
    "conv2d_forward": _np_conv2d_forward,
    "conv2d_backward_input": _np_conv2d_backward_input,
    "conv2d_backward_weight": _np_conv2d_backward_weight,
    "dense_forward": _np_dense_forward,
    "dense_backward_input": _np_dense_backward_input,
}

NUMBA_KERNELS = {
    "conv2d_forward": _nb_conv2d_forward,
    "conv2d_backward_input": _nb_conv2d_backward_input,
    "conv2d_backward_weight": _nb_conv2d_backward_weight,
    "dense_forward": _nb_dense_forward,
    "dense_backward_input": _nb_dense_backward_input,
}

BACKEND = "numba" if USE_NUMBA else "numpy"
_ACTIVE = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(x, w, b):
    return _ACTIVE["conv2d_forward"](_c(x), _c(w), _c(b))


def conv2d_backward_input(g, w):
    return _ACTIVE["conv2d_backward_input"](_c(g), _c(w))


def conv2d_backward_weight(x, g, kh, kw):
    return _ACTIVE["conv2d_backward_weight"](_c(x), _c(g), int(kh), int(kw))


def dense_forward(x, w, b):
    return _ACTIVE["dense_forward"](_c(x), _c(w), _c(b))


def dense_backward_input(g, w):
    return _ACTIVE["dense_backward_input"](_c(g), _c(w))
