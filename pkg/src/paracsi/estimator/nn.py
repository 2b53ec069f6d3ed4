"""Forward/backward pairs for the few layers the estimator needs.

Each ``*_forward`` returns its output and a cache tuple; the matching
``*_backward`` takes the upstream gradient and the cache and returns the
input gradient plus parameter gradients.
"""

import math

import numpy as np

LEAKY_SLOPE = 0.1


def leaky_relu(x, slope=LEAKY_SLOPE):
    """max(slope*x, x); valid for 0 < slope < 1."""
    return np.maximum(slope * x, x)


def leaky_relu_backward(g, x, slope=LEAKY_SLOPE):
    return np.where(x >= 0, g, slope * g)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def linear_forward(x, w, b):
    return x @ w + b, (x,)


def linear_backward(g, cache, w):
    (x,) = cache
    x2 = x.reshape(-1, x.shape[-1])
    g2 = g.reshape(-1, g.shape[-1])
    return g @ w.T, x2.T @ g2, g2.sum(axis=0)


def _heads_matrix(w):
    # (H, d, dk) -> (d, H*dk) so all heads project in one matmul
    h, d, dk = w.shape
    return w.transpose(1, 0, 2).reshape(d, h * dk)


def _split_heads(x, h):
    b, t, hd = x.shape
    return x.reshape(b, t, h, hd // h).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dk)


def attention_forward(s, w_q, w_k, w_v):
    """Multi-head self-attention without output projection.

    s: (B, T, d); w_*: (H, d, d/H). Returns Z (B, T, d) with heads
    concatenated along the feature axis, and the attention maps (B, H, T, T).
    """
    h, _, dk = w_q.shape
    q, k, v = (_split_heads(s @ _heads_matrix(w), h) for w in (w_q, w_k, w_v))
    a = softmax(q @ k.transpose(0, 1, 3, 2) / math.sqrt(dk))
    z = _merge_heads(a @ v)
    return z, a, (s, q, k, v, a)


def attention_backward(g, cache, w_q, w_k, w_v):
    s, q, k, v, a = cache
    h, d, dk = w_q.shape
    gzh = _split_heads(g, h)
    ga = gzh @ v.transpose(0, 1, 3, 2)
    gv = a.transpose(0, 1, 3, 2) @ gzh
    gscore = a * (ga - np.sum(ga * a, axis=-1, keepdims=True)) / math.sqrt(dk)
    gq = gscore @ k
    gk = gscore.transpose(0, 1, 3, 2) @ q
    s2 = s.reshape(-1, d)
    grads = []
    gs = np.zeros_like(s)
    for gx, w in ((gq, w_q), (gk, w_k), (gv, w_v)):
        gflat = _merge_heads(gx)
        gw = s2.T @ gflat.reshape(-1, h * dk)
        grads.append(gw.reshape(d, h, dk).transpose(1, 0, 2))
        gs += gflat @ _heads_matrix(w).T
    return gs, grads


def layer_norm_forward(z, scale, shift, eps):
    mu = z.mean(axis=-1, keepdims=True)
    var = z.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    zhat = (z - mu) * inv
    return scale * zhat + shift, (zhat, inv)


def layer_norm_backward(g, cache, scale):
    zhat, inv = cache
    axes = tuple(range(g.ndim - 1))
    gscale = np.sum(g * zhat, axis=axes)
    gshift = np.sum(g, axis=axes)
    gh = g * scale
    gz = inv * (gh - gh.mean(axis=-1, keepdims=True) - zhat * np.mean(gh * zhat, axis=-1, keepdims=True))
    return gz, gscale, gshift


def conv2d_forward(x, w, b):
    """Zero-padded 'same' convolution. x: (B, C_in, H, W); w: (C_out, C_in, k, k), k odd."""
    k = w.shape[-1]
    p = k // 2
    _, _, hh, ww = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((x.shape[0], w.shape[0], hh, ww))
    for u in range(k):
        for v in range(k):
            out += np.tensordot(w[:, :, u, v], xp[:, :, u : u + hh, v : v + ww], axes=(1, 1)).transpose(1, 0, 2, 3)
    return out + b[None, :, None, None], (xp,)


def conv2d_backward(g, cache, w):
    (xp,) = cache
    k = w.shape[-1]
    p = k // 2
    _, _, hh, ww = g.shape
    gw = np.empty_like(w)
    gxp = np.zeros_like(xp)
    for u in range(k):
        for v in range(k):
            win = xp[:, :, u : u + hh, v : v + ww]
            gw[:, :, u, v] = np.tensordot(g, win, axes=((0, 2, 3), (0, 2, 3)))
            gxp[:, :, u : u + hh, v : v + ww] += np.tensordot(w[:, :, u, v], g, axes=(0, 1)).transpose(1, 0, 2, 3)
    gb = g.sum(axis=(0, 2, 3))
    return gxp[:, :, p : p + hh, p : p + ww], gw, gb
