"""Layer primitives on batched ``(N, C, H, W)`` / ``(N, D)`` arrays.

Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache.  Arithmetic runs in the dtype of
the inputs, so float64 arrays give a double-precision check mode.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from mmdfr.errors import DimensionError


def out_extent(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def _windows(xp, k, stride):
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _check_spatial(x, k, pad, what):
    if x.ndim != 4:
        raise DimensionError(f"{what} expects (N, C, H, W) input, got shape {x.shape}")
    if x.shape[2] + 2 * pad < k or x.shape[3] + 2 * pad < k:
        raise DimensionError(f"{what}: input {x.shape[2]}x{x.shape[3]} with pad {pad} "
                             f"is smaller than the {k}x{k} window")


def conv2d_forward(x, w, b, stride=1, pad=0):
    """Cross-correlation; ``w`` is (F, C, k, k)."""
    k = w.shape[2]
    _check_spatial(x, k, pad, "conv2d")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d: input has {x.shape[1]} channels, filters expect {w.shape[1]}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = _windows(xp, k, stride)  # N, C, Ho, Wo, k, k
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, F
    out = out.transpose(0, 3, 1, 2) + b[None, :, None, None]
    return np.ascontiguousarray(out), (x.shape, xp, w, stride, pad)


def conv2d_backward(dout, cache):
    x_shape, xp, w, stride, pad = cache
    k = w.shape[2]
    n, f, ho, wo = dout.shape
    win = _windows(xp, k, stride)
    dw = np.tensordot(dout, win, axes=([0, 2, 3], [0, 2, 3]))  # F, C, k, k
    db = dout.sum(axis=(0, 2, 3))
    dxp = np.zeros(xp.shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            contrib = np.tensordot(dout, w[:, :, i, j], axes=([1], [0]))  # N, Ho, Wo, C
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contrib.transpose(0, 3, 1, 2)
    dx = dxp[:, :, pad:pad + x_shape[2], pad:pad + x_shape[3]] if pad else dxp
    return np.ascontiguousarray(dx), dw, db


def pool2d_forward(x, kind="max", k=2, stride=2, pad=0):
    """``max`` ignores padding cells; ``mean`` counts them as zeros over the full window."""
    _check_spatial(x, k, pad, "pool2d")
    if kind == "max":
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf) if pad else x
        win = _windows(xp, k, stride)
        flat = win.reshape(*win.shape[:4], k * k)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        cache = (kind, x.shape, xp.shape, k, stride, pad, arg)
    elif kind == "mean":
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        win = _windows(xp, k, stride)
        out = win.sum(axis=(4, 5)) / (k * k)
        cache = (kind, x.shape, xp.shape, k, stride, pad, None)
    else:
        raise ValueError(f"unknown pool kind {kind!r}")
    return np.ascontiguousarray(out, dtype=x.dtype), cache


def pool2d_backward(dout, cache):
    kind, x_shape, xp_shape, k, stride, pad, arg = cache
    _, _, ho, wo = dout.shape
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    for idx in range(k * k):
        i, j = divmod(idx, k)
        if kind == "max":
            g = np.where(arg == idx, dout, 0)
        else:
            g = dout / (k * k)
        dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g
    dx = dxp[:, :, pad:pad + x_shape[2], pad:pad + x_shape[3]] if pad else dxp
    return np.ascontiguousarray(dx)


def relu_forward(z):
    mask = z > 0
    return np.where(mask, z, 0).astype(z.dtype, copy=False), mask


def relu_backward(dout, mask):
    # subgradient at exactly 0 is 0
    return np.where(mask, dout, 0).astype(dout.dtype, copy=False)


def fc_forward(x, w, b):
    """``y = W^T x + b`` for each row; ``w`` is (in, out)."""
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"fully connected layer expects {w.shape[0]} inputs, got shape {x.shape}")
    return x @ w + b, (x, w)


def fc_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def dropout_forward(x, ratio, train, rng):
    """Inverted dropout: survivors are scaled by 1 / (1 - ratio) at train time."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError("dropout ratio must lie in [0, 1)")
    if not train or ratio == 0.0:
        return x, None
    keep = rng.random(x.shape) >= ratio
    scale = x.dtype.type(1.0 / (1.0 - ratio))
    mask = keep.astype(x.dtype) * scale
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean loss over the batch and its gradient on the logits.

    Accepts a single logit vector with an int label, or (N, K) with (N,).
    """
    single = np.ndim(logits) == 1
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(labels))
    n, k = logits.shape
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must be {n} indices in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    logp = z[np.arange(n), labels] - logsum
    loss = -logp.mean()
    grad = np.exp(z - logsum[:, None])
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    if single:
        return float(loss), grad[0]
    return float(loss), grad


def l2_normalize_rows(x, eps=1e-12):
    norm = np.sqrt((x * x).sum(axis=1, keepdims=True))
    norm = np.maximum(norm, eps)
    return x / norm, (x / norm, norm)


def l2_normalize_rows_backward(dout, cache):
    y, norm = cache
    return (dout - y * (dout * y).sum(axis=1, keepdims=True)) / norm
