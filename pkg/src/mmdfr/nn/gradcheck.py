"""Finite-difference verification of the analytic gradients.

Errors are norm-wise relative errors per gradient tensor,
``|analytic - numeric| / max(|analytic|, |numeric|)``, maximized over the
tensors of a layer and over trials.
"""

import numpy as np

from mmdfr.nn import layers as L
from mmdfr.nn.losses import triplet_loss


def numeric_grad(f, x, h):
    """Central differences of the scalar function ``f`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, n):
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def _check(forward, backward, tensors, h, rng, dtype):
    """``forward()`` -> output array; ``backward(dout)`` -> gradients aligned with ``tensors``."""
    out = forward()
    r = rng.standard_normal(np.shape(out)).astype(dtype)

    def loss():
        return float(np.sum(np.asarray(forward(), dtype=np.float64) * r))

    analytic = backward(r)
    return max(rel_error(a, numeric_grad(loss, t, h)) for a, t in zip(analytic, tensors))


def _away_from_zero(rng, shape, dtype, gap=0.05):
    x = rng.standard_normal(shape)
    x = np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap + x, x)
    return x.astype(dtype)


def _case(kind, rng, dtype, h):
    if kind == "conv":
        x = rng.standard_normal((2, 2, 6, 5)).astype(dtype)
        w = rng.standard_normal((3, 2, 3, 3)).astype(dtype)
        b = rng.standard_normal(3).astype(dtype)
        state = {}

        def fwd():
            out, state["c"] = L.conv2d_forward(x, w, b, stride=1, pad=1)
            return out

        def bwd(d):
            fwd()
            return L.conv2d_backward(d, state["c"])

        return _check(fwd, bwd, [x, w, b], h, rng, dtype)

    if kind in ("maxpool", "meanpool"):
        # distinct values keep max-pool argmaxes stable under perturbation
        x = (rng.permutation(2 * 7 * 6).reshape(1, 2, 7, 6) * 0.1 + rng.random((1, 2, 7, 6)) * 0.01).astype(dtype)
        state = {}

        def fwd():
            out, state["c"] = L.pool2d_forward(x, kind[:-4], 2, 2, 1)
            return out

        def bwd(d):
            fwd()
            return [L.pool2d_backward(d, state["c"])]

        return _check(fwd, bwd, [x], h, rng, dtype)

    if kind == "fc":
        x = rng.standard_normal((3, 7)).astype(dtype)
        w = rng.standard_normal((7, 4)).astype(dtype)
        b = rng.standard_normal(4).astype(dtype)

        def fwd():
            return L.fc_forward(x, w, b)[0]

        def bwd(d):
            return L.fc_backward(d, L.fc_forward(x, w, b)[1])

        return _check(fwd, bwd, [x, w, b], h, rng, dtype)

    if kind == "relu":
        z = _away_from_zero(rng, (4, 9), dtype)

        def fwd():
            return L.relu_forward(z)[0]

        def bwd(d):
            return [L.relu_backward(d, L.relu_forward(z)[1])]

        return _check(fwd, bwd, [z], h, rng, dtype)

    if kind == "dropout":
        # fixed mask: the layer is linear given its mask
        x = rng.standard_normal((4, 10)).astype(dtype)
        mask_rng_state = np.random.default_rng(int(rng.integers(1 << 31)))
        _, mask = L.dropout_forward(x, 0.4, True, mask_rng_state)

        def fwd():
            return x * mask

        def bwd(d):
            return [L.dropout_backward(d, mask)]

        return _check(fwd, bwd, [x], h, rng, dtype)

    if kind == "softmax":
        logits = rng.standard_normal((3, 6)).astype(dtype)
        labels = rng.integers(0, 6, size=3)

        def loss():
            return L.softmax_cross_entropy(logits, labels)[0]

        analytic = L.softmax_cross_entropy(logits, labels)[1]
        return rel_error(analytic, numeric_grad(loss, logits, h))

    if kind == "triplet":
        # active case: positives far, negatives near
        while True:
            a, p, n = (v / np.linalg.norm(v) for v in rng.standard_normal((3, 8)))
            if np.sum((a - p) ** 2) - np.sum((a - n) ** 2) + 0.2 > 0.05:
                break
        a, p, n = (v.astype(dtype) for v in (a, p, n))

        def loss():
            return triplet_loss(a, p, n, 0.2)[0]

        grads = triplet_loss(a, p, n, 0.2)[1]
        return max(rel_error(g, numeric_grad(loss, t, h)) for g, t in zip(grads, (a, p, n)))

    if kind == "l2norm":
        x = rng.standard_normal((3, 5)).astype(dtype)

        def fwd():
            return L.l2_normalize_rows(x)[0]

        def bwd(d):
            return [L.l2_normalize_rows_backward(d, L.l2_normalize_rows(x)[1])]

        return _check(fwd, bwd, [x], h, rng, dtype)

    if kind in ("sigmoid", "tanh"):
        from mmdfr.fusion import activation, activation_grad

        z = rng.standard_normal((3, 7)).astype(dtype)

        def fwd():
            return activation(kind, z)

        def bwd(d):
            return [d * activation_grad(kind, activation(kind, z))]

        return _check(fwd, bwd, [z], h, rng, dtype)

    if kind in ("ae-sigmoid", "ae-tanh"):
        from mmdfr.fusion import AutoEncoder

        ae = AutoEncoder.init(6, 4, kind[3:], linear_decoder=kind == "ae-tanh", rng=rng, dtype=dtype)
        x = rng.random((5, 6)).astype(dtype)

        def loss():
            return ae.loss_and_grads(x)[0]

        _, grads = ae.loss_and_grads(x)
        return max(rel_error(grads[k], numeric_grad(loss, ae.params[k], h)) for k in ae.params)

    raise ValueError(f"unknown layer kind {kind!r}")


KINDS = ("conv", "maxpool", "meanpool", "fc", "relu", "dropout", "softmax", "triplet", "l2norm",
         "sigmoid", "tanh", "ae-sigmoid", "ae-tanh")


def gradient_check(kind, trials=3, h=1e-5, dtype=np.float64, seed=0):
    """Maximum relative error between analytic and central-difference gradients."""
    rng = np.random.default_rng(seed)
    return max(_case(kind, rng, dtype, h) for _ in range(trials))
