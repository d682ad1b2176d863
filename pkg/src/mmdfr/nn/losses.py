"""Triplet loss and in-batch triplet mining."""

import numpy as np

from mmdfr.errors import DimensionError

DEFAULT_MARGIN = 0.2


def triplet_loss(anchor, positive, negative, margin=DEFAULT_MARGIN):
    """``max(0, |a-p|^2 - |a-n|^2 + margin)`` and its gradients (ga, gp, gn).

    Inputs are expected to be L2-normalized already.  Batched inputs (rows)
    return the per-triplet losses and per-row gradients.
    """
    a = np.asarray(anchor)
    p = np.asarray(positive)
    n = np.asarray(negative)
    if not a.shape == p.shape == n.shape:
        raise DimensionError("anchor, positive and negative must share a shape")
    d_ap = ((a - p) ** 2).sum(axis=-1)
    d_an = ((a - n) ** 2).sum(axis=-1)
    loss = d_ap - d_an + margin
    active = loss > 0
    loss = np.where(active, loss, 0.0)
    act = np.asarray(active, dtype=a.dtype)[..., None] if a.ndim > 1 else a.dtype.type(active)
    ga = 2.0 * (n - p) * act
    gp = -2.0 * (a - p) * act
    gn = 2.0 * (a - n) * act
    if a.ndim == 1:
        loss = float(loss)
    return loss, (ga, gp, gn)


def pairwise_sq_dists(x):
    sq = (x * x).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    return np.maximum(d, 0.0)


def select_triplets(features, labels, margin=DEFAULT_MARGIN):
    """Semi-hard triplet mining inside one batch.

    For every ordered anchor-positive pair, pick the closest negative with
    ``d_ap < d_an < d_ap + margin``; when none exists fall back to the
    hardest (closest) negative.  Returns an (M, 3) int array, possibly empty.
    """
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    d = pairwise_sq_dists(x)
    out = []
    for i in range(len(x)):
        same = labels == labels[i]
        neg = np.nonzero(~same)[0]
        if len(neg) == 0:
            continue
        d_neg = d[i, neg]
        for j in np.nonzero(same)[0]:
            if j == i:
                continue
            d_ap = d[i, j]
            semi = (d_neg > d_ap) & (d_neg < d_ap + margin)
            if semi.any():
                cand = np.nonzero(semi)[0]
                k = neg[cand[np.argmin(d_neg[cand])]]
            else:
                k = neg[np.argmin(d_neg)]
            out.append((i, j, k))
    return np.array(out, dtype=np.int64).reshape(-1, 3)
