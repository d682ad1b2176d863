"""Two-stage CNN training: softmax classification, then triplet fine-tuning."""

import logging
from dataclasses import dataclass, field

import numpy as np

from mmdfr.errors import DivergenceError
from mmdfr.nn.layers import l2_normalize_rows, l2_normalize_rows_backward, softmax_cross_entropy
from mmdfr.nn.losses import select_triplets, triplet_loss

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs_stage1: int = 20
    lr_initial: float = 0.01
    lr_step_epochs: int = 10
    lr_floor: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4
    dropout_ratio: float = 0.4
    triplet_margin: float = 0.2
    triplet_epochs: int = 2
    triplet_lr: float = 0.001
    triplet_per_identity: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("lr_initial", "lr_floor", "triplet_lr", "triplet_margin"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def lr_at_epoch(epoch, config):
    """Divide by 10 every ``lr_step_epochs`` epochs, never below the floor."""
    lr = config.lr_initial / (10.0 ** (epoch // config.lr_step_epochs))
    return max(lr, config.lr_floor)


def sgd_step(params, grads, velocity, lr, momentum=0.9, weight_decay=5e-4, frozen=()):
    """In-place momentum SGD: ``v <- m v - lr (g + wd w); w <- w + v``."""
    for name, w in params.items():
        if name in frozen:
            continue
        g = grads[name]
        if g.shape != w.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {w.shape}")
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(w)
        v *= w.dtype.type(momentum)
        v -= w.dtype.type(lr) * (g + w.dtype.type(weight_decay) * w)
        velocity[name] = v
        w += v
    return params


@dataclass
class TrainLog:
    epoch_loss: list = field(default_factory=list)
    epoch_lr: list = field(default_factory=list)
    active_fraction: list = field(default_factory=list)


def _check_finite(loss, epoch, batch):
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {batch}")


def train_stage_softmax(net, images, labels, config, log_to=None):
    """Multi-class softmax training with the step learning-rate schedule."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= net.spec.class_count):
        raise ValueError(f"labels must lie in [0, {net.spec.class_count})")
    x_all = net.prepare(images)
    rng = np.random.default_rng(config.rng_seed)
    net.dropout_ratio = config.dropout_ratio
    net.rng = np.random.default_rng(config.rng_seed + 1)
    velocity = {}
    history = log_to or TrainLog()
    net.train()
    for epoch in range(config.epochs_stage1):
        lr = lr_at_epoch(epoch, config)
        order = rng.permutation(len(x_all))
        losses = []
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start:start + config.batch_size]
            logits = net.forward(x_all[idx], stop="logits")
            loss, dlogits = softmax_cross_entropy(logits, labels[idx])
            _check_finite(loss, epoch, b)
            grads, _ = net.backward(dlogits)
            sgd_step(net.params, grads, velocity, lr, config.momentum, config.weight_decay)
            losses.append(loss * len(idx))
        mean = float(np.sum(losses) / max(len(order), 1))
        _check_finite(mean, epoch, -1)
        history.epoch_loss.append(mean)
        history.epoch_lr.append(lr)
        log.info("softmax epoch %d lr %.4g loss %.4f", epoch, lr, mean)
    net.eval()
    return net, history


def identity_batches(labels, per_identity, batch_size, rng):
    """Batches assembled from shuffled groups of up to ``per_identity`` same-label samples."""
    groups = []
    for lab in np.unique(labels):
        idx = rng.permutation(np.nonzero(labels == lab)[0])
        groups += [idx[i:i + per_identity] for i in range(0, len(idx), per_identity)]
    order = rng.permutation(len(groups))
    flat = np.concatenate([groups[i] for i in order]) if groups else np.zeros(0, np.int64)
    return [flat[i:i + batch_size] for i in range(0, len(flat), batch_size)]


def finetune_stage_triplet(net, images, labels, config, log_to=None):
    """Triplet fine-tuning on L2-normalized Fc6 features; the classifier is frozen."""
    labels = np.asarray(labels, dtype=np.int64)
    x_all = net.prepare(images)
    rng = np.random.default_rng(config.rng_seed + 17)
    net.dropout_ratio = config.dropout_ratio
    net.rng = np.random.default_rng(config.rng_seed + 18)
    fc_names = [l.name for l in net.spec.fc_layers[1:]]
    frozen = {n for n in net.params if n.split(".")[0] in fc_names}
    velocity = {}
    history = log_to or TrainLog()
    net.train()
    for epoch in range(config.triplet_epochs):
        losses, active, total = [], 0, 0
        for b, idx in enumerate(identity_batches(labels, config.triplet_per_identity,
                                                 config.batch_size, rng)):
            feats = net.forward(x_all[idx], stop="features")
            normed, ncache = l2_normalize_rows(feats)
            trip = select_triplets(normed, labels[idx], config.triplet_margin)
            if len(trip) == 0:
                continue
            a, p, n = normed[trip[:, 0]], normed[trip[:, 1]], normed[trip[:, 2]]
            per, (ga, gp, gn) = triplet_loss(a, p, n, config.triplet_margin)
            loss = float(np.mean(per))
            _check_finite(loss, epoch, b)
            active += int(np.count_nonzero(per > 0))
            total += len(trip)
            g = np.zeros_like(normed)
            m = len(trip)
            np.add.at(g, trip[:, 0], ga / m)
            np.add.at(g, trip[:, 1], gp / m)
            np.add.at(g, trip[:, 2], gn / m)
            grads, _ = net.backward(l2_normalize_rows_backward(g, ncache))
            sgd_step(net.params, grads, velocity, config.triplet_lr, config.momentum,
                     config.weight_decay, frozen=frozen)
            losses.append(loss)
        history.epoch_loss.append(float(np.mean(losses)) if losses else 0.0)
        history.epoch_lr.append(config.triplet_lr)
        history.active_fraction.append(active / total if total else 0.0)
        log.info("triplet epoch %d loss %.4f active %.3f", epoch, history.epoch_loss[-1],
                 history.active_fraction[-1])
    net.eval()
    return net, history
