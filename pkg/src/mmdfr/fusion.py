"""Feature-level fusion: per-modality normalization, concatenation and a stacked auto-encoder."""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from mmdfr import MODALITIES
from mmdfr.binio import Reader, Writer
from mmdfr.errors import DataError, DimensionError, DivergenceError, FormatError
from mmdfr.nn.train import sgd_step

log = logging.getLogger(__name__)

DEFAULT_WIDTHS = (2048, 1024, 512)
INTERVALS = {"sigmoid": (0.0, 1.0), "tanh": (-1.0, 1.0)}


def l2_normalize(v):
    v = np.asarray(v)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise DataError("cannot L2-normalize a zero vector")
    return v / norm


def _same_shape(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"feature shapes differ: {a.shape} vs {b.shape}")
    return a, b


def flip_average(f_original, f_flipped):
    a, b = _same_shape(f_original, f_flipped)
    return (a + b) / 2


def flip_concat(f_original, f_flipped):
    a, b = _same_shape(f_original, f_flipped)
    return np.concatenate([a, b], axis=-1)


def check_mask(tags):
    """Tags must be a non-empty subsequence of H1, H2, P1..P6 in that order."""
    tags = list(tags)
    if not tags:
        raise DataError("modality set is empty")
    pos = [MODALITIES.index(t) if t in MODALITIES else -1 for t in tags]
    if -1 in pos or pos != sorted(set(pos)):
        raise DataError(f"modalities {tags} are not in the fixed order {list(MODALITIES)}")
    return tags


def concat_features(features, tags=MODALITIES):
    """Stack per-modality vectors in the fixed source order.

    ``features`` is a sequence of ``(tag, vector)`` pairs or a sequence of
    vectors matching ``tags``; either way the tags must follow H1, H2, P1..P6.
    """
    items = list(features)
    if items and isinstance(items[0], tuple):
        got = [t for t, _ in items]
        vecs = [v for _, v in items]
        if got != list(tags):
            raise DataError(f"expected modalities {list(tags)} in order, got {got}")
    else:
        vecs = items
    check_mask(tags)
    if len(vecs) != len(tags):
        raise DataError(f"expected {len(tags)} modality features, got {len(vecs)}")
    dims = {np.shape(v)[-1] for v in vecs}
    if len(dims) != 1:
        raise DimensionError(f"modality features have differing dimensions {sorted(dims)}")
    return np.concatenate([np.asarray(v) for v in vecs], axis=-1)


def split_features(x, k):
    return np.split(np.asarray(x), k, axis=-1)


@dataclass
class RangeNormalizer:
    """Per-dimension min-max map into the nonlinearity's interval, clamped at apply time."""

    minimum: np.ndarray
    maximum: np.ndarray
    kind: str = "sigmoid"

    @classmethod
    def fit(cls, features, kind="sigmoid"):
        x = np.asarray(features, dtype=np.float32)
        if x.ndim != 2 or len(x) == 0:
            raise DataError("range normalizer needs a non-empty (N, D) training set")
        if kind not in INTERVALS:
            raise ValueError(f"unknown nonlinearity {kind!r}")
        norm = cls(x.min(axis=0), x.max(axis=0), kind)
        constant = int(np.sum(norm.maximum <= norm.minimum))
        if constant:
            warnings.warn(f"{constant} constant feature dimensions map to the interval midpoint")
        return norm

    def apply(self, x):
        lo, hi = INTERVALS[self.kind]
        x = np.asarray(x, dtype=np.float32)
        if x.shape[-1] != len(self.minimum):
            raise DimensionError(f"normalizer expects {len(self.minimum)} dims, got {x.shape[-1]}")
        span = (self.maximum - self.minimum).astype(np.float64)
        safe = np.where(span > 0, span, 1.0)
        unit = (x - self.minimum) / safe
        unit = np.where(span > 0, unit, 0.5)
        out = lo + (hi - lo) * unit
        return np.clip(out, lo, hi).astype(np.float32)


def activation(kind, z):
    if kind == "sigmoid":
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-z))
    if kind == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown nonlinearity {kind!r}")


def activation_grad(kind, y):
    """Derivative expressed through the activation output ``y``."""
    if kind == "sigmoid":
        return y * (1.0 - y)
    return 1.0 - y * y


@dataclass
class AutoEncoder:
    """One auto-encoder: ``h = f(x We + be)``, ``r = g(h Wd + bd)`` with ``g`` linear or ``f``.

    The reconstruction loss is ``sum |r - x|^2 / (2 N)``.
    """

    params: dict
    kind: str
    linear_decoder: bool

    @classmethod
    def init(cls, n_in, n_out, kind, linear_decoder, rng, dtype=np.float32):
        def gauss(shape, fan_in):
            return (rng.standard_normal(shape) * np.sqrt(1.0 / fan_in)).astype(dtype)

        params = {
            "We": gauss((n_in, n_out), n_in),
            "be": np.zeros(n_out, dtype),
            "Wd": gauss((n_out, n_in), n_out),
            "bd": np.zeros(n_in, dtype),
        }
        return cls(params, kind, linear_decoder)

    def preactivation(self, x):
        return x @ self.params["We"] + self.params["be"]

    def encode(self, x):
        return activation(self.kind, self.preactivation(x))

    def decode(self, h):
        z = h @ self.params["Wd"] + self.params["bd"]
        return z if self.linear_decoder else activation(self.kind, z)

    def loss_and_grads(self, x):
        p = self.params
        h = self.encode(x)
        r = self.decode(h)
        n = len(x)
        diff = r - x
        loss = float(np.sum(diff.astype(np.float64) ** 2) / (2 * n))
        dr = diff / n
        dz = dr if self.linear_decoder else dr * activation_grad(self.kind, r)
        g = {"Wd": h.T @ dz, "bd": dz.sum(axis=0)}
        dh = dz @ p["Wd"].T
        da = dh * activation_grad(self.kind, h)
        g["We"] = x.T @ da
        g["be"] = da.sum(axis=0)
        return loss, g


@dataclass
class SAEConfig:
    widths: tuple = DEFAULT_WIDTHS
    kind: str = "sigmoid"
    epochs: int = 10
    lr_start: float = 0.01
    lr_end: float = 1e-5
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 64
    rng_seed: int = 0


def sae_lr(epoch, config):
    """Log-linear decay from ``lr_start`` to ``lr_end`` across a layer's epochs."""
    if config.epochs <= 1:
        return config.lr_start
    t = epoch / (config.epochs - 1)
    return float(config.lr_start * (config.lr_end / config.lr_start) ** t)


@dataclass
class SAEModel:
    layers: list
    kind: str
    normalizer: RangeNormalizer = None
    mask: tuple = MODALITIES
    history: list = field(default_factory=list)

    @property
    def widths(self):
        return tuple(l.params["We"].shape[1] for l in self.layers)

    @property
    def input_dim(self):
        return self.layers[0].params["We"].shape[0]

    def encode(self, x_normalized):
        """Encoders 1-2 with the nonlinearity; encoder 3 read out before it."""
        h = np.asarray(x_normalized, dtype=np.float32)
        if h.shape[-1] != self.input_dim:
            raise DimensionError(f"SAE expects {self.input_dim}-dim input, got {h.shape[-1]}")
        for layer in self.layers[:-1]:
            h = layer.encode(h)
        return self.layers[-1].preactivation(h)

    def signature(self, concat):
        """Range-normalize raw concatenated features, then encode."""
        x = self.normalizer.apply(concat) if self.normalizer is not None else concat
        return self.encode(x)


def sae_encode(model, x_normalized):
    return model.encode(x_normalized)


def sae_train_layerwise(features, config=None):
    """Greedy layer-wise training; layer k learns to reconstruct layer k-1's code.

    ``features`` must already be range-normalized for ``config.kind``.
    """
    config = config or SAEConfig()
    widths = tuple(config.widths)
    if len(widths) != 3 or not all(a > b for a, b in zip(widths, widths[1:])):
        raise ValueError("SAE needs exactly three strictly decreasing widths")
    x = np.asarray(features, dtype=np.float32)
    rng = np.random.default_rng(config.rng_seed)
    layers, history = [], []
    n_in = x.shape[1]
    for depth, width in enumerate(widths):
        # the first decoder reconstructs the input and stays linear
        ae = AutoEncoder.init(n_in, width, config.kind, linear_decoder=depth == 0, rng=rng)
        velocity = {}
        losses = []
        for epoch in range(config.epochs):
            lr = sae_lr(epoch, config)
            order = rng.permutation(len(x))
            total = 0.0
            for start in range(0, len(order), config.batch_size):
                idx = order[start:start + config.batch_size]
                loss, grads = ae.loss_and_grads(x[idx])
                if not np.isfinite(loss):
                    raise DivergenceError(f"SAE layer {depth + 1} diverged at epoch {epoch}")
                sgd_step(ae.params, grads, velocity, lr, config.momentum, config.weight_decay)
                total += loss * len(idx)
            losses.append(total / len(x))
            log.info("sae layer %d epoch %d lr %.2g loss %.5f", depth + 1, epoch, lr, losses[-1])
        history.append(losses)
        layers.append(ae)
        x = ae.encode(x)
        n_in = width
    return SAEModel(layers, config.kind, history=history)


def fit_fusion(concat, config=None, mask=MODALITIES):
    """Fit the range normalizer on raw concatenated features, then train the SAE."""
    config = config or SAEConfig()
    norm = RangeNormalizer.fit(concat, config.kind)
    model = sae_train_layerwise(norm.apply(concat), config)
    model.normalizer = norm
    model.mask = tuple(check_mask(mask))
    return model


# Checkpoint: "MMSA", u32 version, nonlinearity tag, modality mask (comma separated),
# u32 width count + widths, normalizer min/max (float32), then We, be, Wd, bd per layer.
MAGIC = b"MMSA"
VERSION = 1


def save_sae(model, path):
    w = Writer(MAGIC)
    w.u32(VERSION)
    w.text(model.kind)
    w.text(",".join(model.mask))
    widths = (model.input_dim,) + model.widths
    w.u32(len(widths))
    for width in widths:
        w.u32(width)
    if model.normalizer is None:
        raise DataError("SAE checkpoint requires a fitted range normalizer")
    w.array(model.normalizer.minimum, np.float32)
    w.array(model.normalizer.maximum, np.float32)
    for layer in model.layers:
        for key in ("We", "be", "Wd", "bd"):
            w.array(layer.params[key], np.float32)
    w.save(path)


def load_sae(path):
    r = Reader.open(path, MAGIC)
    r.version({VERSION})
    kind = r.text()
    if kind not in INTERVALS:
        raise FormatError(f"{path}: unknown nonlinearity tag {kind!r}")
    mask = tuple(r.text().split(","))
    widths = [r.u32() for _ in range(r.u32())]
    if len(widths) != 4:
        raise FormatError(f"{path}: expected input width plus three layer widths")
    norm = RangeNormalizer(r.array(np.float32), r.array(np.float32), kind)
    layers = []
    for depth, (n_in, n_out) in enumerate(zip(widths, widths[1:])):
        params = {key: r.array(np.float32).copy() for key in ("We", "be", "Wd", "bd")}
        if params["We"].shape != (n_in, n_out) or params["Wd"].shape != (n_out, n_in):
            raise FormatError(f"{path}: layer {depth + 1} weights do not match declared widths")
        layers.append(AutoEncoder(params, kind, linear_decoder=depth == 0))
    r.done()
    return SAEModel(layers, kind, norm, mask)
