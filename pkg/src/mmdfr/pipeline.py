"""Run configuration and the single-call representation path."""

import dataclasses
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mmdfr import MODALITIES
from mmdfr.data.augment import AugmentConfig
from mmdfr.errors import ConfigError, DataError
from mmdfr.fusion import SAEConfig, check_mask, flip_average, flip_concat, l2_normalize, load_sae
from mmdfr.geometry.image import flip_horizontal, resize_bilinear
from mmdfr.geometry.mesh import make_face_mesh, read_mesh
from mmdfr.geometry.modalities import GeometryConfig, build_modalities
from mmdfr.nn.checkpoint import load_network
from mmdfr.nn.train import TrainConfig

log = logging.getLogger(__name__)

MODES = ("unsupervised", "supervised")
FLIP_MODES = ("average", "concat")
PATH_KEYS = ("mesh", "sae", "pca", "jb", "manifest", "pairs", "exclusions", "features", "out")
SECTIONS = {"train": TrainConfig, "sae": SAEConfig, "augment": AugmentConfig}


def default_nets():
    """NN2 for the holistic crop, NN1 for every other modality."""
    return {tag: ("nn2" if tag == "H1" else "nn1") for tag in MODALITIES}


@dataclass
class PipelineConfig:
    mesh: str = None  # None: the built-in generic mesh
    nets: dict = field(default_factory=default_nets)  # tag -> shipped spec name or spec path
    checkpoints: dict = field(default_factory=dict)  # tag -> network checkpoint
    sae: str = None  # SAE checkpoint, or "identity" for the pass-through stub
    pca: str = None
    jb: str = None
    manifest: str = None
    pairs: str = None
    exclusions: str = None
    features: str = None
    out: str = None
    mode: str = "unsupervised"
    modalities: tuple = MODALITIES
    frontal_fallback: bool = True
    flip_mode: str = "average"  # how a modality combines the features of an image and its mirror
    sections: dict = field(default_factory=dict)  # "train"/"sae"/"augment" -> {field: value}
    text: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.flip_mode not in FLIP_MODES:
            raise ConfigError(f"flip_mode must be one of {FLIP_MODES}, got {self.flip_mode!r}")
        try:
            self.modalities = tuple(check_mask(self.modalities))
        except DataError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def digest(self):
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()[:16]

    def section(self, name, **overrides):
        """Build the named hyperparameter dataclass from its ``name.field`` entries."""
        cls = SECTIONS[name]
        values = dict(self.sections.get(name, {}))
        values.update(overrides)
        return cls(**values)


def _coerce(cls, key, raw, lineno):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    if key not in fields:
        raise ConfigError(f"line {lineno}: unknown setting {key!r} for {cls.__name__}")
    default = fields[key].default
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError
            return raw.lower() in ("true", "yes", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [v for v in raw.replace(",", " ").split()]
            kind = type(default[0]) if default else float
            return tuple(kind(v) for v in items)
        return raw
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {key}") from None


def parse_config(text, base_dir=None):
    """``key = value`` lines; ``#`` starts a comment.  Relative paths resolve against ``base_dir``."""
    base = Path(base_dir) if base_dir is not None else None

    def path(v):
        if v == "identity" or base is None or Path(v).is_absolute():
            return v
        return str(base / v)

    kw = {"nets": default_nets(), "checkpoints": {}, "sections": {}}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (s.strip() for s in line.partition("="))
        if not sep or not key or not value:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        head, _, tail = key.partition(".")
        if head in ("net", "ckpt"):
            if tail not in MODALITIES:
                raise ConfigError(f"line {lineno}: unknown modality {tail!r}")
            if head == "net":
                known = value.lower() in ("nn1", "nn2", "tiny", "tiny-patch")
                kw["nets"][tail] = value.lower() if known else path(value)
            else:
                kw["checkpoints"][tail] = path(value)
        elif head in SECTIONS and tail:
            kw["sections"].setdefault(head, {})[tail] = _coerce(SECTIONS[head], tail, value, lineno)
        elif key in PATH_KEYS:
            kw[key] = path(value)
        elif key in ("mode", "flip_mode"):
            kw[key] = value
        elif key == "modalities":
            kw["modalities"] = tuple(v for v in value.replace(",", " ").split())
        elif key == "frontal_fallback":
            kw["frontal_fallback"] = _coerce(GeometryConfig, "frontal_fallback", value, lineno)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return PipelineConfig(text=text, **kw)


def load_config(path):
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, p.parent)


def dependencies(config, include_matcher=False):
    """Files the representation path reads for the configured modality subset."""
    deps = []
    needs_mesh = any(t != "H1" for t in config.modalities)
    if needs_mesh and config.mesh:
        deps.append(("mesh", config.mesh))
    for tag in config.modalities:
        deps.append((f"ckpt.{tag}", config.checkpoints.get(tag)))
    deps.append(("sae", config.sae))
    if include_matcher and config.mode == "supervised":
        deps += [("pca", config.pca), ("jb", config.jb)]
    return deps


class IdentitySAE:
    """Pass-through fusion stage: the signature is the concatenated vector itself."""

    mask = None

    def signature(self, concat):
        return np.asarray(concat, dtype=np.float32)


def prepare_input(image, net):
    """Resize a modality image to the network's input shape when they differ."""
    shape = net.spec.input_shape
    img = np.asarray(image, dtype=np.float32)
    return img if img.shape == shape else resize_bilinear(img, shape)


def modality_feature(net, images, separate=False, flip_mode="average"):
    """Flip-averaged, L2-normalized Fc6 features for a batch of one modality.

    ``flip_mode="concat"`` concatenates the two features instead (twice the
    width) before normalizing.  ``separate=True`` returns the normalized
    features of the originals and of the mirror images as two arrays.
    """
    x = np.stack([prepare_input(im, net) for im in images])
    flipped = np.stack([flip_horizontal(im) for im in x])
    f = net.extract_features(np.concatenate([x, flipped]))
    n = len(x)
    if separate:
        return l2_normalize(f[:n]), l2_normalize(f[n:])
    if flip_mode == "concat":
        return l2_normalize(flip_concat(f[:n], f[n:]))
    return l2_normalize(flip_average(f[:n], f[n:]))


class Representer:
    """Image plus five landmarks -> fused signature."""

    def __init__(self, nets, sae, mesh=None, modalities=MODALITIES, geometry=None, flip_mode="average"):
        self.modalities = tuple(check_mask(modalities))
        missing = [t for t in self.modalities if t not in nets]
        if missing:
            raise ConfigError(f"no network for modalities {missing}")
        self.nets = {t: nets[t] for t in self.modalities}
        self.sae = sae
        self.mesh = mesh if mesh is not None else make_face_mesh()
        self.geometry = geometry or GeometryConfig()
        if flip_mode not in FLIP_MODES:
            raise ConfigError(f"flip_mode must be one of {FLIP_MODES}, got {flip_mode!r}")
        self.flip_mode = flip_mode
        self.fallbacks = 0

    @classmethod
    def from_config(cls, config):
        for role, p in dependencies(config):
            if p is None:
                raise ConfigError(f"{role} is required for modalities {list(config.modalities)}")
            if p != "identity" and not Path(p).exists():
                raise ConfigError(f"{role}: file {p} does not exist")
        mesh = read_mesh(config.mesh) if config.mesh else None
        nets = {t: load_network(config.checkpoints[t]) for t in config.modalities}
        sae = IdentitySAE() if config.sae == "identity" else load_sae(config.sae)
        if not isinstance(sae, IdentitySAE):
            if tuple(sae.mask) != config.modalities:
                raise ConfigError(f"SAE was trained for modalities {list(sae.mask)}, "
                                  f"config selects {list(config.modalities)}")
            width = sum(nets[t].feature_dim for t in config.modalities)
            width *= 2 if config.flip_mode == "concat" else 1
            if sae.input_dim != width:
                raise ConfigError(f"SAE expects {sae.input_dim}-dim input, networks give {width}")
        geometry = GeometryConfig(frontal_fallback=config.frontal_fallback)
        return cls(nets, sae, mesh, config.modalities, geometry, config.flip_mode)

    def modality_inputs(self, images, landmarks):
        """Per-modality lists of geometry outputs for each image."""
        out = {t: [] for t in self.modalities}
        for image, lm in zip(images, landmarks):
            bundle = build_modalities(image, lm, self.mesh, self.geometry, need=self.modalities)
            self.fallbacks += int(bundle.frontal_fallback)
            for t in self.modalities:
                out[t].append(bundle.get(t))
        return out

    def features(self, images, landmarks):
        """tag -> (N, D) normalized features."""
        inputs = self.modality_inputs(images, landmarks)
        return {t: modality_feature(self.nets[t], inputs[t], flip_mode=self.flip_mode)
                for t in self.modalities}

    def concat(self, images, landmarks):
        feats = self.features(images, landmarks)
        return np.concatenate([feats[t] for t in self.modalities], axis=1)

    def represent_batch(self, images, landmarks):
        return np.asarray(self.sae.signature(self.concat(images, landmarks)), dtype=np.float32)

    def represent(self, image, landmarks):
        return self.represent_batch([image], [landmarks])[0]


def represent(image, landmarks, config):
    return Representer.from_config(config).represent(image, landmarks)
