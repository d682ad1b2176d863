"""Procedural faces for desk-scale experiments.

Each subject owns a fixed texture defined in canonical face units (eyes at
v = 0, interocular distance 1) with its own landmark geometry, skin and hair
tones and a seeded set of blobs.  Every image renders that texture under a
random similarity transform plus brightness change and pixel noise; the five
landmarks are the forward-mapped identity anchors.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from mmdfr.data.manifest import ManifestRecord, write_manifest
from mmdfr.geometry.image import write_pgm
from mmdfr.geometry.mesh import CANONICAL_LANDMARKS, FACE_CENTER_V


@dataclass
class SynthConfig:
    subject_count: int = 10
    images_per_subject: int = 20
    image_size: int = 160
    rotation_deg: float = 10.0  # max |angle|
    scale_jitter: float = 0.08  # relative, log-uniform
    shift_px: float = 4.0
    brightness: float = 0.1
    noise_sigma: float = 0.02
    landmark_noise: float = 0.0  # pixels, simulates detector error
    interocular_frac: float = 0.3  # interocular distance / image size
    rng_seed: int = 0

    def __post_init__(self):
        if self.subject_count < 1 or self.images_per_subject < 1:
            raise ValueError("subject and image counts must be at least 1")
        if self.image_size < 32:
            raise ValueError("image size must be at least 32 pixels")
        ranges = (self.rotation_deg, self.scale_jitter, self.shift_px, self.brightness,
                  self.noise_sigma, self.landmark_noise, self.interocular_frac)
        if not all(np.isfinite(r) and r >= 0 for r in ranges):
            raise ValueError("nuisance ranges must be finite and non-negative")

    @classmethod
    def clean(cls, **kw):
        """No geometric or photometric nuisance at all."""
        base = dict(rotation_deg=0.0, scale_jitter=0.0, shift_px=0.0, brightness=0.0,
                    noise_sigma=0.0, landmark_noise=0.0)
        base.update(kw)
        return cls(**base)


@dataclass
class Identity:
    landmarks: np.ndarray  # (5, 2) canonical units
    skin: float
    hair: float
    hairline: float
    eye_size: tuple
    eye_dark: float
    brow_offset: float
    brow_dark: float
    mouth_dark: float
    nose_shade: float
    blobs: np.ndarray  # (K, 5): u, v, radius, amplitude, elongation


def make_identity(rng, blob_count=8):
    lm = CANONICAL_LANDMARKS + rng.normal(0.0, 0.035, size=(5, 2))
    blobs = np.column_stack([
        rng.uniform(-0.75, 0.75, blob_count),
        rng.uniform(-0.6, 1.3, blob_count),
        rng.uniform(0.08, 0.25, blob_count),
        rng.uniform(-0.3, 0.3, blob_count),
        rng.uniform(0.6, 1.6, blob_count),
    ])
    return Identity(
        landmarks=lm,
        skin=rng.uniform(0.45, 0.8),
        hair=rng.uniform(0.05, 0.4),
        hairline=rng.uniform(-0.75, -0.35),
        eye_size=(rng.uniform(0.12, 0.2), rng.uniform(0.05, 0.09)),
        eye_dark=rng.uniform(0.25, 0.5),
        brow_offset=rng.uniform(0.18, 0.3),
        brow_dark=rng.uniform(0.1, 0.35),
        mouth_dark=rng.uniform(0.2, 0.45),
        nose_shade=rng.uniform(-0.15, 0.15),
        blobs=blobs,
    )


def _soft(d, width=0.03):
    """Smooth step: 1 inside (d < 0), 0 outside."""
    return 0.5 * (1.0 - np.tanh(d / width))


def render_texture(ident, u, v):
    """Intensity at canonical coordinates (arrays of any shape)."""
    face = _soft(np.hypot(u / 0.95, (v - FACE_CENTER_V) / 1.3) - 1.0, 0.04)
    val = 0.12 + face * (ident.skin - 0.12)
    hair = face * _soft(v - ident.hairline, 0.05)
    val = val - hair * (ident.skin - ident.hair)
    for cu, cv, r, a, e in ident.blobs:
        val = val + face * a * np.exp(-(((u - cu) / (r * e)) ** 2 + ((v - cv) / r) ** 2))
    ex, ey = ident.eye_size
    for i in (0, 1):
        cu, cv = ident.landmarks[i]
        d = np.hypot((u - cu) / ex, (v - cv) / ey) - 1.0
        val = val - ident.eye_dark * _soft(d, 0.15)
        db = np.hypot((u - cu) / (ex * 1.3), (v - cv + ident.brow_offset) / 0.035) - 1.0
        val = val - ident.brow_dark * _soft(db, 0.2)
    nu, nv = ident.landmarks[2]
    nose = np.exp(-(((u - nu) / 0.09) ** 2 + ((v - nv + 0.2) / 0.28) ** 2))
    val = val + ident.nose_shade * nose
    ml, mr = ident.landmarks[3], ident.landmarks[4]
    mc = (ml + mr) / 2
    half = max(np.hypot(*(mr - ml)) / 2, 0.1)
    ang = np.arctan2(mr[1] - ml[1], mr[0] - ml[0])
    du, dv = u - mc[0], v - mc[1]
    pu = du * np.cos(ang) + dv * np.sin(ang)
    pv = -du * np.sin(ang) + dv * np.cos(ang)
    val = val - ident.mouth_dark * _soft(np.hypot(pu / half, pv / 0.06) - 1.0, 0.15)
    return val


def sample_transform(config, rng):
    """Canonical units -> pixel coordinates, as a 2x3 similarity matrix."""
    size = config.image_size
    s = config.interocular_frac * size
    if config.scale_jitter > 0:
        s *= np.exp(rng.uniform(-np.log1p(config.scale_jitter), np.log1p(config.scale_jitter)))
    theta = np.deg2rad(rng.uniform(-config.rotation_deg, config.rotation_deg)) if config.rotation_deg else 0.0
    shift = rng.uniform(-config.shift_px, config.shift_px, 2) if config.shift_px else np.zeros(2)
    c, sn = s * np.cos(theta), s * np.sin(theta)
    lin = np.array([[c, -sn], [sn, c]])
    center = np.array([(size - 1) / 2.0, (size - 1) / 2.0]) + shift
    t = center - lin @ np.array([0.0, FACE_CENTER_V])
    return np.column_stack([lin, t])


def render_image(ident, m, config, rng):
    size = config.image_size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    lin, t = m[:, :2], m[:, 2]
    inv = np.linalg.inv(lin)
    px = np.stack([xx - t[0], yy - t[1]])
    u = inv[0, 0] * px[0] + inv[0, 1] * px[1]
    v = inv[1, 0] * px[0] + inv[1, 1] * px[1]
    img = render_texture(ident, u, v)
    if config.brightness:
        gain = 1.0 + rng.uniform(-config.brightness, config.brightness)
        offset = rng.uniform(-config.brightness, config.brightness) / 2
        img = img * gain + offset
    if config.noise_sigma:
        img = img + rng.normal(0.0, config.noise_sigma, img.shape)
    lm = ident.landmarks @ lin.T + t
    if config.landmark_noise:
        lm = lm + rng.normal(0.0, config.landmark_noise, lm.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32), lm


def subject_name(index):
    return f"s{index:04d}"


def synth_generate(config=None):
    """Returns (images, records); images are float32 in [0, 1], records in file order."""
    config = config or SynthConfig()
    root = np.random.SeedSequence(config.rng_seed)
    id_seq, img_seq = root.spawn(2)
    id_rngs = [np.random.default_rng(s) for s in id_seq.spawn(config.subject_count)]
    img_rngs = [np.random.default_rng(s) for s in img_seq.spawn(config.subject_count)]
    images, records = [], []
    for k in range(config.subject_count):
        ident = make_identity(id_rngs[k])
        name = subject_name(k)
        for i in range(config.images_per_subject):
            m = sample_transform(config, img_rngs[k])
            img, lm = render_image(ident, m, config, img_rngs[k])
            images.append(img)
            records.append(ManifestRecord(f"{name}/{name}_{i + 1:04d}.pgm", name, lm))
    return images, records


def synth_pairs(records, folds=10, per_fold=10, rng_seed=0):
    """Random same/different pairs per fold, named like LFW refs (path without extension)."""
    from mmdfr.evaluation import Pair

    rng = np.random.default_rng(rng_seed)
    by_subject = {}
    for r in records:
        by_subject.setdefault(r.subject, []).append(r.path.rsplit(".", 1)[0])
    subjects = list(by_subject)
    multi = [s for s in subjects if len(by_subject[s]) >= 2]
    if not multi or len(subjects) < 2:
        raise ValueError("pairs need two subjects and one subject with two images")
    out = []
    for _ in range(folds):
        fold = []
        for _ in range(per_fold):
            s = multi[rng.integers(len(multi))]
            a, b = rng.choice(len(by_subject[s]), 2, replace=False)
            fold.append(Pair(by_subject[s][a], by_subject[s][b], True))
        for _ in range(per_fold):
            s, t = rng.choice(len(subjects), 2, replace=False)
            fold.append(Pair(by_subject[subjects[s]][rng.integers(len(by_subject[subjects[s]]))],
                             by_subject[subjects[t]][rng.integers(len(by_subject[subjects[t]]))], False))
        out.append(fold)
    return out


def write_dataset(images, records, out_dir, manifest_name="manifest.tsv"):
    """PGM files under ``out_dir`` plus a manifest with relative paths."""
    out = Path(out_dir)
    for img, rec in zip(images, records):
        p = out / rec.path
        p.parent.mkdir(parents=True, exist_ok=True)
        write_pgm(p, img)
    write_manifest(records, out / manifest_name)
    return out / manifest_name
