"""Training-set augmentation: flips, landmark jitter and down-sampling."""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from mmdfr.geometry.align import mirror_landmarks
from mmdfr.geometry.image import as_gray, flip_horizontal, resize_bilinear

DEFAULT_JITTER_SIGMA = 4.0
DEFAULT_FACTORS = (1.5, 2.0, 3.0)


@dataclass
class AugmentConfig:
    flip: bool = True
    jitter_sigma: float = DEFAULT_JITTER_SIGMA
    jitter_copies: int = 1
    downsample_factors: tuple = DEFAULT_FACTORS
    rng_seed: int = 0

    def __post_init__(self):
        if self.jitter_sigma < 0:
            raise ValueError("jitter sigma must be non-negative")
        if self.jitter_copies < 0:
            raise ValueError("jitter copy count must be non-negative")
        if any(f <= 1 for f in self.downsample_factors):
            raise ValueError("down-sampling factors must exceed 1")

    @property
    def variants_per_image(self):
        return 1 + int(self.flip) + self.jitter_copies + len(self.downsample_factors)


FLIP_ONLY = AugmentConfig(flip=True, jitter_copies=0, downsample_factors=())


def downsample(image, factor):
    """Anti-alias blur, shrink by ``factor``, then resample back to the original size."""
    img = as_gray(image)
    h, w = img.shape
    sigma = np.sqrt(factor ** 2 - 1.0) / 2.0
    blurred = gaussian_filter(img, sigma, mode="nearest")
    small = resize_bilinear(blurred, (max(2, round(h / factor)), max(2, round(w / factor))))
    return resize_bilinear(small, (h, w))


def augment(record, image, config=None, rng=None):
    """Variants as ``(tag, image, landmarks)``: original, flip, jitter copies, down-samples.

    Jitter perturbs the landmark coordinates only, so it acts through the
    subsequent alignment.  ``rng`` defaults to one seeded from the config.
    """
    config = config or AugmentConfig()
    rng = rng if rng is not None else np.random.default_rng(config.rng_seed)
    img = as_gray(image)
    lm = np.asarray(record.landmarks, dtype=np.float64)
    out = [("orig", img, lm.copy())]
    if config.flip:
        out.append(("flip", flip_horizontal(img), mirror_landmarks(lm, img.shape[1])))
    for k in range(config.jitter_copies):
        noise = rng.normal(0.0, config.jitter_sigma, size=lm.shape)
        out.append((f"jitter{k}", img, lm + noise))
    for f in config.downsample_factors:
        out.append((f"down{f:g}", downsample(img, f), lm.copy()))
    return out
