"""Eight modality inputs from one image and its five landmarks."""

import logging
from dataclasses import dataclass, field

import numpy as np

from mmdfr.errors import FrontalizationError
from mmdfr.geometry.align import DEFAULT_CROP_ORIGIN, crop_holistic, similarity_align
from mmdfr.geometry.camera import fit_camera
from mmdfr.geometry.image import as_gray
from mmdfr.geometry.mesh import DEFAULT_PATCH_SELECTION
from mmdfr.geometry.render import DEFAULT_MAX_RESIDUAL, frontalize, sample_patches

log = logging.getLogger(__name__)


@dataclass
class GeometryConfig:
    template: np.ndarray = None
    crop_origin: tuple = DEFAULT_CROP_ORIGIN
    patch_selection: tuple = DEFAULT_PATCH_SELECTION
    max_residual: float = DEFAULT_MAX_RESIDUAL
    frontal_fallback: bool = True


@dataclass
class ModalityBundle:
    holistic: np.ndarray  # 165 x 120
    frontal: np.ndarray  # 165 x 120
    patches: list  # six 100 x 100
    frontal_fallback: bool = False
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.patches) != 6:
            raise ValueError("a modality bundle carries exactly 6 patches")

    def get(self, tag):
        if tag == "H1":
            return self.holistic
        if tag == "H2":
            return self.frontal
        if tag.startswith("P") and tag[1:].isdigit() and 1 <= int(tag[1:]) <= 6:
            return self.patches[int(tag[1:]) - 1]
        raise KeyError(f"unknown modality {tag!r}")


def build_modalities(image, lm, mesh, config=None, need=None):
    """Align, crop, fit the camera, sample patches and frontalize.

    ``need`` optionally restricts work to a subset of modality tags; skipped
    modalities are left as zero images of the right size.
    """
    config = config or GeometryConfig()
    need = set(need) if need is not None else None
    image = as_gray(image)
    aligned, mapped = similarity_align(image, lm, config.template)
    holistic = crop_holistic(aligned, config.crop_origin)

    want_patches = need is None or any(t.startswith("P") for t in need)
    want_frontal = need is None or "H2" in need
    cam = fit_camera(mapped, mesh) if (want_patches or want_frontal) else None
    if want_patches:
        patches = sample_patches(aligned, cam, mesh, config.patch_selection)
    else:
        patches = [np.zeros((100, 100), np.float32) for _ in range(6)]

    fallback = False
    if want_frontal:
        try:
            frontal = frontalize(aligned, cam, mesh, max_residual=config.max_residual)
        except FrontalizationError as exc:
            if not config.frontal_fallback:
                raise
            log.warning("frontalization failed (%s); using the holistic crop", exc)
            frontal, fallback = holistic.copy(), True
    else:
        frontal = np.zeros_like(holistic)
    return ModalityBundle(holistic, frontal, patches, fallback,
                          {"aligned": aligned, "landmarks": mapped, "camera": cam})
