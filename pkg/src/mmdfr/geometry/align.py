"""Five-point similarity alignment and the holistic crop."""

import numpy as np

from mmdfr.errors import AlignmentError, DimensionError
from mmdfr.geometry.image import warp_affine

ALIGNED_SIZE = 230
HOLISTIC_SHAPE = (165, 120)  # rows, cols
DEFAULT_CROP_ORIGIN = (55, 40)  # (x, y): centered horizontally, biased upward

# Landmark order: left eye, right eye, nose tip, left mouth corner, right mouth corner.
# "left" is image-left throughout.
LANDMARK_NAMES = ("left_eye", "right_eye", "nose", "left_mouth", "right_mouth")
MIRROR_ORDER = (1, 0, 2, 4, 3)


def default_template(size=ALIGNED_SIZE):
    """Canonical landmark positions in a ``size`` x ``size`` frame.

    Eyes sit on a horizontal line at 38% of the height, 36% of the width
    apart; the layout is mirror symmetric about x = (size - 1) / 2.
    """
    cx = (size - 1) / 2.0
    half_eye = 0.18 * size
    eye_y = 0.38 * size
    nose_y = 0.578 * size
    mouth_y = 0.74 * size
    half_mouth = 0.135 * size
    return np.array([
        [cx - half_eye, eye_y],
        [cx + half_eye, eye_y],
        [cx, nose_y],
        [cx - half_mouth, mouth_y],
        [cx + half_mouth, mouth_y],
    ])


def load_template(path):
    """Read five ``x y`` lines."""
    pts = np.loadtxt(path, dtype=np.float64, comments="#")
    return check_landmarks(pts)


def check_landmarks(lm):
    pts = np.asarray(lm, dtype=np.float64)
    if pts.shape != (5, 2):
        raise DimensionError(f"expected 5 landmarks as a (5, 2) array, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise AlignmentError("landmark coordinates must be finite")
    centered = pts - pts.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[0] < 1e-9 or s[1] <= 1e-9 * max(s[0], 1.0):
        raise AlignmentError("degenerate landmark configuration (coincident or collinear points)")
    return pts


def mirror_landmarks(lm, width):
    """Landmarks of the horizontally flipped image, with left/right labels swapped."""
    pts = np.asarray(lm, dtype=np.float64)
    out = pts[list(MIRROR_ORDER)].copy()
    out[:, 0] = (width - 1) - out[:, 0]
    return out


def fit_similarity(src, dst):
    """Least-squares 4-DOF similarity mapping ``src`` points onto ``dst``.

    Returns the 2x3 matrix ``[[a, -b, tx], [b, a, ty]]``.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = len(src)
    A = np.zeros((2 * n, 4))
    A[0::2] = np.column_stack([src[:, 0], -src[:, 1], np.ones(n), np.zeros(n)])
    A[1::2] = np.column_stack([src[:, 1], src[:, 0], np.zeros(n), np.ones(n)])
    rhs = dst.reshape(-1)
    if np.linalg.matrix_rank(A) < 4:
        raise AlignmentError("similarity fit is rank deficient")
    a, b, tx, ty = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return np.array([[a, -b, tx], [b, a, ty]])


def apply_transform(m, pts):
    pts = np.asarray(pts, dtype=np.float64)
    return pts @ m[:, :2].T + m[:, 2]


def invert_transform(m):
    lin = m[:, :2]
    inv = np.linalg.inv(lin)
    return np.hstack([inv, -inv @ m[:, 2:3]])


def similarity_align(image, lm, template=None, size=ALIGNED_SIZE):
    """Warp ``image`` so that ``lm`` lands on ``template``.

    Returns the ``size`` x ``size`` aligned image and the transformed landmarks.
    """
    if template is None:
        template = default_template(size)
    lm = check_landmarks(lm)
    template = check_landmarks(template)
    m = fit_similarity(lm, template)
    aligned = warp_affine(image, invert_transform(m), (size, size), mode="zero")
    return aligned, apply_transform(m, lm)


def crop_holistic(aligned, origin=DEFAULT_CROP_ORIGIN, shape=HOLISTIC_SHAPE):
    """Fixed-offset crop; ``origin`` is (x, y) of the top-left output pixel."""
    img = np.asarray(aligned)
    if img.shape != (ALIGNED_SIZE, ALIGNED_SIZE):
        raise DimensionError(f"holistic crop expects a 230x230 image, got {img.shape}")
    ox, oy = origin
    rows, cols = shape
    if ox < 0 or oy < 0 or ox + cols > img.shape[1] or oy + rows > img.shape[0]:
        raise DimensionError(f"crop origin {origin} does not fit a {rows}x{cols} crop")
    return np.ascontiguousarray(img[oy:oy + rows, ox:ox + cols])
