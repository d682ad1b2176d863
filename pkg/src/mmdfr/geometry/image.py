"""Gray-scale raster helpers.

Images are plain 2-D ``float32`` numpy arrays indexed ``[row, col]`` with
intensities in [0, 1].  Pixel ``(row, col)`` has its center at continuous
coordinate ``(x=col, y=row)``.
"""

from pathlib import Path

import numpy as np

from mmdfr.errors import DimensionError, FormatError


def as_gray(image):
    """Validate and convert to a float32 gray image."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 2 or img.size == 0:
        raise DimensionError(f"expected a non-empty 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise DimensionError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise DimensionError("image intensities must lie in [0, 1]")
    return img


def bilinear_sample(image, xs, ys, mode="zero"):
    """Sample ``image`` at continuous coordinates.

    ``mode="zero"`` treats everything outside the pixel grid as 0 (each of the
    four taps is zeroed individually), ``mode="clamp"`` clamps coordinates
    into the grid first so no lookup ever leaves the image.
    """
    img = np.asarray(image)
    h, w = img.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if mode == "clamp":
        xs = np.clip(xs, 0.0, w - 1.0)
        ys = np.clip(ys, 0.0, h - 1.0)
    elif mode != "zero":
        raise ValueError(f"unknown sampling mode {mode!r}")

    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    out = np.zeros(xs.shape, dtype=np.float64)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            weight = wx * wy
            vals = np.zeros(xs.shape, dtype=np.float64)
            vals[valid] = img[yi[valid], xi[valid]]
            out += weight * vals
    return out


def warp_affine(image, inverse, shape, mode="zero"):
    """Resample ``image`` onto a grid of ``shape`` = (rows, cols).

    ``inverse`` is the 2x3 matrix mapping output coordinates (x, y, 1) to
    source coordinates.
    """
    rows, cols = shape
    yy, xx = np.mgrid[0:rows, 0:cols].astype(np.float64)
    m = np.asarray(inverse, dtype=np.float64)
    sx = m[0, 0] * xx + m[0, 1] * yy + m[0, 2]
    sy = m[1, 0] * xx + m[1, 1] * yy + m[1, 2]
    out = bilinear_sample(image, sx, sy, mode=mode)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def resize_bilinear(image, shape):
    """Resize so that the corner pixel centers of input and output coincide."""
    img = np.asarray(image, dtype=np.float32)
    rows, cols = shape
    h, w = img.shape
    if (h, w) == (rows, cols):
        return img.copy()
    sy = (h - 1) / (rows - 1) if rows > 1 else 0.0
    sx = (w - 1) / (cols - 1) if cols > 1 else 0.0
    inverse = np.array([[sx, 0.0, 0.0], [0.0, sy, 0.0]])
    return warp_affine(img, inverse, shape, mode="clamp")


def flip_horizontal(image):
    return np.ascontiguousarray(np.asarray(image)[:, ::-1])


def write_pgm(path, image):
    """Write an 8-bit binary PGM (P5); intensities quantized by round(v * 255)."""
    img = as_gray(image)
    h, w = img.shape
    data = np.round(img.astype(np.float64) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def _pgm_tokens(buf):
    """Yield (token, end offset) for the ASCII header, skipping comments."""
    pos = 0
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            start = pos
            while pos < n and not buf[pos:pos + 1].isspace():
                pos += 1
            yield buf[start:pos], pos


def read_pgm(path):
    buf = Path(path).read_bytes()
    tokens = _pgm_tokens(buf)
    try:
        magic, _ = next(tokens)
        w, _ = next(tokens)
        h, _ = next(tokens)
        maxval, end = next(tokens)
    except StopIteration:
        raise FormatError(f"{path}: truncated PGM header") from None
    if magic != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM is supported")
    data = buf[end + 1:end + 1 + w * h]
    if len(data) != w * h:
        raise FormatError(f"{path}: truncated PGM raster")
    return (np.frombuffer(data, dtype=np.uint8).reshape(h, w) / 255.0).astype(np.float32)
