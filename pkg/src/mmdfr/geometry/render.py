"""Patch sampling around projected mesh landmarks and software frontalization."""

import numpy as np

from mmdfr.errors import FrontalizationError, OutOfFrameError
from mmdfr.geometry.align import HOLISTIC_SHAPE
from mmdfr.geometry.camera import frontal_camera, project_points
from mmdfr.geometry.image import bilinear_sample
from mmdfr.geometry.mesh import DEFAULT_PATCH_SELECTION

PATCH_SIZE = 100
DEFAULT_MAX_RESIDUAL = 15.0


def crop_centered(image, center, size=PATCH_SIZE):
    """Integer crop of ``size`` x ``size`` whose pixel ``size // 2`` sits on ``center``.

    Parts outside the image are filled with 0.
    """
    img = np.asarray(image, dtype=np.float32)
    h, w = img.shape
    cx, cy = center
    half = size / 2.0
    if cx < -half or cy < -half or cx > w - 1 + half or cy > h - 1 + half:
        raise OutOfFrameError(f"patch center ({cx:.1f}, {cy:.1f}) lies outside the image")
    x0 = int(np.floor(cx + 0.5)) - size // 2
    y0 = int(np.floor(cy + 0.5)) - size // 2
    out = np.zeros((size, size), dtype=np.float32)
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + size, w), min(y0 + size, h)
    if sx1 > sx0 and sy1 > sy0:
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = img[sy0:sy1, sx0:sx1]
    return out


def patch_centers(cam, mesh, selection=DEFAULT_PATCH_SELECTION):
    return project_points(cam, mesh.patch_points[list(selection)])


def sample_patches(aligned, cam, mesh, selection=DEFAULT_PATCH_SELECTION, size=PATCH_SIZE):
    """Six square patches centered on projected patch landmarks, in selection order."""
    if len(selection) != 6:
        raise ValueError("patch selection must name exactly 6 of the 9 landmarks")
    return [crop_centered(aligned, c, size) for c in patch_centers(cam, mesh, selection)]


def rasterize(points2d, depth, values, triangles, shape):
    """Z-buffered rasterization of per-vertex values with barycentric interpolation.

    Pixel centers are sampled; nearest depth (largest value) wins; uncovered
    pixels are 0.  Returns ``(image, coverage_mask)``.
    """
    rows, cols = shape
    pts = np.asarray(points2d, dtype=np.float64)
    tri = np.asarray(triangles, dtype=np.int64)
    p = pts[tri]  # T, 3, 2
    z = np.asarray(depth, dtype=np.float64)[tri]
    val = np.asarray(values, dtype=np.float64)[tri]

    x0 = np.ceil(p[:, :, 0].min(axis=1))
    x1 = np.floor(p[:, :, 0].max(axis=1))
    y0 = np.ceil(p[:, :, 1].min(axis=1))
    y1 = np.floor(p[:, :, 1].max(axis=1))
    x0 = np.maximum(x0, 0)
    y0 = np.maximum(y0, 0)
    x1 = np.minimum(x1, cols - 1)
    y1 = np.minimum(y1, rows - 1)

    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    keep = (x1 >= x0) & (y1 >= y0) & (np.abs(det) > 1e-12)

    extent = np.maximum(x1 - x0, y1 - y0) + 1
    pix_all, depth_all, val_all = [], [], []
    # bucket triangles by bounding box extent so each bucket is one dense array op
    sizes = np.where(keep, 2 ** np.ceil(np.log2(np.maximum(extent, 1))), 0).astype(np.int64)
    for s in np.unique(sizes[sizes > 0]):
        idx = np.nonzero(sizes == s)[0]
        oy, ox = np.mgrid[0:s, 0:s]
        gx = x0[idx, None] + ox.reshape(1, -1)
        gy = y0[idx, None] + oy.reshape(1, -1)
        dx = gx - p[idx, 0, 0, None]
        dy = gy - p[idx, 0, 1, None]
        d = det[idx, None]
        b1 = (dx * e2[idx, 1, None] - dy * e2[idx, 0, None]) / d
        b2 = (e1[idx, 0, None] * dy - e1[idx, 1, None] * dx) / d
        b0 = 1.0 - b1 - b2
        eps = -1e-9
        inside = (b0 >= eps) & (b1 >= eps) & (b2 >= eps) & (gx <= x1[idx, None]) & (gy <= y1[idx, None])
        zz = b0 * z[idx, 0, None] + b1 * z[idx, 1, None] + b2 * z[idx, 2, None]
        vv = b0 * val[idx, 0, None] + b1 * val[idx, 1, None] + b2 * val[idx, 2, None]
        pix_all.append((gy[inside] * cols + gx[inside]).astype(np.int64))
        depth_all.append(zz[inside])
        val_all.append(vv[inside])

    image = np.zeros(rows * cols, dtype=np.float64)
    covered = np.zeros(rows * cols, dtype=bool)
    if pix_all:
        pix = np.concatenate(pix_all)
        dep = np.concatenate(depth_all)
        vals = np.concatenate(val_all)
        order = np.lexsort((-dep, pix))
        pix, vals = pix[order], vals[order]
        first = np.ones(len(pix), dtype=bool)
        first[1:] = pix[1:] != pix[:-1]
        image[pix[first]] = vals[first]
        covered[pix[first]] = True
    return image.reshape(rows, cols), covered.reshape(rows, cols)


def frontalize(aligned, cam, mesh, shape=HOLISTIC_SHAPE, max_residual=DEFAULT_MAX_RESIDUAL,
               view=None, return_mask=False):
    """Texture the mesh from ``aligned`` through ``cam`` and render it frontally.

    ``view`` defaults to :func:`frontal_camera`, which places the frontal
    face where the holistic crop of a perfectly aligned face would be.
    """
    if cam.residual > max_residual:
        raise FrontalizationError(
            f"camera residual {cam.residual:.2f}px exceeds {max_residual:.2f}px")
    if view is None:
        view = frontal_camera(mesh)
    uv = project_points(cam, mesh.vertices)
    colors = bilinear_sample(aligned, uv[:, 0], uv[:, 1], mode="clamp")
    screen = project_points(view, mesh.vertices)
    image, mask = rasterize(screen, mesh.vertices[:, 2], colors, mesh.triangles, shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    if return_mask:
        return image, mask
    return image
