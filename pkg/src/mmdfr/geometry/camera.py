"""Affine orthographic camera between the generic mesh and an image."""

from dataclasses import dataclass

import numpy as np

from mmdfr.errors import FitError
from mmdfr.geometry.align import DEFAULT_CROP_ORIGIN, default_template


@dataclass
class CameraFit:
    P: np.ndarray  # (2, 4)
    residual: float = 0.0  # RMS reprojection error, pixels


def project_points(cam, points3d):
    """``P @ [x, y, z, 1]`` for each row of ``points3d``."""
    P = cam.P if isinstance(cam, CameraFit) else np.asarray(cam, dtype=np.float64)
    pts = np.asarray(points3d, dtype=np.float64)
    return pts @ P[:, :3].T + P[:, 3]


def fit_camera(lm, mesh_or_anchors):
    """Least-squares 2x4 affine camera mapping the mesh anchors onto ``lm``.

    Planar anchor sets are accepted: the minimum-norm solution leaves the
    out-of-plane column at zero.  Collinear anchors or coincident landmarks
    make the fit meaningless and raise ``FitError``.
    """
    anchors = getattr(mesh_or_anchors, "anchors", mesh_or_anchors)
    X = np.asarray(anchors, dtype=np.float64)
    y = np.asarray(lm, dtype=np.float64)
    if len(X) < 5 or len(X) != len(y):
        raise FitError("camera fit needs at least 5 matching correspondences")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise FitError("non-finite correspondences")

    sx = np.linalg.svd(X - X.mean(axis=0), compute_uv=False)
    tol = 1e-9 * max(sx[0], 1.0)
    if np.sum(sx > tol) < 2:
        raise FitError("rank-deficient design: anchors are collinear")
    sy = np.linalg.svd(y - y.mean(axis=0), compute_uv=False)
    if sy[0] <= 1e-9 * max(np.abs(y).max(), 1.0):
        raise FitError("rank-deficient design: landmarks are coincident")

    A = np.column_stack([X, np.ones(len(X))])
    sol, *_ = np.linalg.lstsq(A, y, rcond=None)
    P = sol.T
    err = A @ sol - y
    residual = float(np.sqrt(np.mean(np.sum(err ** 2, axis=1))))
    return CameraFit(P, residual)


def frontal_camera(mesh, template=None, origin=DEFAULT_CROP_ORIGIN):
    """Canonical frontal view into the holistic frame.

    Scaled orthographic (x right, y flipped to point down) whose scale and
    translation best place the mesh anchors on the template landmarks,
    shifted by the holistic crop origin.
    """
    if template is None:
        template = default_template()
    target = np.asarray(template, dtype=np.float64) - np.asarray(origin, dtype=np.float64)
    X = mesh.anchors
    n = len(X)
    A = np.zeros((2 * n, 3))
    A[0::2, 0] = X[:, 0]
    A[0::2, 1] = 1.0
    A[1::2, 0] = -X[:, 1]
    A[1::2, 2] = 1.0
    s, tx, ty = np.linalg.lstsq(A, target.reshape(-1), rcond=None)[0]
    P = np.array([[s, 0.0, 0.0, tx], [0.0, -s, 0.0, ty]])
    err = (A @ np.array([s, tx, ty]) - target.reshape(-1)).reshape(-1, 2)
    return CameraFit(P, float(np.sqrt(np.mean(np.sum(err ** 2, axis=1)))))
