"""Generic 3-D face mesh and its text file format.

File layout::

    V T
    x y z            (V lines)
    i j k            (T lines, 0-based)
    anchors i1 i2 i3 i4 i5
    patchpts i1 ... i9

Model axes: x to the image right, y up, z towards the viewer.
"""

from dataclasses import dataclass

import numpy as np

from mmdfr.errors import DimensionError, ParseError

# Canonical face units: interocular distance 1, eye line at v = 0, v grows downwards.
CANONICAL_LANDMARKS = np.array([
    [-0.5, 0.0],
    [0.5, 0.0],
    [0.0, 0.55],
    [-0.375, 1.0],
    [0.375, 1.0],
])

# Nine patch landmarks: eyes, nose, mouth center, cheeks, jaw contour, forehead.
CANONICAL_PATCH_POINTS = np.array([
    [-0.5, 0.0],
    [0.5, 0.0],
    [0.0, 0.55],
    [0.0, 1.0],
    [-0.55, 0.6],
    [0.55, 0.6],
    [-0.55, 1.1],
    [0.55, 1.1],
    [0.0, -0.5],
])
PATCH_MIRROR = (1, 0, 2, 3, 5, 4, 7, 6, 8)
DEFAULT_PATCH_SELECTION = (0, 1, 2, 3, 4, 6)

FACE_CENTER_V = 0.45


@dataclass
class GenericMesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (T, 3) int
    anchor5: np.ndarray  # (5,) int
    patch_landmarks9: np.ndarray  # (9,) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.anchor5 = np.asarray(self.anchor5, dtype=np.int64)
        self.patch_landmarks9 = np.asarray(self.patch_landmarks9, dtype=np.int64)
        self.validate()

    def validate(self):
        v = self.vertices
        if v.ndim != 2 or v.shape[1] != 3 or not np.all(np.isfinite(v)):
            raise DimensionError("mesh vertices must be a finite (V, 3) array")
        n = len(v)
        if self.anchor5.shape != (5,) or self.patch_landmarks9.shape != (9,):
            raise DimensionError("mesh needs exactly 5 anchors and 9 patch landmarks")
        for name, idx in (("triangles", self.triangles), ("anchors", self.anchor5),
                          ("patchpts", self.patch_landmarks9)):
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise DimensionError(f"mesh {name} index out of range")
        if len(self.triangles):
            p = v[self.triangles]
            cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
            if np.any(np.linalg.norm(cross, axis=1) <= 1e-12):
                raise DimensionError("mesh contains degenerate triangles")

    @property
    def anchors(self):
        return self.vertices[self.anchor5]

    @property
    def patch_points(self):
        return self.vertices[self.patch_landmarks9]


def _symmetric_axis(half_extent, step):
    n = int(round(half_extent / step))
    pos = np.arange(1, n + 1) * step
    return np.concatenate([-pos[::-1], [0.0], pos])


def make_face_mesh(step=0.025, semi_axes=(0.95, 1.3), depth=0.6):
    """Procedural half-ellipsoid face, mirror symmetric in x.

    The grid spacing divides the canonical landmark coordinates so anchors and
    patch landmarks are exact vertices.
    """
    a, b = semi_axes
    us = _symmetric_axis(a, step)
    vs = FACE_CENTER_V + _symmetric_axis(b, step)
    uu, vv = np.meshgrid(us, vs)
    rr = (uu / a) ** 2 + ((vv - FACE_CENTER_V) / b) ** 2
    inside = rr < 1.0 - 1e-12
    index = -np.ones(uu.shape, dtype=np.int64)
    index[inside] = np.arange(inside.sum())
    z = depth * np.sqrt(np.clip(1.0 - rr, 0.0, None))
    vertices = np.column_stack([uu[inside], -(vv[inside] - FACE_CENTER_V), z[inside]])

    i00 = index[:-1, :-1]
    i01 = index[:-1, 1:]
    i10 = index[1:, :-1]
    i11 = index[1:, 1:]
    full = (i00 >= 0) & (i01 >= 0) & (i10 >= 0) & (i11 >= 0)
    tris = np.concatenate([
        np.column_stack([i00[full], i10[full], i01[full]]),
        np.column_stack([i01[full], i10[full], i11[full]]),
    ])

    def lookup(points):
        out = []
        for u, v in points:
            target = np.array([u, -(v - FACE_CENTER_V)])
            d = np.linalg.norm(vertices[:, :2] - target, axis=1)
            out.append(int(np.argmin(d)))
        return np.array(out)

    return GenericMesh(vertices, tris, lookup(CANONICAL_LANDMARKS), lookup(CANONICAL_PATCH_POINTS))


def write_mesh(mesh, path):
    lines = [f"{len(mesh.vertices)} {len(mesh.triangles)}"]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += [" ".join(str(int(i)) for i in t) for t in mesh.triangles]
    lines.append("anchors " + " ".join(str(int(i)) for i in mesh.anchor5))
    lines.append("patchpts " + " ".join(str(int(i)) for i in mesh.patch_landmarks9))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def read_mesh(path):
    with open(path, encoding="utf-8") as f:
        lines = [ln.strip() for ln in f]
    lines = [(i + 1, ln) for i, ln in enumerate(lines) if ln]
    if not lines:
        raise ParseError(f"{path}: empty mesh file")
    try:
        nv, nt = (int(t) for t in lines[0][1].split())
    except ValueError:
        raise ParseError("header must be 'V T'", lines[0][0]) from None
    if len(lines) != 1 + nv + nt + 2:
        raise ParseError(f"{path}: expected {3 + nv + nt} non-empty lines, got {len(lines)}")

    def numbers(lineno, text, n, cast):
        parts = text.split()
        if len(parts) != n:
            raise ParseError(f"expected {n} fields", lineno)
        try:
            return [cast(p) for p in parts]
        except ValueError:
            raise ParseError("bad number", lineno) from None

    verts = [numbers(no, t, 3, float) for no, t in lines[1:1 + nv]]
    tris = [numbers(no, t, 3, int) for no, t in lines[1 + nv:1 + nv + nt]]
    extra = {}
    for no, text in lines[1 + nv + nt:]:
        key, _, rest = text.partition(" ")
        if key not in ("anchors", "patchpts"):
            raise ParseError(f"unexpected record {key!r}", no)
        extra[key] = numbers(no, rest, 5 if key == "anchors" else 9, int)
    if set(extra) != {"anchors", "patchpts"}:
        raise ParseError(f"{path}: missing anchors or patchpts line")
    return GenericMesh(np.array(verts).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3),
                       extra["anchors"], extra["patchpts"])
