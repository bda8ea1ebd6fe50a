"""Triangle meshes: OBJ loading, per-vertex attributes, procedural test shapes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

R_MIN = 0.04
MAT_CHANNELS = 5  # albedo rgb, roughness, metallic
DEGENERATE_AREA = 1e-12


def default_materials(n: int, albedo=0.5, roughness=0.5, metallic=0.0) -> np.ndarray:
    mats = np.empty((n, MAT_CHANNELS))
    mats[:, :3] = albedo
    mats[:, 3] = roughness
    mats[:, 4] = metallic
    return mats


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int64
    vertex_normals: np.ndarray  # (V, 3) unit
    vertex_materials: np.ndarray = None  # (V, 5)
    dropped_faces: int = 0

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        self.vertex_normals = np.ascontiguousarray(self.vertex_normals, dtype=np.float64)
        if self.vertex_materials is None:
            self.vertex_materials = default_materials(len(self.vertices))
        self.vertex_materials = np.ascontiguousarray(self.vertex_materials, dtype=np.float64)
        self.face_normals = face_normals(self.vertices, self.faces)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @property
    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def diagonal(self) -> float:
        lo, hi = self.bounds
        return float(np.linalg.norm(hi - lo))

    def face_areas(self) -> np.ndarray:
        return triangle_areas(self.vertices, self.faces)

    def surface_area(self) -> float:
        return float(self.face_areas().sum())

    def validate(self):
        if len(self.faces) == 0:
            raise ValueError("mesh has no faces")
        if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
            raise ValueError("face index out of range")
        nrm = np.linalg.norm(self.vertex_normals, axis=1)
        if np.any(np.abs(nrm - 1.0) > 1e-4):
            raise ValueError("vertex normals are not unit length")
        if np.any(self.face_areas() < DEGENERATE_AREA):
            raise ValueError("mesh contains degenerate faces")

    @classmethod
    def from_arrays(cls, vertices, faces, normals=None, materials=None) -> "Mesh":
        vertices = np.asarray(vertices, dtype=np.float64)
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        areas = triangle_areas(vertices, faces)
        keep = areas >= DEGENERATE_AREA
        dropped = int((~keep).sum())
        faces = faces[keep]
        if len(faces) == 0:
            raise ValueError("no triangles left after dropping degenerate faces")
        if normals is None:
            normals = area_weighted_normals(vertices, faces)
        return cls(vertices, faces, normals, materials, dropped_faces=dropped)

    def concat(self, other: "Mesh") -> "Mesh":
        off = len(self.vertices)
        return Mesh(
            np.vstack([self.vertices, other.vertices]),
            np.vstack([self.faces, other.faces + off]),
            np.vstack([self.vertex_normals, other.vertex_normals]),
            np.vstack([self.vertex_materials, other.vertex_materials]),
        )


@dataclass
class SurfacePoint:
    position: np.ndarray
    shading_normal: np.ndarray
    geometric_normal: np.ndarray
    material: np.ndarray  # (5,) albedo rgb, roughness, metallic
    outgoing: np.ndarray
    face_id: int = -1
    barycentrics: tuple = field(default=(1.0, 0.0, 0.0))

    @property
    def albedo(self):
        return self.material[:3]

    @property
    def roughness(self):
        return float(self.material[3])

    @property
    def metallic(self):
        return float(self.material[4])


def triangle_areas(vertices, faces) -> np.ndarray:
    v0, v1, v2 = (vertices[faces[:, k]] for k in range(3))
    return 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)


def face_normals(vertices, faces) -> np.ndarray:
    v0, v1, v2 = (vertices[faces[:, k]] for k in range(3))
    n = np.cross(v1 - v0, v2 - v0)
    ln = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.where(ln > 0, ln, 1.0)


def area_weighted_normals(vertices, faces) -> np.ndarray:
    v0, v1, v2 = (vertices[faces[:, k]] for k in range(3))
    fn = np.cross(v1 - v0, v2 - v0)  # length = 2 * area
    acc = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(acc, faces[:, k], fn)
    ln = np.linalg.norm(acc, axis=1, keepdims=True)
    out = np.zeros_like(acc)
    out[:, 2] = 1.0
    ok = ln[:, 0] > 0
    out[ok] = acc[ok] / ln[ok]
    return out


def interpolate_surface(mesh: Mesh, hit, incoming_dir) -> SurfacePoint:
    """Barycentric surface attributes at ``hit`` seen along ``incoming_dir``.

    The geometric normal is oriented toward the viewer and the shading
    normal is flipped into the same hemisphere.
    """
    f = mesh.faces[hit.face_id]
    u, v, w = hit.barycentrics
    bw = np.array([u, v, w])
    pos = bw @ mesh.vertices[f]
    d = np.asarray(incoming_dir, dtype=np.float64)
    ng = mesh.face_normals[hit.face_id].copy()
    if ng @ d > 0:
        ng = -ng
    ns = bw @ mesh.vertex_normals[f]
    ns = ns / np.linalg.norm(ns)
    if ns @ ng < 0:
        ns = -ns
    mat = bw @ mesh.vertex_materials[f]
    return SurfacePoint(pos, ns, ng, mat, -d, hit.face_id, (u, v, w))


# ----------------------------------------------------------------------------
# OBJ


def load_mesh(path) -> Mesh:
    """Read a Wavefront OBJ (v / vn / f records).

    Polygons are fan-triangulated, so quads split as (0,1,2),(0,2,3).
    Zero-area faces are dropped and counted in ``Mesh.dropped_faces``.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise OSError(f"cannot read mesh {path}: {e}") from e

    verts, norms, tris, tri_n = [], [], [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        try:
            if tag == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif tag == "vn":
                norms.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                vi, ni = [], []
                for tok in parts[1:]:
                    fields = tok.split("/")
                    idx = int(fields[0])
                    vi.append(idx - 1 if idx > 0 else len(verts) + idx)
                    if len(fields) >= 3 and fields[2]:
                        nidx = int(fields[2])
                        ni.append(nidx - 1 if nidx > 0 else len(norms) + nidx)
                for k in range(1, len(vi) - 1):
                    tris.append((vi[0], vi[k], vi[k + 1]))
                    if len(ni) == len(vi):
                        tri_n.append((ni[0], ni[k], ni[k + 1]))
        except ValueError as e:
            raise ValueError(f"{path}:{lineno}: malformed record {line!r}") from e

    if not verts or not tris:
        raise ValueError(f"{path}: no triangles")
    vertices = np.array(verts, dtype=np.float64)
    faces = np.array(tris, dtype=np.int64)
    if faces.max() >= len(vertices) or faces.min() < 0:
        raise ValueError(f"{path}: face index out of range")

    normals = None
    if norms and len(tri_n) == len(tris):
        nrm = np.array(norms, dtype=np.float64)
        acc = np.zeros_like(vertices)
        np.add.at(acc, faces.ravel(), nrm[np.array(tri_n).ravel()])
        ln = np.linalg.norm(acc, axis=1, keepdims=True)
        if np.all(ln > 0):
            normals = acc / ln

    mesh = Mesh.from_arrays(vertices, faces, normals)
    if mesh.dropped_faces:
        log.warning("%s: dropped %d degenerate face(s)", path, mesh.dropped_faces)
    return mesh


def save_obj(mesh: Mesh, path):
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"vn {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertex_normals]
    lines += [f"f {a+1}//{a+1} {b+1}//{b+1} {c+1}//{c+1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


# ----------------------------------------------------------------------------
# procedural shapes


def icosphere(subdivisions=3, radius=1.0, center=(0.0, 0.0, 0.0)) -> Mesh:
    t = (1.0 + 5.0**0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    unit = np.array(verts)
    return Mesh.from_arrays(unit * radius + np.asarray(center), np.array(faces), unit.copy())


def grid_plane(nx=8, ny=8, size=(2.0, 2.0), center=(0.0, 0.0, 0.0), normal_axis=2, flip=False) -> Mesh:
    """Tessellated axis-aligned rectangle facing +axis (or -axis if ``flip``)."""
    xs = np.linspace(-0.5, 0.5, nx + 1) * size[0]
    ys = np.linspace(-0.5, 0.5, ny + 1) * size[1]
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    a, b = [ax for ax in range(3) if ax != normal_axis]
    if normal_axis == 1:  # keep +y facing with right-handed winding
        a, b = b, a
    pts = np.zeros((gx.size, 3))
    pts[:, a] = gx.ravel()
    pts[:, b] = gy.ravel()
    pts += np.asarray(center)
    faces = []
    for j in range(ny):
        for i in range(nx):
            p = j * (nx + 1) + i
            q = p + nx + 1
            faces += [(p, p + 1, q + 1), (p, q + 1, q)]
    faces = np.array(faces)
    if flip:
        faces = faces[:, ::-1]
    nrm = np.zeros_like(pts)
    nrm[:, normal_axis] = -1.0 if flip else 1.0
    return Mesh.from_arrays(pts, faces, nrm)


def box(lo=(-0.5, -0.5, -0.5), hi=(0.5, 0.5, 0.5), inward=False) -> Mesh:
    """Axis-aligned box with flat per-face normals (24 vertices)."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    size, c = hi - lo, (hi + lo) / 2
    parts = []
    for axis in range(3):
        for sgn in (-1.0, 1.0):
            ctr = c.copy()
            ctr[axis] += sgn * size[axis] / 2
            dims = [size[k] for k in range(3) if k != axis]
            if axis == 1:
                dims = dims[::-1]
            outward_flip = sgn < 0
            parts.append(
                grid_plane(1, 1, dims, ctr, normal_axis=axis, flip=outward_flip != inward)
            )
    m = parts[0]
    for p in parts[1:]:
        m = m.concat(p)
    return m
