"""Linear BVH over triangles (Karras 2012) and ray queries.

Nodes ``0 .. n-2`` are internal, nodes ``n-1 .. 2n-2`` are leaves holding one
triangle each in Morton order.  A one-triangle mesh is a single leaf root.
The node arrays are plain numpy so they can be handed to the jitted kernels
as a tuple together with the mesh arrays (see :func:`geometry_tuple`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._jit import njit, pjit, prange
from .mesh import Mesh
from .vecmath import cross, dot, sub

DET_EPS = 1e-9
STACK_SIZE = 64
_BIG = 1e300


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_min: float = 0.0
    t_max: float = np.inf

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if n == 0:
            raise ValueError("zero ray direction")
        self.direction = d / n
        if not (0.0 <= self.t_min < self.t_max):
            raise ValueError("need 0 <= t_min < t_max")


@dataclass
class Hit:
    face_id: int
    t: float
    barycentrics: tuple  # weights of (v0, v1, v2)


@dataclass
class LBVH:
    bbox: np.ndarray  # (2n-1, 6) min xyz, max xyz
    child: np.ndarray  # (2n-1, 2), -1 for leaves
    leaf_prim: np.ndarray  # (2n-1,), -1 for internal nodes
    primitive_order: np.ndarray  # (n,) Morton-sorted triangle ids
    root: int

    @property
    def num_nodes(self):
        return len(self.bbox)


# ----------------------------------------------------------------------------
# Morton codes


@njit(inline="always")
def _expand_bits(v):
    v = (v * 0x00010001) & 0xFF0000FF
    v = (v * 0x00000101) & 0x0F00F00F
    v = (v * 0x00000011) & 0xC30C30C3
    v = (v * 0x00000005) & 0x49249249
    return v


@njit
def _quantize(x):
    # clamp to [0, 1-eps] then 10-bit bin
    if x < 0.0:
        x = 0.0
    q = int(x * 1024.0)
    return 1023 if q > 1023 else q


@njit
def morton3(x, y, z):
    return (_expand_bits(_quantize(x)) << 2) | (_expand_bits(_quantize(y)) << 1) | _expand_bits(_quantize(z))


def morton_code(p) -> int:
    """30-bit code of a point in the unit cube (x most significant)."""
    return int(morton3(float(p[0]), float(p[1]), float(p[2])))


# ----------------------------------------------------------------------------
# construction


@njit
def _highest_bit(x):
    n = 0
    if x >= (1 << 32):
        x >>= 32
        n += 32
    if x >= (1 << 16):
        x >>= 16
        n += 16
    if x >= (1 << 8):
        x >>= 8
        n += 8
    if x >= (1 << 4):
        x >>= 4
        n += 4
    if x >= (1 << 2):
        x >>= 2
        n += 2
    if x >= (1 << 1):
        n += 1
    return n


@njit
def _delta(keys, i, j):
    n = keys.shape[0]
    if j < 0 or j >= n:
        return -1
    return 63 - _highest_bit(keys[i] ^ keys[j])


@njit
def _build_topology(keys, child, parent):
    n = keys.shape[0]
    for i in range(n - 1):
        d = 1 if _delta(keys, i, i + 1) - _delta(keys, i, i - 1) > 0 else -1
        dmin = _delta(keys, i, i - d)
        lmax = 2
        while _delta(keys, i, i + lmax * d) > dmin:
            lmax *= 2
        l = 0
        t = lmax // 2
        while t >= 1:
            if _delta(keys, i, i + (l + t) * d) > dmin:
                l += t
            t //= 2
        j = i + l * d
        dnode = _delta(keys, i, j)
        s = 0
        t = l
        while True:
            t = (t + 1) // 2
            if _delta(keys, i, i + (s + t) * d) > dnode:
                s += t
            if t <= 1:
                break
        gamma = i + s * d + min(d, 0)
        left = gamma + (n - 1) if min(i, j) == gamma else gamma
        right = gamma + 1 + (n - 1) if max(i, j) == gamma + 1 else gamma + 1
        child[i, 0] = left
        child[i, 1] = right
        parent[left] = i
        parent[right] = i


@njit
def _fit_boxes(bbox, child, parent, n):
    visits = np.zeros(max(n - 1, 1), dtype=np.int64)
    for k in range(n):
        node = parent[n - 1 + k]
        while node >= 0:
            visits[node] += 1
            if visits[node] < 2:
                break
            a = child[node, 0]
            b = child[node, 1]
            for c in range(3):
                bbox[node, c] = min(bbox[a, c], bbox[b, c])
                bbox[node, 3 + c] = max(bbox[a, 3 + c], bbox[b, 3 + c])
            node = parent[node]


def build_lbvh(mesh: Mesh) -> LBVH:
    """Morton-ordered LBVH; deterministic for a given mesh."""
    faces = mesh.faces
    n = len(faces)
    if n < 1:
        raise ValueError("mesh has no faces")
    tri = mesh.vertices[faces]  # (n, 3, 3)
    lo, hi = mesh.bounds
    ext = np.where(hi - lo > 0, hi - lo, 1.0)
    cent = (tri.mean(axis=1) - lo) / ext
    codes = np.array([morton3(*c) for c in cent], dtype=np.int64) if n < 64 else _codes(cent)
    keys = (codes << 32) | np.arange(n, dtype=np.int64)
    order = np.argsort(keys, kind="stable")
    keys = keys[order]

    num = 2 * n - 1
    child = np.full((num, 2), -1, dtype=np.int64)
    parent = np.full(num, -1, dtype=np.int64)
    leaf_prim = np.full(num, -1, dtype=np.int64)
    leaf_prim[n - 1 :] = order
    bbox = np.zeros((num, 6))
    pad = 1e-7 * max(mesh.diagonal, 1e-12)
    bbox[n - 1 :, :3] = tri[order].min(axis=1) - pad
    bbox[n - 1 :, 3:] = tri[order].max(axis=1) + pad
    if n > 1:
        _build_topology(keys, child, parent)
        _fit_boxes(bbox, child, parent, n)
    return LBVH(bbox, child, leaf_prim, order.astype(np.int64), 0)


@njit
def _codes(cent):
    out = np.empty(cent.shape[0], dtype=np.int64)
    for i in range(cent.shape[0]):
        out[i] = morton3(cent[i, 0], cent[i, 1], cent[i, 2])
    return out


def check_invariants(bvh: LBVH, mesh: Mesh):
    """Raise AssertionError if the structural invariants are violated."""
    n = mesh.num_faces
    leaves = bvh.leaf_prim[bvh.leaf_prim >= 0]
    assert sorted(leaves.tolist()) == list(range(n)), "leaf coverage"
    for i in range(bvh.num_nodes):
        a, b = bvh.child[i]
        if a < 0:
            continue
        for c in (a, b):
            assert np.all(bvh.bbox[i, :3] <= bvh.bbox[c, :3]), "containment"
            assert np.all(bvh.bbox[i, 3:] >= bvh.bbox[c, 3:]), "containment"
    lo, hi = mesh.bounds
    assert np.all(bvh.bbox[bvh.root, :3] <= lo) and np.all(bvh.bbox[bvh.root, 3:] >= hi)


# ----------------------------------------------------------------------------
# queries


def geometry_tuple(mesh: Mesh, bvh: LBVH):
    return (
        mesh.vertices,
        mesh.faces,
        mesh.vertex_normals,
        np.ascontiguousarray(mesh.face_normals),
        bvh.bbox,
        bvh.child,
        bvh.leaf_prim,
        bvh.root,
    )


_NULL_GEO = None


def null_geometry():
    """Typed stand-in for kernels that take a geometry tuple but never trace."""
    global _NULL_GEO
    if _NULL_GEO is None:
        m = Mesh.from_arrays([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], [[0, 1, 2]])
        _NULL_GEO = geometry_tuple(m, build_lbvh(m))
    return _NULL_GEO


@njit(inline="always")
def ray_triangle(o, d, v0, v1, v2):
    """Moller-Trumbore, two-sided.  Returns (t, u, v); t < 0 on miss."""
    e1 = sub(v1, v0)
    e2 = sub(v2, v0)
    p = cross(d, e2)
    det = dot(e1, p)
    if abs(det) < DET_EPS:
        return -1.0, 0.0, 0.0
    inv = 1.0 / det
    s = sub(o, v0)
    u = dot(s, p) * inv
    if u < 0.0 or u > 1.0:
        return -1.0, 0.0, 0.0
    q = cross(s, e1)
    v = dot(d, q) * inv
    if v < 0.0 or u + v > 1.0:
        return -1.0, 0.0, 0.0
    return dot(e2, q) * inv, u, v


@njit(inline="always")
def _tri(V, F, f):
    a = F[f, 0]
    b = F[f, 1]
    c = F[f, 2]
    return (V[a, 0], V[a, 1], V[a, 2]), (V[b, 0], V[b, 1], V[b, 2]), (V[c, 0], V[c, 1], V[c, 2])


@njit(inline="always")
def _slab(bbox, node, o, inv):
    tx0 = (bbox[node, 0] - o[0]) * inv[0]
    tx1 = (bbox[node, 3] - o[0]) * inv[0]
    ty0 = (bbox[node, 1] - o[1]) * inv[1]
    ty1 = (bbox[node, 4] - o[1]) * inv[1]
    tz0 = (bbox[node, 2] - o[2]) * inv[2]
    tz1 = (bbox[node, 5] - o[2]) * inv[2]
    tn = max(max(min(tx0, tx1), min(ty0, ty1)), min(tz0, tz1))
    tf = min(min(max(tx0, tx1), max(ty0, ty1)), max(tz0, tz1))
    return tn, tf


@njit(inline="always")
def _inv_dir(d):
    return (
        1.0 / d[0] if abs(d[0]) > 1e-300 else _BIG,
        1.0 / d[1] if abs(d[1]) > 1e-300 else _BIG,
        1.0 / d[2] if abs(d[2]) > 1e-300 else _BIG,
    )


@njit
def closest_hit(geo, o, d, tmin, tmax):
    """Nearest hit -> (face, t, u, v); face = -1 on miss."""
    V, F = geo[0], geo[1]
    bbox, child, leaf_prim, root = geo[4], geo[5], geo[6], geo[7]
    inv = _inv_dir(d)
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    sp = 0
    stack[sp] = root
    sp += 1
    best_f = -1
    best_t = tmax
    best_u = 0.0
    best_v = 0.0
    while sp > 0:
        sp -= 1
        node = stack[sp]
        tn, tf = _slab(bbox, node, o, inv)
        if tn > tf or tf < tmin or tn > best_t:
            continue
        prim = leaf_prim[node]
        if prim >= 0:
            v0, v1, v2 = _tri(V, F, prim)
            t, u, v = ray_triangle(o, d, v0, v1, v2)
            if t >= tmin and t <= tmax and (t < best_t or (t == best_t and (best_f < 0 or prim < best_f))):
                best_t = t
                best_f = prim
                best_u = u
                best_v = v
        else:
            a = child[node, 0]
            b = child[node, 1]
            ta, _ = _slab(bbox, a, o, inv)
            tb, _ = _slab(bbox, b, o, inv)
            # push far child first so the near one is popped first
            if ta <= tb:
                stack[sp] = b
                stack[sp + 1] = a
            else:
                stack[sp] = a
                stack[sp + 1] = b
            sp += 2
    return best_f, best_t, best_u, best_v


@njit
def any_hit(geo, o, d, tmin, tmax):
    V, F = geo[0], geo[1]
    bbox, child, leaf_prim, root = geo[4], geo[5], geo[6], geo[7]
    inv = _inv_dir(d)
    stack = np.empty(STACK_SIZE, dtype=np.int64)
    sp = 0
    stack[sp] = root
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        tn, tf = _slab(bbox, node, o, inv)
        if tn > tf or tf <= tmin or tn >= tmax:
            continue
        prim = leaf_prim[node]
        if prim >= 0:
            v0, v1, v2 = _tri(V, F, prim)
            t, u, v = ray_triangle(o, d, v0, v1, v2)
            if t > tmin and t < tmax:
                return True
        else:
            stack[sp] = child[node, 0]
            stack[sp + 1] = child[node, 1]
            sp += 2
    return False


@njit
def brute_closest(V, F, o, d, tmin, tmax):
    best_f = -1
    best_t = tmax
    best_u = 0.0
    best_v = 0.0
    for f in range(F.shape[0]):
        v0, v1, v2 = _tri(V, F, f)
        t, u, v = ray_triangle(o, d, v0, v1, v2)
        if t >= tmin and t <= tmax and (t < best_t or (t == best_t and best_f < 0)):
            best_t = t
            best_f = f
            best_u = u
            best_v = v
    return best_f, best_t, best_u, best_v


@njit
def brute_any(V, F, o, d, tmin, tmax):
    for f in range(F.shape[0]):
        v0, v1, v2 = _tri(V, F, f)
        t, u, v = ray_triangle(o, d, v0, v1, v2)
        if t > tmin and t < tmax:
            return True
    return False


@pjit
def _batch_closest(geo, O, D, tmin, tmax, brute, out_f, out_tuv):
    for i in prange(O.shape[0]):
        o = (O[i, 0], O[i, 1], O[i, 2])
        d = (D[i, 0], D[i, 1], D[i, 2])
        if brute:
            f, t, u, v = brute_closest(geo[0], geo[1], o, d, tmin[i], tmax[i])
        else:
            f, t, u, v = closest_hit(geo, o, d, tmin[i], tmax[i])
        out_f[i] = f
        out_tuv[i, 0] = t
        out_tuv[i, 1] = u
        out_tuv[i, 2] = v


@pjit
def _batch_any(geo, O, D, tmin, tmax, brute, out):
    for i in prange(O.shape[0]):
        o = (O[i, 0], O[i, 1], O[i, 2])
        d = (D[i, 0], D[i, 1], D[i, 2])
        if brute:
            out[i] = brute_any(geo[0], geo[1], o, d, tmin[i], tmax[i])
        else:
            out[i] = any_hit(geo, o, d, tmin[i], tmax[i])


def _prep(origins, dirs, t_min, t_max):
    O = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    D = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    D = D / np.linalg.norm(D, axis=1, keepdims=True)
    n = len(O)
    tmin = np.broadcast_to(np.asarray(t_min, dtype=np.float64), (n,)).copy()
    tmax = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,)).copy()
    tmax[np.isinf(tmax)] = _BIG
    return O, D, tmin, tmax


def intersect_batch(bvh: LBVH, mesh: Mesh, origins, dirs, t_min=0.0, t_max=np.inf, brute=False):
    """Closest hits for many rays -> (face_id, t, barycentrics[n, 3]).

    ``brute=True`` runs the exhaustive all-triangle oracle instead.
    """
    O, D, tmin, tmax = _prep(origins, dirs, t_min, t_max)
    face = np.empty(len(O), dtype=np.int64)
    tuv = np.empty((len(O), 3))
    _batch_closest(geometry_tuple(mesh, bvh), O, D, tmin, tmax, brute, face, tuv)
    u, v = tuv[:, 1], tuv[:, 2]
    bary = np.stack([1.0 - u - v, u, v], axis=1)
    return face, tuv[:, 0], bary


def occluded_batch(bvh: LBVH, mesh: Mesh, origins, dirs, t_min=0.0, t_max=np.inf, brute=False):
    O, D, tmin, tmax = _prep(origins, dirs, t_min, t_max)
    out = np.empty(len(O), dtype=np.bool_)
    _batch_any(geometry_tuple(mesh, bvh), O, D, tmin, tmax, brute, out)
    return out


def intersect(bvh: LBVH, mesh: Mesh, ray: Ray) -> Optional[Hit]:
    f, t, u, v = closest_hit(
        geometry_tuple(mesh, bvh), tuple(ray.origin), tuple(ray.direction), ray.t_min, min(ray.t_max, _BIG)
    )
    if f < 0:
        return None
    return Hit(int(f), float(t), (1.0 - u - v, u, v))


def occluded(bvh: LBVH, mesh: Mesh, ray: Ray) -> bool:
    return bool(
        any_hit(geometry_tuple(mesh, bvh), tuple(ray.origin), tuple(ray.direction), ray.t_min, min(ray.t_max, _BIG))
    )
