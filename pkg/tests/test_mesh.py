import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from restir_ir.bvh import Hit
from restir_ir.mesh import Mesh, icosphere, interpolate_surface, load_mesh, save_obj


def _write(tmp_path, text, name="m.obj"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_single_triangle_obj(tmp_path):
    m = load_mesh(_write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"))
    assert m.num_vertices == 3 and m.num_faces == 1
    np.testing.assert_allclose(m.vertex_normals, [[0, 0, 1]] * 3)
    m.validate()


def test_degenerate_face_dropped(tmp_path):
    m = load_mesh(_write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\nf 1 1 2\n"))
    assert m.num_faces == 1
    assert m.dropped_faces == 1


def test_quad_split_order(tmp_path):
    m = load_mesh(_write(tmp_path, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"))
    np.testing.assert_array_equal(m.faces, [[0, 1, 2], [0, 2, 3]])


def test_zero_triangles_is_error(tmp_path):
    with pytest.raises(ValueError):
        load_mesh(_write(tmp_path, "v 0 0 0\nv 1 0 0\nf 1 1 2\n"))


def test_unreadable_file(tmp_path):
    with pytest.raises(OSError):
        load_mesh(tmp_path / "missing.obj")


def test_malformed_record(tmp_path):
    with pytest.raises(ValueError):
        load_mesh(_write(tmp_path, "v 0 0 zero\n"))


def test_icosphere_area(tmp_path):
    ico = icosphere(2)
    assert ico.num_faces == 320
    p = tmp_path / "ico.obj"
    save_obj(ico, p)
    m = load_mesh(p)
    assert abs(m.surface_area() - 4 * math.pi) / (4 * math.pi) < 0.05


def test_obj_roundtrip(tmp_path):
    ico = icosphere(1)
    save_obj(ico, tmp_path / "a.obj")
    m = load_mesh(tmp_path / "a.obj")
    np.testing.assert_allclose(m.vertices, ico.vertices, atol=1e-8)
    np.testing.assert_array_equal(m.faces, ico.faces)
    np.testing.assert_allclose(m.vertex_normals, ico.vertex_normals, atol=1e-7)


def _tri_mesh():
    m = Mesh.from_arrays([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    m.vertex_materials[:, :3] = np.eye(3)
    m.vertex_materials[:, 3] = [0.1, 0.5, 0.9]
    return m


def test_interpolate_at_vertex():
    m = _tri_mesh()
    sp = interpolate_surface(m, Hit(0, 1.0, (1.0, 0.0, 0.0)), [0, 0, -1])
    np.testing.assert_array_equal(sp.material, m.vertex_materials[0])
    np.testing.assert_allclose(sp.outgoing, [0, 0, 1])


def test_interpolate_barycenter_albedo():
    m = _tri_mesh()
    sp = interpolate_surface(m, Hit(0, 1.0, (1 / 3, 1 / 3, 1 / 3)), [0, 0, -1])
    np.testing.assert_allclose(sp.albedo, [1 / 3] * 3)


def test_normals_flip_toward_viewer():
    m = _tri_mesh()
    sp = interpolate_surface(m, Hit(0, 1.0, (0.2, 0.3, 0.5)), [0, 0, 1])  # seen from below
    assert sp.geometric_normal[2] < 0 and sp.shading_normal[2] < 0
    assert sp.outgoing @ sp.geometric_normal >= 0


@given(st.floats(0, 1), st.floats(0, 1))
def test_interpolated_position_consistent(a, b):
    m = icosphere(1)
    u, v = (a, b) if a + b <= 1 else (1 - a, 1 - b)
    w = 1 - u - v
    f = 7
    sp = interpolate_surface(m, Hit(f, 1.0, (w, u, v)), [0, 0, -1])
    expected = w * m.vertices[m.faces[f, 0]] + u * m.vertices[m.faces[f, 1]] + v * m.vertices[m.faces[f, 2]]
    assert np.linalg.norm(sp.position - expected) < 1e-6


def test_sphere_shading_normals(rng):
    m = icosphere(4)  # 5120 faces
    for _ in range(500):
        f = rng.integers(m.num_faces)
        u, v = rng.random(2)
        if u + v > 1:
            u, v = 1 - u, 1 - v
        p = m.vertices[m.faces[f]]
        x = (1 - u - v) * p[0] + u * p[1] + v * p[2]
        sp = interpolate_surface(m, Hit(int(f), 1.0, (1 - u - v, u, v)), -x / np.linalg.norm(x))
        ang = math.degrees(math.acos(min(1.0, sp.shading_normal @ (x / np.linalg.norm(x)))))
        assert ang < 2.0


def test_concat_offsets_faces():
    a = icosphere(0)
    b = icosphere(0, center=(3, 0, 0))
    c = a.concat(b)
    assert c.num_faces == 40 and c.faces.max() == 23
