import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from femcam.errors import InputError, MeshError
from femcam.kernels import closest_points_brute
from femcam.meshes import (SpatialIndex, TriangleMesh, enclosed_volume, per_vertex_distance_field,
                           read_ply, signed_distance, surface_area, vertex_normals, write_ply)

from femcam.synth import voxelize
from femcam.volumes import extract_surface, mask_volume

from conftest import icosphere, unit_cube


def test_cube_volume_and_area():
    cube = unit_cube()
    assert cube.is_watertight()
    assert enclosed_volume(cube) == 1.0
    assert enclosed_volume(cube.flipped()) == -1.0
    assert surface_area(cube) == pytest.approx(6.0, abs=1e-15)
    assert surface_area(cube, []) == 0.0
    with pytest.raises(InputError):
        surface_area(cube, [12])


def test_right_triangle_area():
    m = TriangleMesh([[0, 0, 0], [3, 0, 0], [0, 4, 0]], [[0, 1, 2]])
    assert surface_area(m) == 6.0


def test_icosphere_volume():
    s = icosphere(10.0, 4)
    assert abs(enclosed_volume(s) / 4188.790204786391 - 1) < 0.005


def test_open_mesh_volume_rejected():
    m = TriangleMesh(unit_cube().vertices, unit_cube().triangles[:-1])
    with pytest.raises(MeshError):
        enclosed_volume(m)


@settings(max_examples=20, deadline=None)
@given(st.tuples(*[st.floats(-100, 100)] * 3), st.integers(0, 2 ** 31))
def test_volume_rigid_invariance(shift, seed):
    s = icosphere(7.0, 2)
    rot = Rotation.random(random_state=seed).as_matrix()
    moved = TriangleMesh(s.vertices @ rot.T + np.array(shift), s.triangles)
    assert enclosed_volume(moved) == pytest.approx(enclosed_volume(s), rel=1e-9)


def test_cube_corner_normal():
    n = vertex_normals(unit_cube())
    assert np.allclose(n[6], np.ones(3) / np.sqrt(3), atol=1e-12)
    assert np.allclose(n[0], -np.ones(3) / np.sqrt(3), atol=1e-12)


def test_icosphere_normals_radial():
    s = icosphere(3.0, 3)
    n = vertex_normals(s)
    radial = s.vertices / np.linalg.norm(s.vertices, axis=1, keepdims=True)
    assert np.all((n * radial).sum(1) > 0.999)


def test_flat_fan_normal_exact():
    v = [[0, 0, 0]] + [[np.cos(a), np.sin(a), 0] for a in np.linspace(0, 2 * np.pi, 7)[:-1]]
    t = [[0, i, i % 6 + 1] for i in range(1, 7)]
    assert np.array_equal(vertex_normals(TriangleMesh(v, t))[0], [0.0, 0.0, 1.0])


def test_isolated_vertex():
    m = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]], [[0, 1, 2]])
    with pytest.raises(MeshError):
        vertex_normals(m)


def test_cleaning_welds_and_drops():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1e-8, 0, 0], [2, 0, 0], [9, 9, 9]], float)
    t = np.array([[0, 1, 2], [3, 1, 2], [0, 1, 4], [3, 0, 1]])
    m = TriangleMesh.cleaned(v, t)
    # triangle 1 duplicates triangle 0 after welding, triangle 2 has zero area,
    # triangle 3 collapses to an edge; vertex 5 is unused
    assert len(m.triangles) == 2 and m.n_vertices == 3


def test_signed_distance_sphere():
    s = icosphere(5.0, 4)
    idx = SpatialIndex(s)
    assert signed_distance([0, 0, 0], s, idx) == pytest.approx(-5.0, abs=0.02)
    assert signed_distance([10, 0, 0], s, idx) == pytest.approx(5.0, abs=0.02)
    assert np.abs(signed_distance(s.vertices, s, idx)).max() < 1e-9


def test_sign_flips_with_orientation():
    s = icosphere(5.0, 2)
    q = np.random.default_rng(1).normal(scale=6, size=(200, 3))
    a = signed_distance(q, s)
    b = signed_distance(q, s.flipped())
    # corner order changes, so magnitudes may differ in the last bit
    assert np.array_equal(np.sign(a), -np.sign(b))
    assert np.allclose(a, -b, rtol=0, atol=1e-12)


def test_signed_distance_concave_edge():
    # L-shaped prism: the re-entrant edge is where face normals alone mis-sign
    m = np.zeros((8, 8, 4), bool)
    m[1:7, 1:3, 1:3] = True
    m[1:3, 1:7, 1:3] = True
    mesh = extract_surface(mask_volume(m, (1, 1, 1)))
    vox = voxelize(mesh, 0.25)
    pts = vox.world(np.argwhere(np.ones(vox.dims, bool)))
    sd = signed_distance(pts, mesh)
    inside = (vox.labels == 1).ravel()
    assert np.all(sd[inside] <= 0) and np.all(sd[~inside] >= 0)


def test_distance_field():
    s = icosphere(8.0, 3)
    field = per_vertex_distance_field(s, s)
    assert np.abs(field.scalars["healthy_distance"]).max() < 1e-9
    out = TriangleMesh(s.vertices + vertex_normals(s), s.triangles)
    d = per_vertex_distance_field(out, s).scalars["healthy_distance"]
    assert np.allclose(d, 1.0, atol=0.01)


def test_distance_field_brute_force(backend):
    s = icosphere(4.0, 2)         # 320 triangles
    rng = np.random.default_rng(5)
    src = TriangleMesh(s.vertices + rng.normal(scale=0.7, size=s.vertices.shape), s.triangles)
    idx = SpatialIndex(s, backend=backend)
    d = per_vertex_distance_field(src, s, index=idx).scalars["healthy_distance"]
    d2, _, _, _ = closest_points_brute(src.vertices, s.corners(), backend)
    assert np.allclose(np.abs(d), np.sqrt(d2), atol=1e-9, rtol=0)


def test_ply_round_trip(tmp_path):
    s = icosphere(2.0, 1)
    s.set_scalar("cam_height", np.linspace(0, 1, s.n_vertices))
    write_ply(tmp_path / "s.ply", s)
    text = (tmp_path / "s.ply").read_text()
    assert "property float cam_height" in text and "property list uchar int vertex_indices" in text
    r = read_ply(tmp_path / "s.ply")
    assert np.array_equal(r.vertices, s.vertices) and np.array_equal(r.triangles, s.triangles)
    assert np.array_equal(r.scalars["cam_height"], s.scalars["cam_height"])


def test_ply_errors(tmp_path):
    (tmp_path / "bad.ply").write_text("not a ply\n")
    with pytest.raises(InputError):
        read_ply(tmp_path / "bad.ply")
    with pytest.raises(InputError):
        read_ply(tmp_path / "missing.ply")
    (tmp_path / "bin.ply").write_text("ply\nformat binary_little_endian 1.0\nend_header\n")
    with pytest.raises(InputError):
        read_ply(tmp_path / "bin.ply")


def test_scalar_length_checked():
    with pytest.raises(InputError):
        TriangleMesh(unit_cube().vertices, unit_cube().triangles, {"x": np.zeros(3)})
