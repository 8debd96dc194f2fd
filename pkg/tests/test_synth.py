import numpy as np
import pytest

from femcam import synth
from femcam.errors import InputError, MeshError
from femcam.headfit import SphereFit, head_volume, refine_head_mask
from femcam.meshes import TriangleMesh, enclosed_volume
from femcam.volumes import FEMUR, extract_surface

from conftest import MODEL_RES, icosphere, unit_cube

RES = MODEL_RES


@pytest.fixture(scope="module")
def template():
    return synth.make_template(resolution=RES)


def test_template_watertight_and_deterministic(template):
    assert template.is_watertight() and enclosed_volume(template) > 0
    again = synth.make_template(resolution=RES)
    assert np.array_equal(again.vertices, template.vertices)
    assert np.array_equal(again.triangles, template.triangles)


def test_shared_topology(template):
    other = synth.make_template(synth.FEMALE_SPEC, RES)
    assert np.array_equal(other.triangles, template.triangles)
    assert not np.array_equal(other.vertices, template.vertices)
    assert np.array_equal(synth.topology(RES), template.triangles)


def test_head_region_volume(template):
    vol = synth.voxelize(template, 0.5)
    fit = SphereFit(synth.head_center(resolution=RES), 25.1, 1.0)
    got = head_volume(refine_head_mask(vol.voxels(FEMUR), fit))
    assert got == pytest.approx(4 / 3 * np.pi * 25.1 ** 3 / 1000, rel=0.02)


@pytest.mark.parametrize("field, value", [("neck_length", 0.0), ("head_radius", -1.0),
                                          ("neck_shaft_angle", 170.0)])
def test_invalid_spec(field, value):
    with pytest.raises(InputError):
        synth.PhantomSpec().replace(**{field: value})


def test_spec_file_round_trip(tmp_path):
    spec = synth.FEMALE_SPEC.replace(seed=4)
    synth.write_spec(tmp_path / "s.txt", spec)
    assert synth.read_spec(tmp_path / "s.txt") == spec
    (tmp_path / "bad.txt").write_text("wingspan = 3\n")
    with pytest.raises(InputError):
        synth.read_spec(tmp_path / "bad.txt")


def test_cohort_basics():
    with pytest.raises(InputError):
        synth.make_cohort(1, resolution=RES)
    a, specs = synth.make_cohort(3, seed=1, resolution=RES)
    b, _ = synth.make_cohort(3, seed=1, resolution=RES)
    c, _ = synth.make_cohort(3, seed=2, resolution=RES)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], c[0])
    assert len({s.head_radius for s in specs}) == 3


def test_zero_variation_cohort():
    shapes, specs = synth.make_cohort(4, variation={}, seed=0, resolution=RES, noise=0.05)
    base, _ = synth.cohort_shape(synth.PhantomSpec(), RES)
    for s in shapes:
        assert np.abs(s - base).max() < 0.05 * 6
    assert all(sp == synth.PhantomSpec() for sp in specs)


def test_bump_peak(template):
    v, t = template.vertices, template.triangles
    c = synth.frame_vertex(RES)
    assert np.array_equal(synth.inject_bump(v, t, synth.BumpSpec(c, 0.0, 8.0)), v)
    moved = synth.inject_bump(v, t, synth.BumpSpec(c, 3.0, 8.0))
    disp = np.linalg.norm(moved - v, axis=1)
    assert disp.max() == pytest.approx(3.0, abs=0.01)
    assert disp.argmax() == c
    with pytest.raises(InputError):
        synth.inject_bump(v, t, synth.BumpSpec(len(v), 3.0, 8.0))
    with pytest.raises(InputError):
        synth.BumpSpec(c, -1.0, 8.0)


def _bump_case(template, sigma, peak=2.0):
    v, t = template.vertices, template.triangles
    bump = synth.BumpSpec(synth.frame_vertex(RES), peak, sigma)
    patho = TriangleMesh(synth.inject_bump(v, t, bump), t)
    support = np.flatnonzero(synth.bump_heights(v, t, bump) > 0)
    ring = np.unique(t[np.isin(t, support).any(axis=1)])
    return patho, ring


@pytest.mark.parametrize("sigma", [3.0, 5.0])
def test_bump_volume_against_closed_form(template, sigma):
    patho, ring = _bump_case(template, sigma)
    oracle = synth.oracle_cam_volume(patho, template, ring)
    assert oracle == pytest.approx(2 * np.pi * sigma ** 2 * 2.0, rel=0.05)


def test_oracle_converges(template):
    patho, ring = _bump_case(template, 3.0)
    coarse = synth.oracle_cam_volume(patho, template, ring, 0.25)
    fine = synth.oracle_cam_volume(patho, template, ring, 0.125)
    assert abs(coarse / fine - 1) < 0.02


def test_oracle_trivial(template):
    assert synth.oracle_cam_volume(template, template, np.arange(template.n_vertices)) == 0.0


def test_oracle_slab():
    cube = unit_cube()
    healthy = TriangleMesh(cube.vertices * [10, 10, 5], cube.triangles)
    patho = TriangleMesh(cube.vertices * [10, 10, 6], cube.triangles)
    assert synth.oracle_cam_volume(patho, healthy, [4, 5, 6, 7]) == pytest.approx(100.0, rel=0.03)


def test_voxelize_ball():
    ball = icosphere(12.0, 5)
    vol = synth.voxelize(ball, 0.5)
    got = np.count_nonzero(vol.labels) * 0.125
    assert got == pytest.approx(enclosed_volume(ball), rel=0.01)
    assert got == pytest.approx(4 / 3 * np.pi * 12 ** 3, rel=0.01)
    again = synth.voxelize(extract_surface(vol), 0.5, vol.origin, vol.dims)
    assert np.count_nonzero(again.labels) == pytest.approx(np.count_nonzero(vol.labels), rel=0.02)


def test_voxelize_errors():
    with pytest.raises(MeshError):
        synth.voxelize(TriangleMesh(np.zeros((3, 3)), np.zeros((0, 3), int)), 0.5)
    cube = unit_cube()
    with pytest.raises(MeshError):
        synth.voxelize(TriangleMesh(cube.vertices, cube.triangles[:-1]), 0.25)


def test_roi_contains_frame_vertex(roi):
    assert synth.frame_vertex(RES) in set(roi)
    assert synth.frame_vertex(RES, azimuth=210.0) not in set(roi)
