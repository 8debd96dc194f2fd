import numpy as np
import pytest

from femcam.errors import InputError
from femcam.headfit import SphereFit, head_volume, hough_sphere, refine_head_mask
from femcam.volumes import FEMUR, LabelVolume, mask_volume

from conftest import ball_mask


def _ball(r, center=None, spacing=0.5):
    m, o = ball_mask(r, spacing, center)
    return mask_volume(m, (spacing,) * 3, o)


def _head_neck(r=24.0, neck_r=12.0, neck_len=40.0, spacing=0.5):
    """Ball at the origin plus a cylinder along +x; returns the volume and its voxel centres."""
    n = int(np.ceil((r + neck_len) / spacing)) + 3
    ax = np.arange(-n, n + 1) * spacing
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    ball = x * x + y * y + z * z <= r * r
    neck = (y * y + z * z <= neck_r * neck_r) & (x >= 0) & (x <= r + neck_len)
    vol = mask_volume(ball | neck, (spacing,) * 3, (float(ax[0]),) * 3)
    return vol, np.stack([x, y, z], -1)


@pytest.mark.parametrize("r", [20.0, 22.2, 24.0, 25.1])
def test_ball_recovery(r):
    centre = np.array([0.3, -0.2, 0.1])
    vol = _ball(r, centre)
    fit = hough_sphere(vol.voxels(FEMUR))
    assert abs(fit.radius - r) < 0.5
    assert np.linalg.norm(fit.center - centre) < 0.5
    assert 0 < fit.vote_score <= 1


@pytest.mark.parametrize("r", [20.0, 22.2, 25.1])
def test_refined_head_volume(r):
    vol = _ball(r)
    fit = hough_sphere(vol.voxels(FEMUR))
    head = refine_head_mask(vol.voxels(FEMUR), fit)
    assert abs(head_volume(head) / (4 / 3 * np.pi * r ** 3 / 1000) - 1) < 0.02


def test_head_volume_anchors():
    assert head_volume(_ball(25.1)) == pytest.approx(4 / 3 * np.pi * 25.1 ** 3 / 1000, rel=0.01)
    assert head_volume(_ball(22.2)) == pytest.approx(45.8, rel=0.01)
    labels = np.zeros((2, 2, 2), np.uint8)
    labels[0, 0, 0] = FEMUR
    assert head_volume(LabelVolume(labels, (0.5, 0.5, 0.5))) == 1.25e-4
    with pytest.raises(InputError):
        head_volume(LabelVolume(np.zeros((2, 2, 2), np.uint8), (1, 1, 1)))


def test_translation_equivariance():
    m, o = ball_mask(15.0, 0.5, [0.2, 0.1, -0.3])
    spacing = (0.5,) * 3
    a = hough_sphere(mask_volume(m, spacing, o).voxels(FEMUR), (10, 20))
    shift = (3, 5, 2)
    moved = np.pad(m, [(s, 0) for s in shift])
    b = hough_sphere(mask_volume(moved, spacing, o).voxels(FEMUR), (10, 20))
    assert np.allclose(b.center - a.center, np.array(shift) * 0.5, atol=1e-9, rtol=0)
    assert b.radius == pytest.approx(a.radius, abs=1e-9)


def test_head_neck_phantom():
    vol, centres = _head_neck()
    femur = vol.voxels(FEMUR)
    fit = hough_sphere(femur)
    assert abs(fit.radius - 24.0) < 0.5
    assert np.linalg.norm(fit.center) < 1.0
    head = refine_head_mask(femur, fit)
    assert not np.any((head.labels == FEMUR) & (vol.labels != FEMUR))
    # exhaustive oracle: phantom voxels whose centres fall inside the true ball
    oracle = np.count_nonzero((vol.labels == FEMUR) & ((centres ** 2).sum(-1) <= 24.0 ** 2))
    assert abs(np.count_nonzero(head.labels) / oracle - 1) < 0.03
    x = centres[..., 0]
    assert not np.any((head.labels == FEMUR) & (x > 25.0))


def test_refine_trivial_cases():
    vol = _ball(5.0)
    femur = vol.voxels(FEMUR)
    inside = refine_head_mask(femur, SphereFit(np.zeros(3), 50.0, 1.0))
    assert np.array_equal(inside.labels, vol.labels)
    far = refine_head_mask(femur, SphereFit(np.full(3, 100.0), 5.0, 1.0))
    assert not far.labels.any()


def test_errors():
    empty = LabelVolume(np.zeros((4, 4, 4), np.uint8), (1, 1, 1))
    with pytest.raises(InputError):
        hough_sphere(empty.voxels(FEMUR))
    femur = _ball(5.0).voxels(FEMUR)
    with pytest.raises(InputError):
        hough_sphere(femur, (10, 10))
    with pytest.raises(InputError):
        hough_sphere(femur, (5, 10), step=0)
    with pytest.raises(InputError):
        SphereFit(np.zeros(3), -1.0, 0.5)
