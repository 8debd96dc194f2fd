"""Femoral head centre and radius by spherical Hough voting, head mask and volume."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from .errors import InputError
from .volumes import FEMUR, LabelVolume, VoxelSet, mask_volume

DEFAULT_RADII = (15.0, 35.0)
DEFAULT_STEP = 0.5


@dataclass(frozen=True)
class SphereFit:
    center: np.ndarray
    radius: float
    vote_score: float

    def __post_init__(self):
        if not self.radius > 0:
            raise InputError(f"sphere radius must be positive, got {self.radius}")
        if not 0 <= self.vote_score <= 1:
            raise InputError(f"vote score must lie in [0, 1], got {self.vote_score}")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))


def _boundary_normals(mask):
    """Boundary voxel indices and unit inward normals from the Sobel gradient."""
    padded = np.pad(mask, 1)
    inner = ndi.binary_erosion(padded, structure=ndi.generate_binary_structure(3, 1),
                               border_value=0)
    bd = padded & ~inner
    f = padded.astype(np.float64)
    grad = np.stack([ndi.sobel(f, axis=a)[bd] for a in range(3)], axis=-1)
    norm = np.linalg.norm(grad, axis=1)
    ok = norm > 0
    idx = np.argwhere(bd)[ok] - 1
    return idx, grad[ok] / norm[ok, None]


def _lsq_sphere(points, offset, center, radius, iters=20):
    """Gauss-Newton on ``sum (|p - c| + offset - R)^2``."""
    c, r = np.array(center, dtype=np.float64), float(radius)
    for _ in range(iters):
        diff = points - c
        dist = np.linalg.norm(diff, axis=1)
        res = dist + offset - r
        jac = np.column_stack([-diff / dist[:, None], -np.ones(len(points))])
        step = np.linalg.lstsq(jac, -res, rcond=None)[0]
        c += step[:3]
        r += step[3]
        if np.abs(step).max() < 1e-9:
            break
    return c, r


def hough_sphere(mask: VoxelSet, radius_range=DEFAULT_RADII, step=DEFAULT_STEP) -> SphereFit:
    """Spherical Hough transform on the boundary of ``mask``.

    Each boundary voxel votes, for every candidate radius, at the point that
    distance along its inward gradient, corrected by half a voxel because
    boundary voxel centres sit inside the true surface. The accumulator has
    voxel resolution; ties go to the smallest radius and then the
    lexicographically smallest centre. The peak is then polished by a
    least-squares sphere fit to the boundary voxels within 1 mm of it.
    """
    r_min, r_max = (float(v) for v in radius_range)
    if not 0 < r_min < r_max:
        raise InputError(f"invalid radius range {radius_range}")
    if not step > 0:
        raise InputError(f"radius step must be positive, got {step}")
    vol = mask.volume
    m = mask.mask
    if not m.any():
        raise InputError("cannot fit a sphere to an empty mask")
    spacing = np.asarray(vol.spacing)
    # work relative to the mask's bounding box so integer shifts are exact
    lo = np.argwhere(m).min(axis=0)
    hi = np.argwhere(m).max(axis=0) + 1
    idx, normals = _boundary_normals(m[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]])
    if not len(idx):
        raise InputError("mask has no usable boundary voxels")
    pts = idx * spacing
    inset = 0.5 * (np.abs(normals) * spacing).max(axis=1)
    shape = tuple(int(v) for v in hi - lo)
    radii = r_min + step * np.arange(int(np.floor((r_max - r_min) / step + 1e-9)) + 1)
    best = (0, None, None)
    for r in radii:
        votes = pts + (r - inset)[:, None] * normals
        cell = np.floor(votes / spacing + 0.5).astype(np.int64)
        ok = np.all((cell >= 0) & (cell < shape), axis=1)
        if not ok.any():
            continue
        cells, counts = np.unique(np.ravel_multi_index(cell[ok].T, shape), return_counts=True)
        k = int(np.argmax(counts))        # first maximum = smallest linear index
        if counts[k] > best[0]:
            best = (int(counts[k]), r, np.array(np.unravel_index(cells[k], shape)))
    count, radius, peak = best
    if radius is None:
        raise InputError("no Hough votes fell inside the mask extent")
    peak_pos = peak * spacing
    votes = pts + (radius - inset)[:, None] * normals
    near = np.all(np.abs(votes - peak_pos) <= 1.5 * spacing, axis=1)
    centre = votes[near].mean(axis=0)
    dist = np.linalg.norm(pts - centre, axis=1) + inset
    band = np.abs(dist - radius) <= 1.0
    rad = float(np.median(dist[band]))
    band = np.abs(dist - rad) <= 1.0
    if band.sum() >= 4:
        centre, rad = _lsq_sphere(pts[band], inset[band], centre, rad)
    centre = (lo + centre / spacing) * spacing + np.asarray(vol.origin)
    return SphereFit(centre, float(rad), count / len(pts))


def refine_head_mask(femur: VoxelSet, fit: SphereFit, margin=0.0) -> LabelVolume:
    """Femur voxels whose centres lie within ``radius + margin`` of the fitted centre."""
    vol = femur.volume
    m = femur.mask
    idx = np.argwhere(m)
    keep = np.linalg.norm(vol.world(idx) - fit.center, axis=1) <= fit.radius + margin
    out = np.zeros_like(m)
    out[tuple(idx[keep].T)] = True
    return mask_volume(out, vol.spacing, vol.origin, FEMUR)


def head_volume(head_mask: LabelVolume, label=FEMUR):
    """Foreground voxel count times voxel volume, in cm^3."""
    n = int(np.count_nonzero(head_mask.labels == label))
    if n == 0:
        raise InputError("head mask is empty")
    return n * head_mask.voxel_volume / 1000.0
