"""Backend selection for the closest-point kernels.

The compiled extension is used when it imports; set ``FEMCAM_PURE_PYTHON=1``
to force the numpy fallback. Both backends return identical results.
"""
import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("FEMCAM_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure python requested")
    from . import _ckernels
except ImportError:
    _ckernels = None

BACKEND = "cython" if _ckernels is not None else "python"

LEAF_SIZE = 4


def _morton_codes(points):
    lo = points.min(axis=0)
    span = np.maximum(points.max(axis=0) - lo, 1e-12)
    q = np.clip(((points - lo) / span * 1023).astype(np.int64), 0, 1023)
    code = np.zeros(len(points), dtype=np.int64)
    for bit in range(10):
        for axis in range(3):
            code |= ((q[:, axis] >> bit) & 1) << (3 * bit + axis)
    return code


class TriangleBVH:
    """Bounding-volume hierarchy over a triangle soup.

    Triangles are sorted along a Morton curve, grouped ``LEAF_SIZE`` per leaf
    and arranged as an implicit complete binary tree (heap indexing). Padding
    leaves carry inverted boxes and are never visited.
    """

    def __init__(self, tris, backend=None):
        tris = np.ascontiguousarray(tris, dtype=np.float64)
        self.n_tris = len(tris)
        self.backend = backend or BACKEND
        if self.backend == "cython" and _ckernels is None:
            raise RuntimeError("compiled kernels are not available")
        if self.backend == "python":
            self._pruner = _pykernels.CentroidPruner(tris)
            return
        order = np.argsort(_morton_codes(tris.mean(axis=1)), kind="stable")
        self.tris = np.ascontiguousarray(tris[order])
        self.tri_ids = order.astype(np.int64)
        n_used = max(1, -(-self.n_tris // LEAF_SIZE))
        n_leaves = 1
        while n_leaves < n_used:
            n_leaves *= 2
        lo = np.full((2 * n_leaves - 1, 3), np.inf)
        hi = np.full((2 * n_leaves - 1, 3), -np.inf)
        pad = n_used * LEAF_SIZE - self.n_tris
        tmin = self.tris.min(axis=1)
        tmax = self.tris.max(axis=1)
        if pad:
            tmin = np.concatenate([tmin, np.full((pad, 3), np.inf)])
            tmax = np.concatenate([tmax, np.full((pad, 3), -np.inf)])
        first = n_leaves - 1
        lo[first:first + n_used] = tmin.reshape(n_used, LEAF_SIZE, 3).min(axis=1)
        hi[first:first + n_used] = tmax.reshape(n_used, LEAF_SIZE, 3).max(axis=1)
        level_start, width = first, n_leaves
        while width > 1:
            parent = (level_start - 1) // 2
            kids = np.arange(level_start, level_start + width)
            lo[parent:parent + width // 2] = np.minimum(lo[kids[0::2]], lo[kids[1::2]])
            hi[parent:parent + width // 2] = np.maximum(hi[kids[0::2]], hi[kids[1::2]])
            level_start, width = parent, width // 2
        self.node_lo, self.node_hi, self.n_leaves = lo, hi, n_leaves
        self.position = np.empty(self.n_tris, dtype=np.int64)
        self.position[order] = np.arange(self.n_tris)

    def query(self, points, hint=None):
        """Nearest surface point for each query.

        Returns ``(sqdist, triangle, region, point)``; see
        :func:`femcam._pykernels.closest_on_triangles` for region codes.
        ``hint`` (triangle index per query, -1 for none) only speeds up the
        search, e.g. with the previous answer when queries move little.
        """
        points = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        if self.backend == "python":
            return self._pruner.query(points)
        hint_pos = None
        if hint is not None:
            hint = np.asarray(hint, dtype=np.int64)
            hint_pos = np.where(hint >= 0, self.position[np.clip(hint, 0, None)], -1)
        return _ckernels.closest_points_bvh(points, self.tris, self.tri_ids, self.node_lo,
                                            self.node_hi, self.n_leaves, LEAF_SIZE, hint_pos)


def closest_points_brute(points, tris, backend=None):
    """Scan every triangle for every query; the reference the BVH must match."""
    points = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    tris = np.ascontiguousarray(tris, dtype=np.float64)
    if (backend or BACKEND) == "cython":
        return _ckernels.closest_points_brute(points, tris)
    return _pykernels.closest_points_brute(points, tris)
