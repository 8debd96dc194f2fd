"""Segmentation agreement: Dice overlap and boundary distances (Hausdorff, ASD).

Surface distances are measured between boundary-voxel centres in world mm.
Percentiles use the nearest-rank rule on each directed distance multiset and
the symmetric value is the larger of the two directions.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import InputError
from .volumes import FEMUR, LabelVolume, VoxelSet

HD_PERCENTILE = 95.0


@dataclass(frozen=True)
class MetricReport:
    dsi: float
    hd: float       # mm, percentile 100
    hd95: float     # mm
    asd: float      # mm

    def as_row(self):
        return {"dsi": self.dsi, "hd": self.hd, "hd95": self.hd95, "asd": self.asd}


def dsi(a: VoxelSet, m: VoxelSet) -> float:
    """Dice similarity ``2|A & M| / (|A| + |M|)``."""
    if not a.volume.same_grid(m.volume):
        raise InputError("voxel sets live on different grids")
    ma, mm = a.mask, m.mask
    total = int(np.count_nonzero(ma)) + int(np.count_nonzero(mm))
    if total == 0:
        raise InputError("Dice is undefined for two empty sets")
    return 2.0 * int(np.count_nonzero(ma & mm)) / total


def _points(p, name):
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    if not len(p):
        raise InputError(f"point set {name} is empty")
    return p


def directed_distances(a, m):
    """Distance from each point of ``a`` to its nearest point of ``m``.

    The k-d tree only picks the neighbour; the distance itself is recomputed
    as ``sqrt(dx^2 + dy^2 + dz^2)`` so it is bit-identical to a brute-force
    evaluation.
    """
    a, m = _points(a, "A"), _points(m, "M")
    _, idx = cKDTree(m).query(a)
    diff = a - m[idx]
    return np.sqrt(diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2])


def nearest_rank(values, percentile):
    """Nearest-rank percentile: the ``ceil(p / 100 * n)``-th smallest value."""
    if not 0 < percentile <= 100:
        raise InputError(f"percentile must lie in (0, 100], got {percentile}")
    v = np.sort(np.asarray(values, dtype=np.float64))
    rank = math.ceil(Fraction(percentile) * len(v) / 100)
    return float(v[max(rank, 1) - 1])


def hausdorff(a, m, percentile=100.0) -> float:
    """Symmetric (percentile) Hausdorff distance between two point sets.

    Parameters
    ----------
    a, m : array_like, shape (N, 3) and (M, 3)
        Surface points in mm.
    percentile : float
        In (0, 100]; 100 gives the classical maximum.
    """
    return max(nearest_rank(directed_distances(a, m), percentile),
               nearest_rank(directed_distances(m, a), percentile))


def asd(a, m) -> float:
    """Larger of the two directed mean nearest-neighbour distances."""
    return max(float(directed_distances(a, m).mean()), float(directed_distances(m, a).mean()))


def evaluate_segmentation(auto: LabelVolume, manual: LabelVolume, label=FEMUR) -> MetricReport:
    """Dice on the voxel sets and surface metrics on their boundary voxels."""
    if not auto.same_grid(manual):
        raise InputError("automated and manual volumes are on different grids")
    a, m = auto.voxels(label), manual.voxels(label)
    if len(a) == 0 or len(m) == 0:
        raise InputError(f"label {label} is absent from one of the volumes")
    pa, pm = a.boundary_points(), m.boundary_points()
    dam, dma = directed_distances(pa, pm), directed_distances(pm, pa)
    hd = max(float(dam.max()), float(dma.max()))
    hd95 = max(nearest_rank(dam, HD_PERCENTILE), nearest_rank(dma, HD_PERCENTILE))
    return MetricReport(dsi(a, m), hd, hd95, max(float(dam.mean()), float(dma.mean())))


def write_metric_csv(path, rows, notes=None, fmt="{:.6g}"):
    """One row per case (``case, dsi, hd, hd95, asd, note``) sorted by case id,
    then ``mean`` and ``sd`` rows over the cases that have a report.

    ``rows`` maps case id to a :class:`MetricReport` or ``None`` (e.g. an
    unpaired case, explained in ``notes``).
    """
    notes = notes or {}
    keys = ("dsi", "hd", "hd95", "asd")
    done = [rows[c].as_row() for c in sorted(rows) if rows[c] is not None]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case", *keys, "note"])
        for case in sorted(rows):
            rep = rows[case]
            vals = [""] * 4 if rep is None else [fmt.format(v) for v in rep.as_row().values()]
            w.writerow([case, *vals, notes.get(case, "")])
        if done:
            table = np.array([[r[k] for k in keys] for r in done])
            sd = table.std(axis=0, ddof=1) if len(done) > 1 else np.zeros(4)
            w.writerow(["mean", *(fmt.format(v) for v in table.mean(axis=0)), f"n={len(done)}"])
            w.writerow(["sd", *(fmt.format(v) for v in sd), ""])
    return Path(path)
