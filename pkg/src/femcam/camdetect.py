"""Cam patch extraction from a healthy/pathological surface pair and cam metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .meshes import SpatialIndex, TriangleMesh, per_vertex_distance_field, triangle_areas
from .shapemodel import conform_to_surface

DISTANCE_SCALAR = "healthy_distance"
HEIGHT_SCALAR = "cam_height"
VOLUME_METHODS = ("prism", "lumped")


@dataclass(frozen=True, eq=False)
class CamRoi:
    indices: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64).ravel())
        if idx.size == 0:
            raise InputError("cam ROI is empty")
        if idx[0] < 0:
            raise InputError("cam ROI has negative vertex indices")
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    def check(self, n_vertices):
        if self.indices[-1] >= n_vertices:
            raise InputError(f"cam ROI index {self.indices[-1]} exceeds vertex count {n_vertices}")

    def member_mask(self, n_vertices):
        self.check(n_vertices)
        m = np.zeros(n_vertices, dtype=bool)
        m[self.indices] = True
        return m


def save_index_list(path, indices, comment=""):
    """Plain-text integer list, one per line; ``#`` lines are comments."""
    lines = [f"# {c}" for c in comment.splitlines()] + [str(int(i)) for i in indices]
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def load_index_list(path):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"index list not found: {path}")
    out, notes = [], []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            notes.append(s[1:].strip())
            continue
        try:
            out.append(int(s))
        except ValueError:
            raise InputError(f"{path}:{lineno}: not an integer: {s!r}") from None
    return np.asarray(out, dtype=np.int64), "\n".join(notes)


def save_roi(path, roi: CamRoi):
    return save_index_list(path, roi.indices, roi.provenance)


def load_roi(path) -> CamRoi:
    idx, notes = load_index_list(path)
    return CamRoi(idx, notes or Path(path).name)


@dataclass(frozen=True, eq=False)
class CamPatch:
    vertices: np.ndarray           # (P,) template vertex indices
    heights: np.ndarray            # (P,) mm, all > 0
    triangles: np.ndarray          # (Q, 3) template vertex indices, all in the patch

    @property
    def empty(self):
        return len(self.vertices) == 0


@dataclass(frozen=True)
class CamMetrics:
    volume: float = 0.0            # mm^3
    surface_area: float = 0.0      # mm^2
    max_height: float = 0.0        # mm
    avg_height: float = 0.0        # mm

    def as_dict(self):
        return {"volume_mm3": self.volume, "surface_area_mm2": self.surface_area,
                "max_height_mm": self.max_height, "avg_height_mm": self.avg_height}


def threshold_distance_field(pathological: TriangleMesh, roi: CamRoi) -> CamPatch:
    """Patch = ROI vertices with strictly positive healthy distance."""
    if DISTANCE_SCALAR not in pathological.scalars:
        raise InputError(f"pathological mesh lacks the '{DISTANCE_SCALAR}' scalar")
    d = pathological.scalars[DISTANCE_SCALAR]
    inside = roi.member_mask(pathological.n_vertices) & (d > 0)
    verts = np.flatnonzero(inside)
    tris = pathological.triangles[inside[pathological.triangles].all(axis=1)]
    return CamPatch(verts, d[verts].copy(), tris)


def cam_height_mesh(pathological: TriangleMesh, patch: CamPatch) -> TriangleMesh:
    """Copy carrying ``cam_height``: the patch heights, zero elsewhere."""
    out = pathological.copy()
    h = np.zeros(out.n_vertices)
    h[patch.vertices] = patch.heights
    out.set_scalar(HEIGHT_SCALAR, h)
    return out


def _tet_volume(a, b, c):
    return np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0


def _prism_volume(top, foot, triangles):
    """Volume between the patch triangles and their feet on the healthy surface.

    Divergence theorem on the closed shell: top triangles as oriented, foot
    triangles reversed, and a wall over each patch boundary edge. Interior
    walls cancel, so only boundary edges are needed.
    """
    if not len(triangles):
        return 0.0
    vol = _tet_volume(top[triangles[:, 0]], top[triangles[:, 1]], top[triangles[:, 2]])
    vol -= _tet_volume(foot[triangles[:, 0]], foot[triangles[:, 1]], foot[triangles[:, 2]])
    directed = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    key = np.sort(directed, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    edges = directed[counts[inv.ravel()] == 1]
    a, b = edges[:, 0], edges[:, 1]
    vol += _tet_volume(top[b], top[a], foot[a])
    vol += _tet_volume(top[b], foot[a], foot[b])
    return float(vol)


def cam_metrics(patch: CamPatch, pathological, topology, healthy=None, method="prism") -> CamMetrics:
    """Volume, area and heights of a cam patch on the pathological surface.

    ``method="lumped"`` integrates ``sum h_i A_i`` with ``A_i`` one third of
    the patch triangle area around vertex ``i``. ``method="prism"`` (default)
    integrates the solid between each patch triangle and its foot triangle on
    ``healthy`` (a mesh or SpatialIndex), which removes the slope and
    curvature bias of the lumped sum on steep or strongly curved cams.
    """
    if method not in VOLUME_METHODS:
        raise InputError(f"unknown volume method {method!r}; choose from {VOLUME_METHODS}")
    if patch.empty:
        return CamMetrics()
    verts = pathological.vertices if isinstance(pathological, TriangleMesh) else np.asarray(pathological)
    mesh = TriangleMesh(verts, patch.triangles)
    areas = triangle_areas(mesh)
    area = float(areas.sum())
    h = patch.heights
    if method == "lumped" or healthy is None:
        if method == "prism":
            raise InputError("prism volume needs the healthy surface")
        full = np.zeros(len(verts))
        full[patch.vertices] = h
        volume = float((areas * full[patch.triangles].sum(axis=1)).sum() / 3.0)
    else:
        index = healthy if isinstance(healthy, SpatialIndex) else SpatialIndex(healthy)
        foot = np.array(verts, dtype=np.float64, copy=True)
        foot[patch.vertices] = index.closest(verts[patch.vertices])[3]
        volume = max(_prism_volume(verts, foot, patch.triangles), 0.0)
    return CamMetrics(volume, area, float(h.max()), float(h.mean()))


@dataclass
class CamReport:
    metrics: CamMetrics
    head_volume_cm3: float
    residual_rms: float
    quality_gate_passed: bool
    cam_head_ratio: float
    n_patch_vertices: int = 0
    warnings: list = field(default_factory=list)


def pathological_correspondence(fitted, topology, target_index: SpatialIndex):
    """Template-topology copy of the target: fitted vertices slid onto it."""
    return TriangleMesh(conform_to_surface(fitted, topology, target_index), topology)


def analyze_case(model, fit, healthy, pathological_mesh: TriangleMesh, roi: CamRoi, head_fit=None,
                 head_volume_cm3=None, method="prism", target_index=None):
    """Cam report for one case.

    ``healthy`` is the simulated healthy shape (template topology). The head
    volume defaults to the fitted sphere's volume when no mask volume is given.
    Returns ``(report, cam_mesh)``; ``cam_mesh`` is the corresponded
    pathological surface carrying distance and cam height scalars.
    """
    topology = model.topology
    roi.check(model.n_vertices)
    healthy_mesh = TriangleMesh(healthy, topology)
    index = target_index or SpatialIndex(pathological_mesh)
    patho = pathological_correspondence(fit.fitted, topology, index)
    healthy_index = SpatialIndex(healthy_mesh)
    patho = per_vertex_distance_field(patho, healthy_mesh, DISTANCE_SCALAR, healthy_index)
    patch = threshold_distance_field(patho, roi)
    metrics = cam_metrics(patch, patho, topology, healthy_index, method)
    if head_volume_cm3 is None:
        if head_fit is None:
            raise InputError("need a head fit or a head volume")
        head_volume_cm3 = 4.0 / 3.0 * np.pi * head_fit.radius ** 3 / 1000.0
    ratio = metrics.volume / (head_volume_cm3 * 1000.0) if head_volume_cm3 > 0 else 0.0
    warnings = [] if fit.quality_gate_passed else ["fit residual above quality gate"]
    report = CamReport(metrics, float(head_volume_cm3), fit.residual_rms, fit.quality_gate_passed,
                       float(ratio), len(patch.vertices), warnings)
    return report, cam_height_mesh(patho, patch)
