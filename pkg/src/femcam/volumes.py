"""Voxel label volumes: storage, I/O, resampling and isosurface extraction.

Arrays are indexed ``labels[x, y, z]``; on disk the payload is x-fastest,
which is Fortran order for that index layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage as ndi

from .errors import InputError

BACKGROUND, FEMUR, ACETABULUM = 0, 1, 2
DEFAULT_LABEL_MAP = {BACKGROUND: "background", FEMUR: "femur", ACETABULUM: "acetabulum"}

_SIX_NEIGHBOURS = ndi.generate_binary_structure(3, 1)


@dataclass(frozen=True, eq=False)
class LabelVolume:
    labels: np.ndarray
    spacing: tuple
    origin: tuple = (0.0, 0.0, 0.0)
    label_map: dict = field(default_factory=lambda: dict(DEFAULT_LABEL_MAP))

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3 or min(labels.shape) < 1:
            raise InputError(f"labels must be a non-empty 3D array, got shape {labels.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise InputError(f"spacing must be three positive values, got {self.spacing}")
        origin = tuple(float(o) for o in self.origin)
        if labels.dtype != np.uint8:
            if labels.size and (labels.min() < 0 or labels.max() > 255):
                raise InputError("labels must fit in an unsigned byte")
            labels = labels.astype(np.uint8)
        present = np.unique(labels)
        unknown = set(present.tolist()) - set(self.label_map)
        if unknown:
            raise InputError(f"labels {sorted(unknown)} are not in the label map")
        labels = labels.copy()
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self):
        return self.labels.shape

    @property
    def voxel_volume(self):
        return float(np.prod(self.spacing))

    def same_grid(self, other):
        return (self.dims == other.dims and self.spacing == other.spacing
                and self.origin == other.origin)

    def world(self, index):
        """Voxel index (..., 3) to world-coordinate voxel centre in mm."""
        return np.asarray(index, dtype=np.float64) * self.spacing + self.origin

    def voxels(self, label):
        return VoxelSet(self, int(label))

    def with_labels(self, labels):
        return LabelVolume(labels, self.spacing, self.origin, self.label_map)


@dataclass(frozen=True, eq=False)
class VoxelSet:
    """The voxels of ``volume`` that carry ``label``."""

    volume: LabelVolume
    label: int

    @property
    def mask(self):
        return self.volume.labels == self.label

    def __len__(self):
        return int(np.count_nonzero(self.mask))

    def indices(self):
        return np.argwhere(self.mask)

    def world_points(self):
        return self.volume.world(self.indices())

    def boundary_mask(self):
        """Members with at least one 6-neighbour outside the set (grid edge counts as outside)."""
        m = self.mask
        inner = ndi.binary_erosion(m, structure=_SIX_NEIGHBOURS, border_value=0)
        return m & ~inner

    def boundary_points(self):
        return self.volume.world(np.argwhere(self.boundary_mask()))


def mask_volume(mask, spacing, origin=(0.0, 0.0, 0.0), label=FEMUR):
    """Wrap a boolean array as a label volume (``label`` inside, background elsewhere)."""
    return LabelVolume(np.where(mask, label, BACKGROUND).astype(np.uint8), spacing, origin)


# -- I/O ---------------------------------------------------------------------

_ELEMENT_TYPES = {"MET_UCHAR", "UINT8"}


def _fmt(values):
    return " ".join(repr(float(v)) if isinstance(v, float) else str(v) for v in values)


def save_volume(path, volume: LabelVolume):
    """Write ``<stem>.mhd`` (text header) and ``<stem>.raw`` (x-fastest bytes)."""
    path = Path(path)
    raw = path.with_suffix(".raw")
    header = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        f"DimSize = {_fmt(volume.dims)}",
        f"ElementSpacing = {_fmt(volume.spacing)}",
        f"Offset = {_fmt(volume.origin)}",
        "ElementType = MET_UCHAR",
        f"ElementDataFile = {raw.name}",
    ]
    path.write_text("\n".join(header) + "\n")
    raw.write_bytes(volume.labels.ravel(order="F").tobytes())
    return path


def load_volume(path, label_map=None) -> LabelVolume:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"volume header not found: {path}")
    fields = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InputError(f"{path}:{lineno}: expected 'key = value'")
        fields[key.strip()] = value.strip()
    try:
        if int(fields.get("NDims", "3")) != 3:
            raise InputError(f"{path}: only 3D volumes are supported")
        dims = tuple(int(v) for v in fields["DimSize"].split())
        spacing = tuple(float(v) for v in fields.get("ElementSpacing", "1 1 1").split())
        origin = tuple(float(v) for v in fields.get("Offset", "0 0 0").split())
        etype = fields["ElementType"]
        datafile = fields["ElementDataFile"]
    except KeyError as exc:
        raise InputError(f"{path}: missing header field {exc.args[0]}") from None
    except ValueError as exc:
        raise InputError(f"{path}: malformed header value ({exc})") from None
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise InputError(f"{path}: DimSize, ElementSpacing and Offset need three values")
    if min(dims) < 1:
        raise InputError(f"{path}: DimSize components must be >= 1")
    if etype not in _ELEMENT_TYPES:
        raise InputError(f"{path}: unsupported element type {etype}")
    raw = path.parent / datafile
    if not raw.is_file():
        raise InputError(f"{path}: data file {raw} not found")
    payload = raw.read_bytes()
    expected = dims[0] * dims[1] * dims[2]
    if len(payload) != expected:
        raise InputError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    labels = np.frombuffer(payload, dtype=np.uint8).reshape(dims, order="F")
    kwargs = {} if label_map is None else {"label_map": label_map}
    return LabelVolume(labels, spacing, origin, **kwargs)


# -- operations --------------------------------------------------------------

def resample_isotropic(volume: LabelVolume, target=0.5) -> LabelVolume:
    """Nearest-neighbour resampling onto an isotropic grid of ``target`` mm.

    The output grid covers the same physical box (voxel faces, not centres),
    with its first voxel face aligned to the input's.
    """
    if not target > 0:
        raise InputError(f"target spacing must be positive, got {target}")
    sp = np.array(volume.spacing)
    dims = np.array(volume.dims)
    if np.all(sp == target):
        return volume
    out_dims = np.maximum(1, np.rint(dims * sp / target).astype(int))
    out_origin = np.array(volume.origin) - sp / 2 + target / 2
    axes = []
    for k in range(3):
        centres = out_origin[k] + target * np.arange(out_dims[k])
        idx = np.floor((centres - volume.origin[k]) / sp[k] + 0.5).astype(int)
        axes.append(np.clip(idx, 0, dims[k] - 1))
    labels = volume.labels[np.ix_(*axes)]
    return LabelVolume(labels, (target,) * 3, tuple(out_origin), volume.label_map)


def extract_surface(volume: LabelVolume, label=FEMUR):
    """Iso-0.5 surface of the binary indicator of ``label``, in world mm.

    Marching cubes (Lewiner variant, whose case tables resolve face and
    interior ambiguities consistently) on the zero-padded indicator, so the
    result is closed. Triangles are oriented outward.
    """
    from skimage.measure import marching_cubes

    from .meshes import TriangleMesh

    mask = volume.labels == label
    if not mask.any():
        raise InputError(f"label {label} is absent; cannot extract a surface")
    lo = np.argwhere(mask).min(axis=0)
    hi = np.argwhere(mask).max(axis=0) + 1
    sub = np.pad(mask[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]], 1).astype(np.float32)
    verts, faces, _, _ = marching_cubes(sub, 0.5, spacing=volume.spacing, method="lewiner")
    verts = verts.astype(np.float64) + volume.world(lo - 1)
    mesh = TriangleMesh.cleaned(verts, faces.astype(np.int64))
    if mesh.signed_volume() < 0:
        mesh = mesh.flipped()
    return mesh


def intersect_masks(a: VoxelSet, b: VoxelSet, label=FEMUR) -> LabelVolume:
    if not a.volume.same_grid(b.volume):
        raise InputError("voxel sets live on different grids")
    return mask_volume(a.mask & b.mask, a.volume.spacing, a.volume.origin, label)
