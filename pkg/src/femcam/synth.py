"""Synthetic proximal-femur phantoms, training cohorts and cam bumps.

Every phantom is the canonical template (a smooth union of head sphere, neck
and shaft capsules and a trochanter blob, meshed once per resolution) moved by
displacement fields that are *linear* in the phantom parameters. All phantoms
at one resolution therefore share the template's triangle list, and a cohort
that varies k parameters spans exactly k shape directions.

Anatomical frame: shaft axis along z (superior +z), neck pivot at the origin,
head medial (+x), anterior +y.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .errors import InputError, MeshError
from .meshes import SpatialIndex, TriangleMesh, vertex_normals
from .volumes import FEMUR, LabelVolume, mask_volume

BLEND = 6.0            # smooth-union radius, mm
BUMP_CUTOFF = 4.0      # bump support radius in units of sigma


@dataclass(frozen=True)
class PhantomSpec:
    head_radius: float = 25.1
    neck_radius: float = 15.0
    neck_length: float = 48.0
    shaft_radius: float = 14.0
    shaft_length: float = 60.0
    trochanter_offset: float = 22.0
    trochanter_size: float = 13.0
    neck_shaft_angle: float = 130.0
    seed: int = 0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if f.name in ("seed", "neck_shaft_angle"):
                continue
            if not getattr(self, f.name) > 0:
                raise InputError(f"{f.name} must be positive, got {getattr(self, f.name)}")
        if not 90.0 < self.neck_shaft_angle < 160.0:
            raise InputError(f"neck_shaft_angle must lie in (90, 160), got {self.neck_shaft_angle}")

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


FEMALE_SPEC = PhantomSpec(head_radius=22.2, neck_radius=13.0, neck_length=43.0,
                          shaft_radius=12.5, trochanter_offset=19.5, trochanter_size=11.5)


@dataclass(frozen=True)
class BumpSpec:
    center: int
    peak: float
    width: float
    seed: int = 0

    def __post_init__(self):
        if self.peak < 0:
            raise InputError("bump peak must be >= 0")
        if not self.width > 0:
            raise InputError("bump width must be positive")


# -- key=value spec files ----------------------------------------------------

def write_spec(path, spec):
    lines = [f"{f.name} = {getattr(spec, f.name)!r}" for f in dataclasses.fields(spec)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_spec(path, cls=PhantomSpec):
    values = {}
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in types:
            raise InputError(f"{path}:{lineno}: unknown or malformed entry {line!r}")
        try:
            values[key] = int(value) if types[key] in ("int", int) else float(value)
        except ValueError:
            raise InputError(f"{path}:{lineno}: bad value for {key}") from None
    return cls(**values)


# -- canonical geometry ------------------------------------------------------

def _neck_axis(angle_deg):
    a = np.deg2rad(angle_deg)
    return np.array([np.sin(a), 0.0, -np.cos(a)])


def _smoothstep(e0, e1, x):
    t = np.clip((x - e0) / (e1 - e0), 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _capsule(p, a, b, r):
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1) - r


def _smin(a, b, k=BLEND):
    h = np.maximum(k - np.abs(a - b), 0.0) / k
    return np.minimum(a, b) - h ** 3 * k / 6.0


class _Anatomy:
    """Landmarks of one parameter set; also evaluates its implicit surface."""

    def __init__(self, spec: PhantomSpec):
        self.spec = spec
        self.neck_dir = _neck_axis(spec.neck_shaft_angle)
        self.head_center = spec.neck_length * self.neck_dir
        self.shaft_top = np.array([0.0, 0.0, 12.0])
        self.shaft_bottom = np.array([0.0, 0.0, -spec.shaft_length])
        self.trochanter = np.array([-spec.trochanter_offset, 0.0, 10.0])

    def sdf(self, p):
        s = self.spec
        head = np.linalg.norm(p - self.head_center, axis=1) - s.head_radius
        neck = _capsule(p, np.zeros(3), self.head_center, s.neck_radius)
        shaft = _capsule(p, self.shaft_bottom, self.shaft_top, s.shaft_radius)
        troch = np.linalg.norm((p - self.trochanter) / [1.0, 0.8, 1.3], axis=1) - s.trochanter_size
        return _smin(_smin(_smin(neck, shaft), troch), head, k=4.0)


def _project_to_surface(anat, v, iters=6, eps=1e-5):
    for _ in range(iters):
        f = anat.sdf(v)
        g = np.stack([(anat.sdf(v + eps * e) - anat.sdf(v - eps * e)) / (2 * eps)
                      for e in np.eye(3)], axis=1)
        v = v - (f / np.maximum((g * g).sum(1), 1e-12))[:, None] * g
    return v


def _sdf_gradient(anat, v, eps=1e-5):
    g = np.stack([(anat.sdf(v + eps * e) - anat.sdf(v - eps * e)) / (2 * eps)
                  for e in np.eye(3)], axis=1)
    return g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)


def _relax(anat, mesh, iters=30, step=0.5):
    """Tangential umbrella smoothing with re-projection; evens out the sliver
    triangles marching cubes leaves near grid points."""
    t = mesh.triangles
    n = len(mesh.vertices)
    rows = t[:, [0, 1, 1, 2, 2, 0]].ravel()
    cols = t[:, [1, 0, 2, 1, 0, 2]].ravel()
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    adj.data[:] = 1.0
    degree = np.asarray(adj.sum(axis=1)).ravel()
    v = mesh.vertices.copy()
    for _ in range(iters):
        delta = adj @ v / degree[:, None] - v
        nrm = _sdf_gradient(anat, v)
        delta -= (delta * nrm).sum(1)[:, None] * nrm
        v = _project_to_surface(anat, v + step * delta, iters=3)
    return TriangleMesh(v, t)


@lru_cache(maxsize=4)
def _canonical(resolution):
    from skimage.measure import marching_cubes

    anat = _Anatomy(PhantomSpec())
    lo = np.array([-50.0, -35.0, -PhantomSpec().shaft_length - 20.0])
    hi = np.array([75.0, 35.0, 70.0])
    n = np.ceil((hi - lo) / resolution).astype(int) + 1
    axes = [lo[k] + resolution * np.arange(n[k]) for k in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    field = anat.sdf(grid).reshape(n)
    verts, faces, _, _ = marching_cubes(field, 0.0, spacing=(resolution,) * 3, method="lewiner")
    verts = _project_to_surface(anat, verts.astype(np.float64) + lo)
    mesh = TriangleMesh.cleaned(verts, faces.astype(np.int64))
    if mesh.signed_volume() < 0:
        mesh = mesh.flipped()
    mesh = _relax(anat, mesh)
    mesh.require_watertight()
    return mesh


# -- linear deformation fields ----------------------------------------------

_FIELDS = ("head_radius", "neck_radius", "neck_length", "shaft_radius", "shaft_length",
           "trochanter_offset", "trochanter_size", "neck_shaft_angle")


def _unit(x):
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, n, out=np.zeros_like(x), where=n > 0)


def _displacement_fields(v):
    """d(vertex)/d(parameter) at canonical positions; dict name -> (V, 3)."""
    base = PhantomSpec()
    anat = _Anatomy(base)
    n, c = anat.neck_dir, anat.head_center
    R, L = base.head_radius, base.neck_length
    along = v @ n                                      # position along the neck axis
    perp = v - along[:, None] * n
    rho_neck = np.linalg.norm(perp, axis=1)
    to_head = v - c
    head_t = to_head @ (-n)                            # towards the neck from the head centre
    junction = np.sqrt(R ** 2 - base.neck_radius ** 2)

    w_head = 1.0 - _smoothstep(0.45 * junction, junction + 2.0, head_t)
    w_head *= 1.0 - _smoothstep(R + 2.0, R + 8.0, np.linalg.norm(to_head, axis=1))
    w_distal = _smoothstep(0.2 * L, 0.55 * L, along)   # head and distal neck
    w_neck = (_smoothstep(0.15 * L, 0.35 * L, along)
              * (1.0 - _smoothstep(L - junction - 4.0, L - junction + 4.0, along))
              * (1.0 - _smoothstep(base.neck_radius + 2.0, base.neck_radius + 8.0, rho_neck)))
    rho_shaft = np.hypot(v[:, 0], v[:, 1])
    w_shaft = ((1.0 - _smoothstep(-8.0, 2.0, v[:, 2]))
               * (1.0 - _smoothstep(base.shaft_radius + 3.0, base.shaft_radius + 9.0, rho_shaft)))
    w_bottom = _smoothstep(-0.3 * base.shaft_length, -0.8 * base.shaft_length, v[:, 2])
    troch = v - anat.trochanter
    w_troch = 1.0 - _smoothstep(base.trochanter_size, base.trochanter_size + 10.0,
                                np.linalg.norm(troch / [1.0, 0.8, 1.3], axis=1))
    shaft_radial = np.zeros_like(v)
    shaft_radial[:, :2] = _unit(v[:, :2])
    # first-order rotation about the anterior axis through the pivot (per degree)
    rot = -np.cross(np.array([0.0, 1.0, 0.0]), v) * (np.pi / 180.0)
    return {
        "head_radius": w_head[:, None] * _unit(to_head),
        "neck_radius": w_neck[:, None] * _unit(perp),
        "neck_length": w_distal[:, None] * n,
        "shaft_radius": w_shaft[:, None] * shaft_radial,
        "shaft_length": w_bottom[:, None] * np.array([0.0, 0.0, -1.0]),
        "trochanter_offset": w_troch[:, None] * np.array([-1.0, 0.0, 0.0]),
        "trochanter_size": w_troch[:, None] * _unit(troch),
        "neck_shaft_angle": w_distal[:, None] * rot,
    }


@lru_cache(maxsize=4)
def _fields(resolution):
    mesh = _canonical(resolution)
    f = _displacement_fields(mesh.vertices)
    centre = _displacement_fields(_Anatomy(PhantomSpec()).head_center[None, :])
    return f, centre


def _deform(resolution, spec):
    mesh = _canonical(resolution)
    fields, centre_fields = _fields(resolution)
    base = PhantomSpec()
    v = mesh.vertices.copy()
    c = _Anatomy(base).head_center.copy()
    for name in _FIELDS:
        delta = getattr(spec, name) - getattr(base, name)
        if delta:
            v += delta * fields[name]
            c += delta * centre_fields[name][0]
    return v, c


def make_template(spec: PhantomSpec = PhantomSpec(), resolution=1.0) -> TriangleMesh:
    """Watertight femur-like mesh on the canonical topology for ``resolution``."""
    if not resolution > 0:
        raise InputError("resolution must be positive")
    v, _ = _deform(resolution, spec)
    return TriangleMesh(v, _canonical(resolution).triangles.copy())


def head_center(spec: PhantomSpec = PhantomSpec(), resolution=1.0):
    return _deform(resolution, spec)[1]


def topology(resolution=1.0):
    return _canonical(resolution).triangles.copy()


# -- regions on the canonical template ---------------------------------------

def _head_frame(v):
    anat = _Anatomy(PhantomSpec())
    n = anat.neck_dir
    u = v - anat.head_center
    axial = u @ (-n)                                   # > 0 towards the neck
    anterior = np.array([0.0, 1.0, 0.0])
    superior = np.cross(-n, anterior)                  # in the x-z plane, pointing up
    if superior[2] < 0:
        superior = -superior
    radial = u - axial[:, None] * (-n)
    azimuth = np.degrees(np.arctan2(radial @ superior, radial @ anterior))
    return axial, np.linalg.norm(radial, axis=1), azimuth


def cam_roi(resolution=1.0, axial_range=(4.0, 32.0), azimuth_range=(-20.0, 80.0)):
    """Anterior/anterosuperior head-neck junction vertices of the template.

    Axial is measured from the head centre along the neck; azimuth runs from
    anterior (0 deg) to superior (90 deg) around the neck axis.
    """
    axial, _, az = _head_frame(_canonical(resolution).vertices)
    sel = ((axial >= axial_range[0]) & (axial <= axial_range[1])
           & (az >= azimuth_range[0]) & (az <= azimuth_range[1]))
    return np.flatnonzero(sel)


def frame_vertex(resolution=1.0, axial=18.0, azimuth=30.0):
    """Template vertex on the head-neck surface nearest the given frame angle and
    axial position; the default lies in the middle of :func:`cam_roi`."""
    ax, rad, az = _head_frame(_canonical(resolution).vertices)
    da = np.deg2rad(((az - azimuth) + 180.0) % 360.0 - 180.0)
    cost = (ax - axial) ** 2 + (rad * da) ** 2
    return int(np.argmin(cost))


def focus_region(resolution=1.0):
    """Head and neck vertices, the region a focused model emphasises."""
    v = _canonical(resolution).vertices
    anat = _Anatomy(PhantomSpec())
    return np.flatnonzero(np.linalg.norm(v - anat.head_center, axis=1) <= 1.6 * PhantomSpec().head_radius)


def focus_weights(resolution=1.0, rho=4.0):
    w = np.ones(len(_canonical(resolution).vertices))
    w[focus_region(resolution)] = rho
    return w


# -- cohorts -------------------------------------------------------------------

DEFAULT_VARIATION = {"head_radius": 1.3, "neck_shaft_angle": 3.5, "neck_radius": 2.0}


@lru_cache(maxsize=4)
def _pose_free_fields(resolution, rho=4.0):
    """Displacement fields minus their best linearised similarity motion.

    Removing the (focus-weighted) translation, rotation and scale components
    keeps a cohort from inducing parameter-dependent Procrustes rotations, so
    the aligned shapes stay close to a linear space spanned by the parameters.
    """
    v = _canonical(resolution).vertices
    w = focus_weights(resolution, rho)
    w = w / w.sum()
    cbar = w @ v
    c = _Anatomy(PhantomSpec()).head_center

    def generators(x):
        u = x - cbar
        eye = np.eye(3)
        gens = [np.broadcast_to(e, x.shape) for e in eye] + [np.cross(e, u) for e in eye] + [u]
        return np.stack([g.ravel() for g in gens], axis=1)

    g = generators(v)
    gc = generators(c[None, :])
    ww = np.repeat(w, 3)
    normal = g.T @ (g * ww[:, None])
    fields, centre_fields = _fields(resolution)
    out, out_c = {}, {}
    for name in _FIELDS:
        coef = np.linalg.solve(normal, g.T @ (ww * fields[name].ravel()))
        out[name] = fields[name] - (g @ coef).reshape(-1, 3)
        out_c[name] = centre_fields[name][0] - gc @ coef
    return out, out_c


def cohort_shape(spec: PhantomSpec, resolution=1.0):
    """Pose-normalised shape for ``spec`` and its head centre.

    Same parameters as :func:`make_template` but built from the pose-free
    fields, so it differs from the template by a small similarity-like motion.
    """
    fields, centre_fields = _pose_free_fields(resolution)
    base = PhantomSpec()
    v = _canonical(resolution).vertices.copy()
    c = _Anatomy(base).head_center.copy()
    for name in _FIELDS:
        delta = getattr(spec, name) - getattr(base, name)
        if delta:
            v += delta * fields[name]
            c += delta * centre_fields[name]
    return v, c


def sample_specs(n, variation=None, seed=0, base=PhantomSpec()):
    """``n`` specs with listed parameters drawn as ``base + sd * N(0, 1)``."""
    variation = DEFAULT_VARIATION if variation is None else variation
    rng = np.random.default_rng(seed)
    return [base.replace(**{k: getattr(base, k) + sd * rng.standard_normal()
                            for k, sd in variation.items()}) for _ in range(n)]


def make_cohort(n, variation=None, seed=0, base=PhantomSpec(), resolution=1.0, noise=0.05):
    """``n`` corresponded cam-free shapes (arrays (V, 3)) and their specs.

    ``variation`` maps parameter name to standard deviation; parameters not
    listed stay at ``base``. Shapes come from :func:`cohort_shape`; each vertex
    then gets isotropic Gaussian noise of SD ``noise`` mm.
    """
    if n < 2:
        raise InputError("a cohort needs at least two shapes")
    specs = sample_specs(n, variation, seed, base)
    rng = np.random.default_rng([seed, 1])
    shapes = []
    for spec in specs:
        v, _ = cohort_shape(spec, resolution)
        if noise:
            v = v + noise * rng.standard_normal(v.shape)
        shapes.append(v)
    return shapes, specs


# -- bumps -----------------------------------------------------------------------

def surface_distance(vertices, triangles, source, limit=np.inf):
    """Approximate geodesic distance from vertex ``source``.

    Shortest paths on a graph joining all vertices closer than three median
    edge lengths, which removes most of the zig-zag excess of edge-only paths.
    """
    e = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    h = np.median(np.linalg.norm(vertices[e[:, 0]] - vertices[e[:, 1]], axis=1))
    pairs = cKDTree(vertices).query_pairs(3.0 * h, output_type="ndarray")
    pairs = np.concatenate([pairs, e])
    w = np.linalg.norm(vertices[pairs[:, 0]] - vertices[pairs[:, 1]], axis=1)
    n = len(vertices)
    graph = coo_matrix((w, (pairs[:, 0], pairs[:, 1])), shape=(n, n)).tocsr()
    return dijkstra(graph, directed=False, indices=int(source), limit=limit)


def bump_heights(vertices, triangles, bump: BumpSpec):
    """Per-vertex displacement of a truncated Gaussian bump.

    ``peak * (exp(-g^2 / 2 w^2) - e_c) / (1 - e_c)`` for surface distance
    ``g < 4 w`` and zero beyond, ``e_c = exp(-8)``; the peak is exact and the
    support compact.
    """
    if not 0 <= bump.center < len(vertices):
        raise InputError(f"bump centre {bump.center} is not a vertex index")
    cut = BUMP_CUTOFF * bump.width
    g = surface_distance(vertices, triangles, bump.center, limit=cut * 1.05)
    floor = np.exp(-0.5 * BUMP_CUTOFF ** 2)
    with np.errstate(invalid="ignore"):
        h = bump.peak * (np.exp(-0.5 * (g / bump.width) ** 2) - floor) / (1.0 - floor)
    return np.where(g < cut, h, 0.0)


def inject_bump(shape, triangles, bump: BumpSpec):
    """Displace ``shape`` vertices along outward normals by the bump heights."""
    shape = np.asarray(shape, dtype=np.float64)
    if bump.peak == 0:
        return shape.copy()
    h = bump_heights(shape, triangles, bump)
    normals = vertex_normals(TriangleMesh(shape, triangles))
    return shape + h[:, None] * normals


# -- voxelisation ---------------------------------------------------------------

_RAY_JITTER = np.array([1.2345e-7, 2.7183e-7])


def grid_for(mesh_or_points, spacing, margin=2):
    """Origin and dims of a grid (aligned to multiples of ``spacing``) covering the points."""
    pts = mesh_or_points.vertices if isinstance(mesh_or_points, TriangleMesh) else mesh_or_points
    lo = np.floor(pts.min(axis=0) / spacing) * spacing - margin * spacing
    hi = np.ceil(pts.max(axis=0) / spacing) * spacing + margin * spacing
    dims = tuple(int(d) for d in np.rint((hi - lo) / spacing).astype(int) + 1)
    return tuple(lo), dims


def inside_mask(mesh: TriangleMesh, spacing, origin, dims):
    """Boolean grid (x, y, z): voxel centre inside ``mesh`` by z-ray parity.

    Rays are offset by a sub-nanometre jitter in x and y so they never pass
    exactly through mesh edges or vertices.
    """
    if not len(mesh.triangles):
        raise MeshError("cannot voxelise an empty mesh")
    mesh.require_watertight()
    s = float(spacing)
    ox, oy, oz = (float(o) for o in origin)
    nx, ny, nz = dims
    jx, jy = ox + _RAY_JITTER[0] * s, oy + _RAY_JITTER[1] * s
    c = mesh.corners()
    xmin, xmax = c[:, :, 0].min(1), c[:, :, 0].max(1)
    ymin, ymax = c[:, :, 1].min(1), c[:, :, 1].max(1)
    i0 = np.clip(np.ceil((xmin - jx) / s), 0, nx).astype(np.int64)
    i1 = np.clip(np.floor((xmax - jx) / s), -1, nx - 1).astype(np.int64)
    j0 = np.clip(np.ceil((ymin - jy) / s), 0, ny).astype(np.int64)
    j1 = np.clip(np.floor((ymax - jy) / s), -1, ny - 1).astype(np.int64)
    ni = np.maximum(i1 - i0 + 1, 0)
    nj = np.maximum(j1 - j0 + 1, 0)
    counts = ni * nj
    tri = np.repeat(np.arange(len(c)), counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    ii = i0[tri] + local // nj[tri]
    jj = j0[tri] + local % nj[tri]
    px = jx + ii * s
    py = jy + jj * s
    a, b, cc = c[tri, 0], c[tri, 1], c[tri, 2]

    def edge(p, q):
        return (q[:, 0] - p[:, 0]) * (py - p[:, 1]) - (q[:, 1] - p[:, 1]) * (px - p[:, 0])

    w0, w1, w2 = edge(b, cc), edge(cc, a), edge(a, b)
    hit = ((w0 > 0) & (w1 > 0) & (w2 > 0)) | ((w0 < 0) & (w1 < 0) & (w2 < 0))
    w0, w1, w2 = w0[hit], w1[hit], w2[hit]
    z = (w0 * a[hit, 2] + w1 * b[hit, 2] + w2 * cc[hit, 2]) / (w0 + w1 + w2)
    col = ii[hit] * ny + jj[hit]
    order = np.lexsort((z, col))
    col, z = col[order], z[order]
    if len(col):
        starts = np.flatnonzero(np.r_[True, col[1:] != col[:-1]])
        sizes = np.diff(np.r_[starts, len(col)])
        if np.any(sizes % 2):
            raise MeshError("odd ray crossing count; mesh is not closed")
    enter, leave, pcol = z[0::2], z[1::2], col[0::2]
    k0 = np.clip(np.floor((enter - oz) / s) + 1, 0, nz).astype(np.int64)
    k1 = np.clip(np.ceil((leave - oz) / s), 0, nz).astype(np.int64)   # exclusive
    diff = np.zeros((nx * ny, nz + 1), dtype=np.int32)
    np.add.at(diff, (pcol, k0), 1)
    np.add.at(diff, (pcol, k1), -1)
    inside = np.cumsum(diff[:, :nz], axis=1) > 0
    return inside.reshape(nx, ny, nz)


def voxelize(mesh: TriangleMesh, spacing, origin=None, dims=None, label=FEMUR) -> LabelVolume:
    """Label voxels whose centres lie inside the closed ``mesh``."""
    if origin is None or dims is None:
        origin, dims = grid_for(mesh, spacing)
    return mask_volume(inside_mask(mesh, spacing, origin, dims), (spacing,) * 3, origin, label)


def _roi_triangles(triangles, roi):
    member = np.zeros(triangles.max() + 1, dtype=bool)
    member[roi] = True
    return member[triangles].all(axis=1)


def oracle_cam_volume(pathological: TriangleMesh, healthy: TriangleMesh, roi, spacing=0.25,
                      margin=1.0):
    """Voxel count of (inside pathological) and (outside healthy) in the ROI sweep, in mm^3.

    The ROI sweep is the set of points whose nearest point on ``healthy`` lies
    on a triangle with all three vertices in ``roi``; both meshes share the
    template topology so ``roi`` indexes either.
    """
    roi = np.asarray(roi, dtype=np.int64)
    pts = np.concatenate([pathological.vertices[roi], healthy.vertices[roi]])
    lo = np.floor((pts.min(axis=0) - margin) / spacing) * spacing
    hi = np.ceil((pts.max(axis=0) + margin) / spacing) * spacing
    dims = tuple(int(d) for d in np.rint((hi - lo) / spacing).astype(int) + 1)
    diff = inside_mask(pathological, spacing, lo, dims) & ~inside_mask(healthy, spacing, lo, dims)
    if not diff.any():
        return 0.0
    centres = lo + spacing * np.argwhere(diff)
    _, tri, _, _ = SpatialIndex(healthy).closest(centres)
    in_roi = _roi_triangles(healthy.triangles, roi)[tri]
    return float(np.count_nonzero(in_roi)) * spacing ** 3
