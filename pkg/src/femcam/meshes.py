"""Indexed triangle meshes, measures, PLY I/O and signed distance queries."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.sparse import coo_matrix
from scipy.spatial import cKDTree

from .errors import InputError, MeshError
from .kernels import TriangleBVH

WELD_TOL = 1e-6
AREA_TOL = 1e-12


class TriangleMesh:
    """Vertices (V, 3) in mm, triangles (T, 3) indices, named per-vertex scalars."""

    def __init__(self, vertices, triangles, scalars=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise MeshError("triangle index out of range")
        self.scalars = {}
        for name, values in (scalars or {}).items():
            self.set_scalar(name, values)

    @classmethod
    def cleaned(cls, vertices, triangles, weld_tol=WELD_TOL, area_tol=AREA_TOL):
        """Weld vertices closer than ``weld_tol``, drop triangles with area below
        ``area_tol`` or repeated corners, and drop unreferenced vertices."""
        vertices = np.asarray(vertices, dtype=np.float64)
        triangles = np.asarray(triangles, dtype=np.int64)
        pairs = cKDTree(vertices).query_pairs(weld_tol, output_type="ndarray")
        if len(pairs):
            n = len(vertices)
            graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
            _, comp = connected_components(graph, directed=False)
            # representative = lowest original index in each component
            rep = np.full(comp.max() + 1, n)
            np.minimum.at(rep, comp, np.arange(n))
            triangles = rep[comp][triangles]
        t = triangles
        distinct = (t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2])
        t = t[distinct]
        t = t[_triangle_areas(vertices, t) >= area_tol]
        used = np.unique(t)
        remap = np.full(len(vertices), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        return cls(vertices[used], remap[t])

    def set_scalar(self, name, values):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (len(self.vertices),):
            raise InputError(f"scalar '{name}' needs one value per vertex")
        self.scalars[name] = values

    def copy(self, vertices=None):
        v = self.vertices if vertices is None else vertices
        return TriangleMesh(v.copy(), self.triangles.copy(),
                            {k: s.copy() for k, s in self.scalars.items()})

    def flipped(self):
        return TriangleMesh(self.vertices.copy(), self.triangles[:, ::-1].copy(), self.scalars)

    @property
    def n_vertices(self):
        return len(self.vertices)

    def corners(self):
        return self.vertices[self.triangles]

    def face_normals(self, unit=True):
        c = self.corners()
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        if unit:
            n /= np.linalg.norm(n, axis=1, keepdims=True)
        return n

    def edge_use_counts(self):
        """Undirected edges (E, 2) and how many triangles use each."""
        e = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0, return_counts=True)

    def is_watertight(self):
        """Every edge shared by exactly two triangles that traverse it in opposite directions."""
        if not len(self.triangles):
            return False
        _, counts = self.edge_use_counts()
        if not np.all(counts == 2):
            return False
        directed = self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        return len(np.unique(directed, axis=0)) == len(directed)

    def require_watertight(self):
        if not self.is_watertight():
            raise MeshError("mesh is not watertight and consistently oriented")

    def signed_volume(self):
        c = self.corners()
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)


def _triangle_areas(vertices, triangles):
    c = vertices[triangles]
    return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)


def enclosed_volume(mesh: TriangleMesh):
    """Divergence-theorem volume; positive for outward-facing triangles."""
    mesh.require_watertight()
    return mesh.signed_volume()


def triangle_areas(mesh: TriangleMesh):
    return _triangle_areas(mesh.vertices, mesh.triangles)


def surface_area(mesh: TriangleMesh, subset=None):
    areas = triangle_areas(mesh)
    if subset is None:
        return float(areas.sum())
    subset = np.asarray(subset, dtype=np.int64).ravel()
    if subset.size and (subset.min() < 0 or subset.max() >= len(areas)):
        raise InputError("triangle subset index out of range")
    return float(areas[subset].sum())


def _corner_angles(mesh):
    c = mesh.corners()
    angles = np.empty((len(c), 3))
    for k in range(3):
        u = c[:, (k + 1) % 3] - c[:, k]
        v = c[:, (k + 2) % 3] - c[:, k]
        cos = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        angles[:, k] = np.arccos(np.clip(cos, -1.0, 1.0))
    return angles


def vertex_normals(mesh: TriangleMesh):
    """Angle-weighted pseudo-normals, unit length."""
    fn = mesh.face_normals()
    ang = _corner_angles(mesh)
    acc = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(acc, mesh.triangles[:, k], ang[:, k, None] * fn)
    norm = np.linalg.norm(acc, axis=1)
    if np.any(norm == 0):
        raise MeshError(f"{int(np.sum(norm == 0))} vertices have no incident triangle")
    return acc / norm[:, None]


def _edge_pseudo_normals(mesh, face_normals):
    # per triangle, edges AB, BC, CA
    e = np.sort(mesh.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    _, inverse = np.unique(e, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    acc = np.zeros((inverse.max() + 1, 3))
    np.add.at(acc, inverse, np.repeat(face_normals, 3, axis=0))
    return acc[inverse].reshape(-1, 3, 3)


class SpatialIndex:
    """Closest-point structure over one mesh plus its pseudo-normals for signing."""

    def __init__(self, mesh: TriangleMesh, backend=None):
        self.mesh = mesh
        self.bvh = TriangleBVH(mesh.corners(), backend=backend)
        self.face_normals = mesh.face_normals()
        self.vertex_normals = vertex_normals(mesh)
        self.edge_normals = _edge_pseudo_normals(mesh, self.face_normals)

    def closest(self, points, hint=None):
        """``(distance, triangle, region, point)`` for each query point."""
        d2, tri, reg, pt = self.bvh.query(points, hint)
        return np.sqrt(d2), tri, reg, pt

    def feature_normals(self, tri, reg):
        n = self.face_normals[tri].copy()
        vert = reg < 3
        n[vert] = self.vertex_normals[self.mesh.triangles[tri[vert], reg[vert]]]
        edge = (reg >= 3) & (reg < 6)
        n[edge] = self.edge_normals[tri[edge], reg[edge] - 3]
        return n

    def signed_closest(self, points, hint=None):
        """``(signed distance, closest point, triangle)``; positive outside the surface."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        dist, tri, reg, pt = self.closest(points, hint)
        side = np.einsum("ij,ij->i", points - pt, self.feature_normals(tri, reg))
        return np.where(side < 0, -dist, dist), pt, tri

    def signed_distance(self, points):
        return self.signed_closest(points)[0]


def signed_distance(query, target: TriangleMesh, index: SpatialIndex | None = None):
    """Signed distance from ``query`` (one point or (N, 3)) to ``target``.

    Positive outside (along the outward pseudo-normal at the nearest feature),
    negative inside.
    """
    if index is None:
        target.require_watertight()
        index = SpatialIndex(target)
    q = np.asarray(query, dtype=np.float64)
    out = index.signed_distance(q)
    return float(out[0]) if q.ndim == 1 else out


def per_vertex_distance_field(source: TriangleMesh, target: TriangleMesh,
                              name="healthy_distance", index=None):
    """Copy of ``source`` with per-vertex signed distance to ``target`` stored as ``name``."""
    target.require_watertight()
    index = index or SpatialIndex(target)
    out = source.copy()
    out.set_scalar(name, index.signed_distance(source.vertices))
    return out


# -- PLY ---------------------------------------------------------------------

def write_ply(path, mesh: TriangleMesh):
    """ASCII PLY; scalars become extra float vertex properties."""
    names = list(mesh.scalars)
    lines = ["ply", "format ascii 1.0", f"element vertex {mesh.n_vertices}",
             "property float x", "property float y", "property float z"]
    lines += [f"property float {n}" for n in names]
    lines += [f"element face {len(mesh.triangles)}",
              "property list uchar int vertex_indices", "end_header"]
    cols = [mesh.vertices] + [mesh.scalars[n][:, None] for n in names]
    table = np.hstack(cols)
    body = [" ".join(repr(float(x)) for x in row) for row in table]
    body += ["3 " + " ".join(str(int(i)) for i in tri) for tri in mesh.triangles]
    Path(path).write_text("\n".join(lines + body) + "\n")
    return Path(path)


def read_ply(path) -> TriangleMesh:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"mesh file not found: {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise InputError(f"{path}: not a PLY file")
    props, n_vert, n_face, element, i = [], 0, 0, None, 1
    while i < len(lines):
        parts = lines[i].split()
        i += 1
        if not parts:
            continue
        if parts[0] == "format" and parts[1] != "ascii":
            raise InputError(f"{path}: only ASCII PLY is supported")
        if parts[0] == "element":
            element = parts[1]
            if element == "vertex":
                n_vert = int(parts[2])
            elif element == "face":
                n_face = int(parts[2])
        elif parts[0] == "property" and element == "vertex":
            props.append(parts[-1])
        elif parts[0] == "end_header":
            break
    try:
        table = np.array([lines[i + k].split() for k in range(n_vert)], dtype=np.float64)
        faces = [lines[i + n_vert + k].split() for k in range(n_face)]
    except (IndexError, ValueError) as exc:
        raise InputError(f"{path}: truncated or malformed body ({exc})") from None
    if any(f[0] != "3" for f in faces):
        raise InputError(f"{path}: only triangular faces are supported")
    table = table.reshape(n_vert, len(props))
    col = {p: k for k, p in enumerate(props)}
    verts = table[:, [col["x"], col["y"], col["z"]]]
    tris = np.array([f[1:4] for f in faces], dtype=np.int64).reshape(-1, 3)
    scalars = {p: table[:, k] for p, k in col.items() if p not in ("x", "y", "z")}
    return TriangleMesh(verts, tris, scalars)
