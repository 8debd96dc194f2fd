"""Focused statistical shape model: alignment, weighted PCA, constrained fitting.

Shapes are (V, 3) vertex arrays on a shared template topology. All inner
products use normalised vertex weights, ``<u, v>_w = sum_i w_i u_i.v_i / sum_i w_i``,
so a mode loading ``b_k`` is the weighted RMS displacement (mm) it produces
and ``lambda_k`` is a variance in mm^2.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import InputError, NumericalError
from .meshes import SpatialIndex, TriangleMesh, read_ply, vertex_normals, write_ply

log = logging.getLogger(__name__)

CLAMP_SD = 3.0


# -- similarity transforms -------------------------------------------------------

@dataclass(frozen=True)
class Similarity:
    """``x -> scale * R x + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise InputError(f"similarity scale must be positive, got {self.scale}")
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))

    @classmethod
    def from_quaternion(cls, quat, translation=(0, 0, 0), scale=1.0):
        """``quat`` in (w, x, y, z) order."""
        w, x, y, z = quat
        return cls(Rotation.from_quat([x, y, z, w]).as_matrix(), np.asarray(translation, float), scale)

    @property
    def quaternion(self):
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        q = np.array([w, x, y, z])
        return q if q[0] >= 0 else -q

    def apply(self, x):
        return self.scale * (np.asarray(x) @ self.rotation.T) + self.translation

    def inverse_apply(self, y):
        return ((np.asarray(y) - self.translation) @ self.rotation) / self.scale

    def compose(self, inner: "Similarity"):
        """``self`` after ``inner``."""
        return Similarity(self.rotation @ inner.rotation, self.apply(inner.translation),
                          self.scale * inner.scale)


def fit_similarity(source, target, weights=None, scaling=True):
    """Weighted least-squares similarity mapping ``source`` onto ``target`` (Umeyama)."""
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    w = np.ones(len(source)) if weights is None else np.asarray(weights, dtype=np.float64)
    wsum = w.sum()
    if not wsum > 0:
        raise InputError("similarity fit needs positive total weight")
    w = w / wsum
    mu_s = w @ source
    mu_t = w @ target
    xs = source - mu_s
    xt = target - mu_t
    cov = (xt * w[:, None]).T @ xs
    u, d, vt = np.linalg.svd(cov)
    fix = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        fix[2] = -1.0
    rot = (u * fix) @ vt
    var_s = float(w @ (xs * xs).sum(1))
    scale = float((d * fix).sum() / var_s) if scaling else 1.0
    return Similarity(rot, mu_t - scale * rot @ mu_s, scale)


def weighted_rms(a, b, weights):
    w = np.asarray(weights, dtype=np.float64)
    return float(np.sqrt(w @ ((np.asarray(a) - np.asarray(b)) ** 2).sum(1) / w.sum()))


# -- Procrustes --------------------------------------------------------------------

def procrustes_align(shapes, weights=None, tol=1e-7, max_iter=200):
    """Generalised weighted Procrustes analysis with similarity transforms.

    The mean's gauge is fixed to the first shape: same weighted centroid, same
    weighted RMS size, best rigid alignment to it. The model frame therefore
    stays close to the input coordinates.
    Returns ``(aligned_shapes, mean)`` where ``mean`` is the plain average of
    the aligned shapes; iterates until the reference moves less than ``tol``
    mm (max vertex displacement).
    """
    shapes = [np.asarray(s, dtype=np.float64) for s in shapes]
    if len(shapes) < 2:
        raise InputError("Procrustes alignment needs at least two shapes")
    n_v = len(shapes[0])
    if any(s.shape != (n_v, 3) for s in shapes):
        raise InputError("all shapes need the same vertex count")
    w = np.ones(n_v) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n_v,) or np.any(w < 0) or not w.sum() > 0:
        raise InputError("weights must be non-negative, one per vertex, not all zero")
    wn = w / w.sum()
    ref = shapes[0] - wn @ shapes[0]
    ref_size = np.sqrt(wn @ (ref * ref).sum(1))
    mean = shapes[0]
    for _ in range(max_iter):
        aligned = [fit_similarity(s, mean, w).apply(s) for s in shapes]
        new = np.mean(aligned, axis=0)
        new -= wn @ new
        new *= ref_size / np.sqrt(wn @ (new * new).sum(1))
        new = fit_similarity(new, shapes[0], w, scaling=False).apply(new)
        moved = np.abs(new - mean).max()
        mean = new
        if moved < tol:
            break
    else:
        log.warning("Procrustes alignment stopped after %d iterations", max_iter)
    aligned = [fit_similarity(s, mean, w).apply(s) for s in shapes]
    return aligned, np.mean(aligned, axis=0)


# -- model -----------------------------------------------------------------------

@dataclass
class ShapeModel:
    mean: np.ndarray                  # (V, 3)
    modes: np.ndarray                 # (K, V, 3), w-orthonormal
    variances: np.ndarray             # (K,), mm^2, non-increasing
    focus_weights: np.ndarray         # (V,)
    topology: np.ndarray              # (T, 3)
    excluded_modes: tuple = ()
    focus_rho: float = 4.0
    head_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    head_radius: float = 0.0
    total_variance: float = 0.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.modes = np.asarray(self.modes, dtype=np.float64).reshape(-1, *self.mean.shape)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        self.focus_weights = np.asarray(self.focus_weights, dtype=np.float64)
        self.topology = np.asarray(self.topology, dtype=np.int64)
        self.head_center = np.asarray(self.head_center, dtype=np.float64)
        self.excluded_modes = tuple(int(k) for k in self.excluded_modes)
        if any(not 0 <= k < self.n_modes for k in self.excluded_modes):
            raise InputError(f"excluded modes {self.excluded_modes} outside 0..{self.n_modes - 1}")

    @property
    def n_modes(self):
        return len(self.variances)

    @property
    def n_vertices(self):
        return len(self.mean)

    @property
    def sd(self):
        return np.sqrt(self.variances)

    def inner(self, u, v):
        w = self.focus_weights
        return float(w @ (u * v).sum(1) / w.sum())

    def gram(self):
        w = self.focus_weights / self.focus_weights.sum()
        flat = self.modes.reshape(self.n_modes, -1)
        return (flat * np.repeat(w, 3)) @ flat.T

    def orthonormality_error(self):
        if not self.n_modes:
            return 0.0
        return float(np.abs(self.gram() - np.eye(self.n_modes)).max())

    def cumulative_variance(self):
        if not self.total_variance:
            return np.ones(self.n_modes)
        return np.cumsum(self.variances) / self.total_variance

    def mesh(self, vertices=None):
        return TriangleMesh(self.mean if vertices is None else vertices, self.topology)


def build_model(shapes, focus_weights, variance_target=0.92, topology=None, excluded_modes=(),
                focus_rho=4.0, head_center=(0.0, 0.0, 0.0), head_radius=0.0):
    """Weighted PCA of aligned corresponded shapes.

    Decomposes the weighted data matrix, so modes lie in the span of the data
    and are orthonormal in the weighted inner product (zero weights allowed).
    Keeps the fewest leading modes whose cumulative variance reaches
    ``variance_target``.
    """
    if len(shapes) < 2:
        raise InputError("building a model needs at least two shapes")
    if not 0 < variance_target <= 1:
        raise InputError("variance_target must lie in (0, 1]")
    x = np.stack([np.asarray(s, dtype=np.float64) for s in shapes])
    n, n_v, _ = x.shape
    w = np.asarray(focus_weights, dtype=np.float64)
    if w.shape != (n_v,) or np.any(w < 0) or not w.sum() > 0:
        raise InputError("focus weights must be non-negative, one per vertex, not all zero")
    mean = x.mean(axis=0)
    xc = (x - mean).reshape(n, -1)
    wc = np.repeat(w / w.sum(), 3)
    # thin SVD of the weighted n x 3V data matrix; left vectors give the modes
    # as data combinations, so zero-weight vertices still get displacements
    u, sv, _ = np.linalg.svd(xc * np.sqrt(wc) / np.sqrt(n - 1), full_matrices=False)
    evals = sv ** 2
    total = float(evals.sum())
    keep = sv > max(sv[0] * 1e-7, 1e-12) if len(sv) else np.zeros(0, bool)
    evals, u, sv = evals[keep], u[:, keep], sv[keep]
    if len(evals):
        cum = np.cumsum(evals) / total
        k = min(int(np.searchsorted(cum, variance_target - 1e-12) + 1), len(evals))
    else:
        k = 0
    evals, u, sv = evals[:k], u[:, :k], sv[:k]
    modes = (u.T @ xc) / (np.sqrt(n - 1) * sv)[:, None]
    model = ShapeModel(mean, modes.reshape(k, n_v, 3), evals, w,
                       np.zeros((0, 3), np.int64) if topology is None else topology,
                       excluded_modes, focus_rho, head_center, head_radius, total)
    err = model.orthonormality_error()
    if err > 1e-8:
        raise NumericalError(f"modes lost weighted orthonormality (error {err:.2e})")
    return model


def coefficients_of(model: ShapeModel, shape):
    """Mode loadings of ``shape`` (already in the model frame) by weighted projection."""
    d = np.asarray(shape, dtype=np.float64) - model.mean
    w = model.focus_weights / model.focus_weights.sum()
    return np.einsum("kvc,vc,v->k", model.modes, d, w)


@dataclass(frozen=True)
class ShapeCoefficients:
    b: np.ndarray
    similarity: Similarity = field(default_factory=Similarity)


def _active(model, active_modes):
    if active_modes is None:
        return np.arange(model.n_modes)
    idx = np.asarray(sorted(set(int(k) for k in active_modes)), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= model.n_modes):
        raise InputError(f"mode index outside 0..{model.n_modes - 1}")
    return idx


def reconstruct(model: ShapeModel, coeffs: ShapeCoefficients, active_modes=None):
    """``similarity(mean + sum_{k in active} b_k * mode_k)``."""
    idx = _active(model, active_modes)
    b = np.asarray(coeffs.b, dtype=np.float64)
    local = model.mean + np.tensordot(b[idx], model.modes[idx], axes=1) if idx.size else model.mean.copy()
    return coeffs.similarity.apply(local)


# -- fitting -----------------------------------------------------------------------

@dataclass
class FitResult:
    coefficients: ShapeCoefficients
    fitted: np.ndarray
    residual_rms: float
    quality_gate_passed: bool
    iterations: int = 0
    converged: bool = True
    inlier_fraction: float = 1.0


@dataclass(frozen=True)
class FitSettings:
    tol: float = 1e-4               # vertex RMS change, mm
    max_iter: int = 200
    gate: float = 1.0               # residual RMS threshold, mm
    robust: bool = True
    trim_k: float = 3.0             # band where the model lies outside the target, robust SDs
    trim_k_cam: float = 2.5         # band where the target bulges out of the model
    trim_floor: float = 0.1         # mm
    bulge_rings: int = 2            # grow protrusion outliers by this many edge rings
    stage_tol: float = 1e-2         # vertex RMS change that ends the symmetric stage, mm
    divergence_window: int = 10
    divergence_rtol: float = 1e-3


def _solve_modes(model, local_target, weights):
    """Weighted least-squares loadings of ``local_target - mean``."""
    k = model.n_modes
    if k == 0:
        return np.zeros(0)
    w = weights / weights.sum()
    flat = model.modes.reshape(k, -1)
    ww = np.repeat(w, 3)
    lhs = (flat * ww) @ flat.T
    rhs = (flat * ww) @ (local_target - model.mean).ravel()
    try:
        return np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(lhs, rhs, rcond=None)[0]


def _adjacency(triangles, n):
    from scipy.sparse import coo_matrix

    rows = triangles[:, [0, 1, 1, 2, 2, 0]].ravel()
    cols = triangles[:, [1, 0, 2, 1, 0, 2]].ravel()
    return coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()


def _robust_location_scale(sd):
    """Centre and noise SD of signed distances.

    The centre is the median; the SD is 1.4826 * the median excess of the
    vertices on the outer side of it, which an outward protrusion cannot inflate.
    """
    centre = float(np.median(sd))
    outside = sd[sd > centre] - centre
    sample = outside if len(outside) >= max(10, len(sd) // 20) else np.abs(sd - centre)
    return centre, 1.4826 * float(np.median(sample))


def fit_to_surface(model: ShapeModel, target: TriangleMesh, init: Similarity = Similarity(),
                   settings: FitSettings = FitSettings(), index: SpatialIndex | None = None,
                   b0=None, weights=None) -> FitResult:
    """Fit pose and clamped mode loadings to a closed target surface.

    Each iteration pairs every model vertex with its closest target point,
    re-estimates the similarity, projects the residual onto the modes with
    the focus weights and clamps each loading to +-3 SD.

    With ``robust`` on, pairs outside an inlier band are ignored for that
    iteration. While the pose is still rough the band is symmetric,
    ``trim_k`` robust SDs of the unsigned distances. Once the vertex RMS change
    drops below ``stage_tol`` the band turns asymmetric: it is centred on the
    median signed distance, the noise scale comes from vertices on the outer
    side of that median, which an outward protrusion such as a cam cannot
    inflate, and the protrusion side is cut at ``trim_k_cam`` scales. Neither
    side is narrower than ``trim_floor``. Centring matters: a band anchored at
    zero would call a uniformly shrunken fit a protrusion and chase it inward.

    ``weights`` replaces the model focus weights for fitting and for the
    residual, e.g. to blank out the region where a cam may sit.
    """
    if index is None:
        target.require_watertight()
        index = SpatialIndex(target)
    fw = model.focus_weights if weights is None else np.asarray(weights, dtype=np.float64)
    if fw.shape != (model.n_vertices,) or np.any(fw < 0) or not fw.sum() > 0:
        raise InputError("fit weights must be non-negative, one per vertex, not all zero")
    limit = CLAMP_SD * model.sd
    b = np.zeros(model.n_modes) if b0 is None else np.clip(np.asarray(b0, float), -limit, limit)
    sim = init
    local = model.mean + (np.tensordot(b, model.modes, axes=1) if model.n_modes else 0.0)
    x = sim.apply(local)
    prev_res, rising, inliers = np.inf, 0, 1.0
    converged = False
    it = 0
    active = fw > 0
    signed_stage, hint = False, None
    adjacency = _adjacency(model.topology, model.n_vertices) if settings.bulge_rings else None
    for it in range(1, settings.max_iter + 1):
        sd, y, hint = index.signed_closest(x, hint)
        dist = np.abs(sd)
        w, tau = fw, np.inf
        if settings.robust:
            if signed_stage:
                centre, scale = _robust_location_scale(sd[active])
                tau = centre + max(settings.trim_floor, settings.trim_k * scale)
                bulge = sd < centre - max(settings.trim_floor, settings.trim_k_cam * scale)
                for _ in range(settings.bulge_rings):
                    bulge = (adjacency @ bulge.astype(np.float64) > 0) | bulge
                keep = (sd <= tau) & ~bulge
            else:
                tau = max(settings.trim_floor,
                          settings.trim_k * 1.4826 * float(np.median(dist[active])))
                keep = dist <= tau
            inliers = float(keep[active].mean())
            w = fw * keep
            if not w.sum() > 0:
                w = fw
        # divergence is judged on the truncated loss the robust fit minimises
        loss = float(np.sqrt(fw @ np.minimum(dist, tau) ** 2 / fw.sum()))
        rising = rising + 1 if loss > prev_res * (1.0 + settings.divergence_rtol) else 0
        if rising >= settings.divergence_window:
            raise NumericalError(f"fit diverged: loss rose for {rising} iterations")
        prev_res = loss
        sim = fit_similarity(local, y, w)
        b = np.clip(_solve_modes(model, sim.inverse_apply(y), w), -limit, limit)
        local = model.mean + (np.tensordot(b, model.modes, axes=1) if model.n_modes else 0.0)
        x_new = sim.apply(local)
        change = float(np.sqrt(((x_new - x) ** 2).sum(1).mean()))
        x = x_new
        if settings.robust and not signed_stage and change < settings.stage_tol:
            # coarse alignment done: switch to the asymmetric band
            signed_stage, rising, prev_res = True, 0, np.inf
            continue
        if change < settings.tol and (signed_stage or not settings.robust):
            converged = True
            break
    if not converged:
        log.warning("fit stopped after %d iterations without meeting tolerance", it)
    dist, _, _, _ = index.closest(x)
    residual = float(np.sqrt(fw @ dist ** 2 / fw.sum()))
    coeffs = ShapeCoefficients(b, sim)
    fitted = reconstruct(model, coeffs)
    return FitResult(coeffs, fitted, residual, residual <= settings.gate, it, converged, inliers)


def initial_pose(model: ShapeModel, head_center, head_radius=None):
    """Rough pose from the femoral head: translate the model head centre onto
    ``head_center``; scale by the radius ratio when both radii are known."""
    scale = 1.0
    if head_radius and model.head_radius:
        scale = float(head_radius) / model.head_radius
    return Similarity(np.eye(3), np.asarray(head_center, float) - scale * model.head_center, scale)


def perturbed_poses(pose: Similarity, pivot, n=3, seed=0, angle_deg=8.0, shift=2.0):
    """Random rigid perturbations of ``pose`` about the world point ``pivot``."""
    rng = np.random.default_rng(seed)
    pivot = np.asarray(pivot, dtype=np.float64)
    out = []
    for _ in range(n):
        axis = rng.standard_normal(3)
        rot = Rotation.from_rotvec(np.deg2rad(angle_deg) * axis / np.linalg.norm(axis)).as_matrix()
        delta = Similarity(rot, pivot - rot @ pivot + shift * rng.standard_normal(3) / np.sqrt(3))
        out.append(delta.compose(pose))
    return out


def fit_with_restarts(model, target, init, settings=FitSettings(), n_starts=3, seed=0, index=None,
                      weights=None):
    """Fit from ``init``; if the quality gate fails, retry from poses perturbed
    about the model head centre and keep the lowest residual."""
    index = index or SpatialIndex(target)
    best = fit_to_surface(model, target, init, settings, index, weights=weights)
    if best.quality_gate_passed:
        return best
    for pose in perturbed_poses(init, init.apply(model.head_center), n_starts, seed):
        try:
            cand = fit_to_surface(model, target, pose, settings, index, weights=weights)
        except NumericalError:
            continue
        if cand.residual_rms < best.residual_rms:
            best = cand
    return best


def simulate_healthy(model: ShapeModel, fit: FitResult):
    """Reconstruct the fitted pose with cam-associated modes removed."""
    active = [k for k in range(model.n_modes) if k not in set(model.excluded_modes)]
    return reconstruct(model, fit.coefficients, active)


def flag_cam_modes(model: ShapeModel, roi, energy_threshold=0.6):
    """Modes whose weighted displacement energy is concentrated in ``roi``."""
    roi = np.asarray(roi, dtype=np.int64)
    if roi.size == 0:
        raise InputError("ROI is empty")
    if not 0 < energy_threshold < 1:
        raise InputError("energy threshold must lie in (0, 1)")
    w = model.focus_weights
    energy = (model.modes ** 2).sum(-1) * w          # (K, V)
    frac = energy[:, roi].sum(1) / energy.sum(1)
    return [int(k) for k in np.flatnonzero(frac > energy_threshold)]


def conform_to_surface(vertices, triangles, target_index: SpatialIndex, iters=30, tol=1e-6,
                       max_step=10.0):
    """Slide each vertex along its own normal onto the target surface.

    Newton-like march ``p <- p - d(p) n`` with ``d`` the signed distance to the
    target. Vertices that do not settle within ``tol`` or would travel farther
    than ``max_step`` fall back to their closest target point.
    """
    start = np.asarray(vertices, dtype=np.float64)
    normals = vertex_normals(TriangleMesh(start, triangles))
    p = start.copy()
    d = np.zeros(len(p))
    for _ in range(iters):
        d = target_index.signed_distance(p)
        if np.abs(d).max() < tol:
            break
        p = p - d[:, None] * normals
    d = target_index.signed_distance(p)
    bad = (np.abs(d) >= tol) | (np.linalg.norm(p - start, axis=1) > max_step)
    if bad.any():
        p[bad] = target_index.closest(start[bad])[3]
    return p


# -- serialisation -----------------------------------------------------------------

_MAGIC = "femcam-shape-model 1"


def save_model(path, model: ShapeModel):
    """Text header + little-endian float64 payload (mean, modes, focus weights);
    topology goes to ``<stem>.ply`` (mean shape)."""
    path = Path(path)
    header = [
        _MAGIC,
        f"modes = {model.n_modes}",
        f"vertices = {model.n_vertices}",
        "variances = " + " ".join(repr(float(v)) for v in model.variances),
        f"total_variance = {float(model.total_variance)!r}",
        "excluded_modes = " + " ".join(str(k) for k in model.excluded_modes),
        f"focus_rho = {float(model.focus_rho)!r}",
        "head_center = " + " ".join(repr(float(v)) for v in model.head_center),
        f"head_radius = {float(model.head_radius)!r}",
        f"topology = {path.with_suffix('.ply').name}",
        "end_header",
    ]
    payload = np.concatenate([model.mean.ravel(), model.modes.ravel(), model.focus_weights])
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode())
        fh.write(payload.astype("<f8").tobytes())
    write_ply(path.with_suffix(".ply"), model.mesh())
    return path


def load_model(path) -> ShapeModel:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"model file not found: {path}")
    data = path.read_bytes()
    marker = b"end_header\n"
    cut = data.find(marker)
    if cut < 0 or not data.startswith(_MAGIC.encode()):
        raise InputError(f"{path}: not a shape model file")
    fields = {}
    for line in data[:cut].decode().splitlines()[1:]:
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    try:
        k = int(fields["modes"])
        n_v = int(fields["vertices"])
        variances = np.array([float(v) for v in fields["variances"].split()])
        excluded = [int(v) for v in fields.get("excluded_modes", "").split()]
        head_center = [float(v) for v in fields["head_center"].split()]
    except (KeyError, ValueError) as exc:
        raise InputError(f"{path}: malformed model header ({exc})") from None
    payload = np.frombuffer(data[cut + len(marker):], dtype="<f8")
    if payload.size != 3 * n_v * (1 + k) + n_v:
        raise InputError(f"{path}: payload size does not match header")
    mean = payload[:3 * n_v].reshape(n_v, 3)
    modes = payload[3 * n_v:3 * n_v * (1 + k)].reshape(k, n_v, 3)
    weights = payload[3 * n_v * (1 + k):]
    topo = read_ply(path.parent / fields.get("topology", path.with_suffix(".ply").name)).triangles
    return ShapeModel(mean.copy(), modes.copy(), variances, weights.copy(), topo, excluded,
                      float(fields.get("focus_rho", 4.0)), head_center,
                      float(fields.get("head_radius", 0.0)),
                      float(fields.get("total_variance", variances.sum())))
