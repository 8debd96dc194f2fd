"""Command-line driver: ``synth``, ``build-model``, ``pipeline``, ``eval`` and ``cohort``.

Configuration comes from defaults, then an optional ``key = value`` file
(``--config``), then command-line flags; the environment variable
``FEMCAM_OUTPUT_DIR`` only supplies the default output directory.

Exit codes: 0 success, 2 input error, 3 quality-gate failure (report still
written, flagged ``gate: failed``), 4 numerical or other compute failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__
from . import synth
from .camdetect import VOLUME_METHODS, CamRoi, analyze_case, load_roi, save_roi
from .errors import FemcamError, InputError, NumericalError
from .headfit import head_volume, hough_sphere, refine_head_mask
from .meshes import SpatialIndex, TriangleMesh, read_ply, write_ply
from .metrics import evaluate_segmentation, write_metric_csv
from .shapemodel import (FitSettings, build_model, fit_with_restarts, flag_cam_modes,
                         initial_pose, load_model, procrustes_align, save_model, simulate_healthy)
from .stats import (Sample, classify_cam, cohort_quartiles, pearson, select_test_and_compare)
from .volumes import FEMUR, extract_surface, load_volume, resample_isotropic, save_volume

log = logging.getLogger("femcam")

EXIT_OK, EXIT_INPUT, EXIT_GATE, EXIT_NUMERIC = 0, 2, 3, 4
OUTPUT_ENV = "FEMCAM_OUTPUT_DIR"
SEGMENTATION_SUFFIX = "_segmentation"
REPORT_SUFFIX = "_report.json"


# -- configuration ---------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    spacing: float = 0.5              # working voxel size, mm
    hough_r_min: float = 15.0
    hough_r_max: float = 35.0
    hough_step: float = 0.5
    fit_tol: float = 1e-4             # mm
    fit_max_iter: int = 200
    n_starts: int = 3                 # extra starts when the gate fails
    focus_rho: float = 4.0
    variance_target: float = 0.92
    excluded_modes: str = "model"     # model | none | auto | comma-separated indices
    cam_mode_threshold: float = 0.6
    roi: str = ""                     # index file; default <model>.roi.txt
    gate: float = 1.0                 # residual RMS, mm
    volume_method: str = "prism"
    resolution: float = 2.0           # template edge scale for synth, mm
    seed: int = 0
    output_dir: str = "."

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.type in ("float", "int") and f.name != "seed" and not v > 0:
                raise InputError(f"config {f.name} must be positive, got {v}")
        if self.seed < 0:
            raise InputError("config seed must be >= 0")
        if not 0 < self.variance_target <= 1:
            raise InputError("config variance_target must lie in (0, 1]")
        if not self.hough_r_min < self.hough_r_max:
            raise InputError("config hough_r_min must be below hough_r_max")
        if not 0 < self.cam_mode_threshold < 1:
            raise InputError("config cam_mode_threshold must lie in (0, 1)")
        if self.volume_method not in VOLUME_METHODS:
            raise InputError(f"config volume_method must be one of {VOLUME_METHODS}")
        self.explicit_modes()

    def explicit_modes(self):
        """Parsed ``excluded_modes`` list, or None for the keywords."""
        s = self.excluded_modes.strip()
        if s in ("model", "none", "auto"):
            return None
        try:
            return tuple(int(v) for v in s.replace(",", " ").split())
        except ValueError:
            raise InputError(f"config excluded_modes: bad value {s!r}") from None

    def fit_settings(self):
        return FitSettings(tol=self.fit_tol, max_iter=self.fit_max_iter, gate=self.gate)

    def hash(self):
        """SHA-256 over the result-affecting fields; the ROI enters by content."""
        lines = []
        for f in dataclasses.fields(self):
            if f.name == "output_dir":
                continue
            v = getattr(self, f.name)
            if f.name == "roi" and v:
                p = Path(v)
                v = hashlib.sha256(p.read_bytes()).hexdigest() if p.is_file() else v
            lines.append(f"{f.name}={v!r}")
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()


_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}


def _coerce(name, value):
    kind = _CONFIG_FIELDS[name].type
    try:
        return int(value) if kind == "int" else float(value) if kind == "float" else str(value)
    except ValueError:
        raise InputError(f"config {name}: cannot parse {value!r}") from None


def read_config(path):
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in _CONFIG_FIELDS:
            raise InputError(f"{path}:{lineno}: unknown or malformed entry {line!r}")
        values[key] = _coerce(key, value.strip())
    return values


def write_config(path, config: PipelineConfig):
    lines = [f"{f.name} = {getattr(config, f.name)}" for f in dataclasses.fields(config)]
    Path(path).write_text("\n".join(lines) + "\n")


def resolve_config(args) -> PipelineConfig:
    """Defaults < environment (output dir only) < config file < flags."""
    values = {}
    env = os.environ.get(OUTPUT_ENV)
    if env:
        values["output_dir"] = env
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        values.update(read_config(path))
    for name in _CONFIG_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = _coerce(name, v)
    return PipelineConfig(**values)


def _add_config_flags(p):
    p.add_argument("--config", help="key = value configuration file")
    for f in dataclasses.fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper(),
                       help=f"(default: {f.default})")


# -- report formatting ------------------------------------------------------------

def _round(obj, digits=6):
    """Floats to ``digits`` significant digits, recursively."""
    if isinstance(obj, (float, np.floating)):
        return float(f"{float(obj):.{digits}g}")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_round(v, digits) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {k: _round(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v, digits) for v in obj]
    return obj


def dump_report(report: dict) -> str:
    return json.dumps(_round(report), sort_keys=True, indent=2) + "\n"


def _atomic_outputs(out_dir, files):
    """Write ``{name: writer(path)}`` into a scratch directory, then move all into place."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(dir=out_dir, prefix=".partial-") as tmp:
        for name, writer in files.items():
            writer(Path(tmp) / name)
        produced = sorted(Path(tmp).iterdir())
        for p in produced:
            os.replace(p, out_dir / p.name)
    return [out_dir / p.name for p in produced]


# -- pipeline --------------------------------------------------------------------

class StageError(Exception):
    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.exit_code = EXIT_INPUT if isinstance(exc, InputError) else EXIT_NUMERIC


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.debug("stage %s", self.name)
        return self

    def __exit__(self, kind, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
            raise StageError(self.name, exc) from exc
        return False


@lru_cache(maxsize=2)
def _cached_model(path):
    return load_model(path)


def default_roi_path(model_path):
    return Path(model_path).with_suffix(".roi.txt")


def run_case(mask_path, model_path, config: PipelineConfig, case_id=None):
    """Run one mask through the pipeline and write its outputs.

    Returns ``(exit_code, message)``; outputs appear only if a report is produced.
    """
    mask_path = Path(mask_path)
    case_id = case_id or mask_path.stem
    try:
        with _Stage("load_model"):
            model = _cached_model(str(model_path))
            roi = load_roi(config.roi or default_roi_path(model_path))
            roi.check(model.n_vertices)
            explicit = config.explicit_modes()
            if explicit is not None:
                excluded = explicit
            elif config.excluded_modes == "none":
                excluded = ()
            elif config.excluded_modes == "auto":
                excluded = tuple(flag_cam_modes(model, roi.indices, config.cam_mode_threshold))
            else:
                excluded = model.excluded_modes
            model = dataclasses.replace(model, excluded_modes=excluded)
        with _Stage("load_volume"):
            volume = load_volume(mask_path)
        with _Stage("resample"):
            work = resample_isotropic(volume, config.spacing)
            femur = work.voxels(FEMUR)
            if len(femur) == 0:
                raise InputError("mask has no femur voxels")
        with _Stage("extract_surface"):
            surface = extract_surface(work, FEMUR)
        with _Stage("hough_sphere"):
            sphere = hough_sphere(femur, (config.hough_r_min, config.hough_r_max), config.hough_step)
        with _Stage("head_volume"):
            head_cm3 = head_volume(refine_head_mask(femur, sphere))
        with _Stage("fit_to_surface"):
            index = SpatialIndex(surface)
            weights = model.focus_weights.copy()
            weights[roi.indices] = 0.0
            init = initial_pose(model, sphere.center, sphere.radius)
            fit = fit_with_restarts(model, surface, init, config.fit_settings(), config.n_starts,
                                    config.seed, index, weights)
        with _Stage("simulate_healthy"):
            healthy = simulate_healthy(model, fit)
        with _Stage("cam_metrics"):
            cam, cam_mesh = analyze_case(model, fit, healthy, surface, roi, sphere, head_cm3,
                                         config.volume_method, index)
        with _Stage("segmentation"):
            seg = synth.voxelize(TriangleMesh(cam_mesh.vertices, model.topology), config.spacing,
                                 work.origin, work.dims)
    except StageError as exc:
        return exc.exit_code, f"{case_id}: {exc}"

    gate = "passed" if fit.quality_gate_passed else "failed"
    report = {
        "case_id": case_id,
        "version": __version__,
        "config_hash": config.hash(),
        "head": {"center_mm": sphere.center, "radius_mm": sphere.radius,
                 "vote_score": sphere.vote_score, "volume_cm3": head_cm3},
        "cam": {**cam.metrics.as_dict(), "patch_vertices": cam.n_patch_vertices},
        "cam_head_ratio": cam.cam_head_ratio,
        "fit": {"residual_rms_mm": fit.residual_rms, "gate": gate, "iterations": fit.iterations,
                "converged": bool(fit.converged), "inlier_fraction": fit.inlier_fraction,
                "excluded_modes": list(model.excluded_modes)},
        "warnings": list(cam.warnings),
    }
    text = dump_report(report)
    _atomic_outputs(config.output_dir, {
        f"{case_id}{REPORT_SUFFIX}": lambda p: p.write_text(text),
        f"{case_id}_cam_height.ply": lambda p: write_ply(p, cam_mesh),
        f"{case_id}{SEGMENTATION_SUFFIX}.mhd": lambda p: save_volume(p, seg),
    })
    code = EXIT_OK if fit.quality_gate_passed else EXIT_GATE
    return code, f"{case_id}: gate {gate}, cam volume {cam.metrics.volume:.6g} mm^3"


def _run_case_args(args):
    return run_case(*args)


def _map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def cmd_pipeline(args):
    config = resolve_config(args)
    masks = [Path(m) for m in args.masks]
    if args.case_id and len(masks) > 1:
        raise InputError("--case-id only applies to a single mask")
    jobs = [(m, args.model, config, args.case_id) for m in masks]
    results = _map(_run_case_args, jobs, args.workers)
    for code, msg in results:
        print(msg, file=sys.stdout if code == EXIT_OK else sys.stderr)
    return max(code for code, _ in results)


# -- synth / build-model -------------------------------------------------------------

def _write_meta(path, items):
    lines = []
    for k, v in items.items():
        v = " ".join(repr(float(x)) for x in v) if isinstance(v, (list, tuple, np.ndarray)) else v
        lines.append(f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")


def _read_meta(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        key, sep, value = line.partition("=")
        if sep:
            out[key.strip()] = value.strip()
    return out


def cmd_synth_cohort(args):
    config = resolve_config(args)
    res = config.resolution
    shapes, specs = synth.make_cohort(args.n, seed=config.seed, resolution=res, noise=args.noise)
    out = Path(config.output_dir)
    topo = synth.topology(res)
    files = {}
    for i, (v, spec) in enumerate(zip(shapes, specs)):
        files[f"shape_{i:03d}.ply"] = lambda p, v=v: write_ply(p, TriangleMesh(v, topo))
        files[f"shape_{i:03d}.spec.txt"] = lambda p, s=spec: synth.write_spec(p, s)
    files["roi.txt"] = lambda p: save_roi(p, CamRoi(synth.cam_roi(res), "geometric head-neck ROI"))
    files["focus.txt"] = lambda p: p.write_text(
        "\n".join(str(i) for i in synth.focus_region(res)) + "\n")
    files["cohort.txt"] = lambda p: _write_meta(p, {
        "n": args.n, "seed": config.seed, "resolution": res, "noise": args.noise,
        "head_center": synth.head_center(resolution=res),
        "head_radius": synth.PhantomSpec().head_radius})
    _atomic_outputs(out, files)
    print(f"wrote {args.n} shapes to {out}")
    return EXIT_OK


def cmd_synth_phantom(args):
    config = resolve_config(args)
    res = config.resolution
    spec = synth.read_spec(args.spec) if args.spec else (
        synth.FEMALE_SPEC if args.female else synth.PhantomSpec())
    if args.bump:
        bump = synth.read_spec(args.bump, synth.BumpSpec)
    elif args.bump_peak:
        center = args.bump_center if args.bump_center is not None else synth.frame_vertex(res)
        bump = synth.BumpSpec(int(center), float(args.bump_peak), float(args.bump_width))
    else:
        bump = None
    topo = synth.topology(res)
    healthy = synth.make_template(spec, res)
    verts = healthy.vertices if bump is None else synth.inject_bump(healthy.vertices, topo, bump)
    patho = TriangleMesh(verts, topo)
    mask = synth.voxelize(patho, config.spacing)
    case = args.case_id
    truth = {"case_id": case, "head_radius_mm": spec.head_radius,
             "head_center_mm": list(synth.head_center(spec, res))}
    if bump is not None:
        truth["bump_peak_mm"] = bump.peak
        truth["bump_width_mm"] = bump.width
        truth["oracle_cam_volume_mm3"] = synth.oracle_cam_volume(patho, healthy, synth.cam_roi(res))
    files = {
        f"{case}.mhd": lambda p: save_volume(p, mask),
        f"{case}_truth.ply": lambda p: write_ply(p, patho),
        f"{case}_healthy.ply": lambda p: write_ply(p, healthy),
        f"{case}.spec.txt": lambda p: synth.write_spec(p, spec),
        f"{case}_truth.json": lambda p: p.write_text(dump_report(truth)),
    }
    if bump is not None:
        files[f"{case}.bump.txt"] = lambda p: synth.write_spec(p, bump)
    _atomic_outputs(config.output_dir, files)
    print(f"wrote phantom {case} to {config.output_dir}")
    return EXIT_OK


def cmd_build_model(args):
    config = resolve_config(args)
    cohort = Path(args.cohort)
    paths = sorted(cohort.glob("shape_*.ply"))
    if len(paths) < 2:
        raise InputError(f"{cohort}: need at least two shape_*.ply files")
    meshes = [read_ply(p) for p in paths]
    topo = meshes[0].triangles
    if any(m.triangles.shape != topo.shape or not np.array_equal(m.triangles, topo) for m in meshes):
        raise InputError("cohort shapes do not share one topology")
    meta = _read_meta(cohort / "cohort.txt") if (cohort / "cohort.txt").is_file() else {}
    n_v = meshes[0].n_vertices
    weights = np.ones(n_v)
    if (cohort / "focus.txt").is_file():
        focus = np.loadtxt(cohort / "focus.txt", dtype=np.int64, ndmin=1)
        weights[focus] = config.focus_rho
    roi = load_roi(cohort / "roi.txt")
    roi.check(n_v)
    aligned, _ = procrustes_align([m.vertices for m in meshes], weights)
    head_center = [float(v) for v in meta.get("head_center", "0 0 0").split()]
    model = build_model(aligned, weights, config.variance_target, topo, (), config.focus_rho,
                        head_center, float(meta.get("head_radius", 0.0)))
    explicit = config.explicit_modes()
    if explicit is not None:
        excluded = explicit
    elif config.excluded_modes == "auto":
        excluded = tuple(flag_cam_modes(model, roi.indices, config.cam_mode_threshold))
    else:
        excluded = ()
    model = dataclasses.replace(model, excluded_modes=excluded)
    out = Path(args.out) if args.out else Path(config.output_dir) / "model.fsm"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(out, model)
    save_roi(default_roi_path(out), roi)
    cum = model.cumulative_variance()
    print(f"model {out}: {model.n_modes} modes, cumulative variance "
          + " ".join(f"{c:.4f}" for c in cum) + f", excluded {list(excluded)}")
    return EXIT_OK


# -- eval -----------------------------------------------------------------------------

def _case_ids(directory, auto):
    d = Path(directory)
    if not d.is_dir():
        raise InputError(f"not a directory: {d}")
    files = sorted(d.glob("*.mhd"))
    seg = [p for p in files if p.stem.endswith(SEGMENTATION_SUFFIX)]
    if auto and seg:
        return {p.stem[: -len(SEGMENTATION_SUFFIX)]: p for p in seg}
    return {p.stem: p for p in files if not p.stem.endswith(SEGMENTATION_SUFFIX)}


def _eval_pair(args):
    case, auto, manual, label = args
    try:
        return case, evaluate_segmentation(load_volume(auto), load_volume(manual), label), ""
    except FemcamError as exc:
        return case, None, f"error: {exc}"


def cmd_eval(args):
    config = resolve_config(args)
    auto, manual = _case_ids(args.auto, True), _case_ids(args.manual, False)
    rows, notes, jobs = {}, {}, []
    for case in sorted(set(auto) | set(manual)):
        if case not in auto or case not in manual:
            rows[case] = None
            notes[case] = "unpaired: no " + ("automated" if case not in auto else "manual") + " volume"
            log.warning("%s: %s", case, notes[case])
        else:
            jobs.append((case, auto[case], manual[case], args.label))
    failed = False
    for case, rep, note in _map(_eval_pair, jobs, args.workers):
        rows[case] = rep
        if note:
            notes[case] = note
            failed = True
            log.warning("%s: %s", case, note)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = write_metric_csv(out / "segmentation_metrics.csv", rows, notes)
    print(path.read_text(), end="")
    return EXIT_INPUT if failed else EXIT_OK


# -- cohort ------------------------------------------------------------------------------

COHORT_METRICS = (("head_volume_cm3", "Head volume (cm^3)"), ("volume_mm3", "Volume (mm^3)"),
                  ("surface_area_mm2", "Surface area (mm^2)"), ("max_height_mm", "Maximum height (mm)"),
                  ("avg_height_mm", "Average height (mm)"))
CORRELATION_PAIRS = ("surface_area_mm2", "max_height_mm", "avg_height_mm")


def read_groups(path):
    """``case group`` per line (whitespace or comma separated); ``#`` comments."""
    groups = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise InputError(f"{path}:{lineno}: expected 'case group'")
        groups[parts[0]] = parts[1]
    return groups


def load_reports(directory, force=False):
    reports = {}
    for p in sorted(Path(directory).glob(f"*{REPORT_SUFFIX}")):
        try:
            rep = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{p}: not a report ({exc})") from None
        reports[rep["case_id"]] = rep
    versions = {r.get("version") for r in reports.values()}
    if len(versions) > 1 and not force:
        raise InputError(f"reports come from several versions {sorted(map(str, versions))}; "
                         "use --force to combine them")
    return reports


def _metric(rep, key):
    return float(rep["head"]["volume_cm3"]) if key == "head_volume_cm3" else float(rep["cam"][key])


def _fmt(v):
    return "" if v is None else f"{v:.6g}"


def cohort_tables(reports, groups):
    """Build the summary rows, per-case classes, quartiles and correlations."""
    members = {}
    for case in sorted(reports):
        g = groups.get(case)
        if g is None:
            log.warning("%s: no group assigned, skipped", case)
            continue
        members.setdefault(g, []).append(case)
    names = sorted(members)
    if not names:
        raise InputError("no report belongs to a listed group")
    summary = []
    for key, label in COHORT_METRICS:
        row = {"metric": label}
        samples = []
        for g in names:
            v = np.array([_metric(reports[c], key) for c in members[g]])
            row[f"{g}_n"] = len(v)
            row[f"{g}_mean"] = float(v.mean())
            row[f"{g}_sd"] = float(v.std(ddof=1)) if len(v) > 1 else 0.0
            samples.append(Sample(v, g))
        if len(names) == 2:
            try:
                res = select_test_and_compare(*samples)
                row.update(test=res.test_name, statistic=res.statistic, df=res.df, p_value=res.p_value,
                           summary=res.summary())
            except FemcamError as exc:
                row.update(test="", statistic=None, df=None, p_value=None, summary=f"n/a ({exc})")
        summary.append(row)
    cases, quartiles, correlations, warnings = [], [], [], []
    for g in names:
        vols = np.array([_metric(reports[c], "volume_mm3") for c in members[g]])
        q = None
        if len(vols) >= 4:
            q = cohort_quartiles(vols)
            quartiles.append({"group": g, "q1": q.q1, "q2": q.q2, "q3": q.q3})
        else:
            warnings.append(f"group {g}: {len(vols)} cases, quartiles skipped")
        for c, v in zip(members[g], vols):
            cases.append({"case": c, "group": g, "volume_mm3": float(v),
                          "severity": classify_cam(v, q) if q else ""})
        for other in CORRELATION_PAIRS:
            y = np.array([_metric(reports[c], other) for c in members[g]])
            try:
                r = pearson(vols, y)
                correlations.append({"group": g, "x": "volume_mm3", "y": other, "r": r.statistic,
                                     "p_value": r.p_value})
            except FemcamError as exc:
                warnings.append(f"group {g}: no correlation volume~{other} ({exc})")
    return names, summary, cases, quartiles, correlations, warnings


def _write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) if isinstance(r.get(c), float) or r.get(c) is None
                        else r.get(c) for c in columns])


def render_table(names, summary):
    """Plain-text table: metric, ``mean +- sd`` per group, and the test outcome."""
    head = ["Metric"] + [f"{g} (n={summary[0][f'{g}_n']})" for g in names]
    if len(names) == 2:
        head.append("Statistical significance")
    rows = []
    for r in summary:
        line = [r["metric"]] + [f"{r[f'{g}_mean']:.2f} ± {r[f'{g}_sd']:.2f}" for g in names]
        if len(names) == 2:
            line.append(r.get("summary", ""))
        rows.append(line)
    widths = [max(len(x[i]) for x in [head] + rows) for i in range(len(head))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return "\n".join(fmt.format(*x).rstrip() for x in [head] + rows) + "\n"


def cmd_cohort(args):
    config = resolve_config(args)
    reports = load_reports(args.reports, args.force)
    if not reports:
        raise InputError(f"no *{REPORT_SUFFIX} files in {args.reports}")
    groups = read_groups(args.groups)
    names, summary, cases, quartiles, correlations, warnings = cohort_tables(reports, groups)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["metric"] + [f"{g}_{k}" for g in names for k in ("n", "mean", "sd")]
    if len(names) == 2:
        cols += ["test", "statistic", "df", "p_value"]
    _write_csv(out / "cohort_table.csv", summary, cols)
    _write_csv(out / "cohort_cases.csv", cases, ["case", "group", "volume_mm3", "severity"])
    _write_csv(out / "cohort_quartiles.csv", quartiles, ["group", "q1", "q2", "q3"])
    _write_csv(out / "cohort_correlations.csv", correlations, ["group", "x", "y", "r", "p_value"])
    text = render_table(names, summary)
    (out / "cohort_table.txt").write_text(text)
    print(text, end="")
    for w in warnings:
        log.warning(w)
    return EXIT_OK


# -- entry point ----------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="femcam", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"femcam {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate synthetic phantoms or a training cohort")
    ssub = s.add_subparsers(dest="kind", required=True)
    c = ssub.add_parser("cohort", help="corresponded cam-free training shapes")
    c.add_argument("--n", type=int, default=40)
    c.add_argument("--noise", type=float, default=0.05, help="vertex noise SD, mm")
    _add_config_flags(c)
    c.set_defaults(func=cmd_synth_cohort)
    ph = ssub.add_parser("phantom", help="one label mask, optionally with a cam bump")
    ph.add_argument("--case-id", default="phantom")
    ph.add_argument("--spec", help="phantom spec file (key = value)")
    ph.add_argument("--female", action="store_true", help="female-scale default spec")
    ph.add_argument("--bump", help="bump spec file (key = value)")
    ph.add_argument("--bump-peak", type=float)
    ph.add_argument("--bump-width", type=float, default=8.0)
    ph.add_argument("--bump-center", type=int)
    _add_config_flags(ph)
    ph.set_defaults(func=cmd_synth_phantom)

    b = sub.add_parser("build-model", help="focused shape model from a synthetic cohort directory")
    b.add_argument("cohort")
    b.add_argument("--out", help="model file (default <output-dir>/model.fsm)")
    _add_config_flags(b)
    b.set_defaults(func=cmd_build_model)

    pl = sub.add_parser("pipeline", help="measure cam morphology on label masks")
    pl.add_argument("masks", nargs="+")
    pl.add_argument("--model", required=True)
    pl.add_argument("--case-id")
    pl.add_argument("--workers", type=int, default=1)
    _add_config_flags(pl)
    pl.set_defaults(func=cmd_pipeline)

    e = sub.add_parser("eval", help="segmentation agreement between paired volumes")
    e.add_argument("auto")
    e.add_argument("manual")
    e.add_argument("--label", type=int, default=FEMUR)
    e.add_argument("--workers", type=int, default=1)
    _add_config_flags(e)
    e.set_defaults(func=cmd_eval)

    co = sub.add_parser("cohort", help="group statistics over pipeline reports")
    co.add_argument("reports")
    co.add_argument("--groups", required=True, help="file of 'case group' lines")
    co.add_argument("--force", action="store_true", help="combine reports from different versions")
    _add_config_flags(co)
    co.set_defaults(func=cmd_cohort)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, FemcamError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
