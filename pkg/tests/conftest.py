import numpy as np
import pytest

from femcam import kernels, synth
from femcam.meshes import TriangleMesh
from femcam.shapemodel import build_model, procrustes_align

MODEL_RES = 2.0

BACKENDS = ["python"] + (["cython"] if kernels._ckernels is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def unit_cube():
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                  [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float)
    t = np.array([[0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7], [0, 1, 5], [0, 5, 4],
                  [1, 2, 6], [1, 6, 5], [2, 3, 7], [2, 7, 6], [3, 0, 4], [3, 4, 7]])
    return TriangleMesh(v, t)


def icosphere(radius=1.0, subdivisions=3, center=(0.0, 0.0, 0.0)):
    phi = (1 + 5 ** 0.5) / 2
    v = [[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0], [0, -1, phi], [0, 1, phi],
         [0, -1, -phi], [0, 1, -phi], [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    v = [np.array(p, float) / np.linalg.norm(p) for p in v]
    for _ in range(subdivisions):
        cache, nf = {}, []

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = v[i] + v[j]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        f = nf
    return TriangleMesh(np.array(v) * radius + np.asarray(center), np.array(f))


def ball_mask(radius, spacing=0.5, center=None, pad=3):
    n = int(np.ceil(radius / spacing)) + pad
    ax = (np.arange(-n, n + 1) * spacing)
    c = np.zeros(3) if center is None else np.asarray(center)
    x, y, z = np.meshgrid(ax - c[0], ax - c[1], ax - c[2], indexing="ij")
    return (x * x + y * y + z * z) <= radius * radius, (float(ax[0]),) * 3


@pytest.fixture(scope="session")
def cohort():
    shapes, specs = synth.make_cohort(40, seed=1, resolution=MODEL_RES)
    return shapes, specs


@pytest.fixture(scope="session")
def model(cohort):
    shapes, _ = cohort
    w = synth.focus_weights(MODEL_RES)
    aligned, _ = procrustes_align(shapes, w)
    return build_model(aligned, w, topology=synth.topology(MODEL_RES),
                       head_center=synth.head_center(resolution=MODEL_RES),
                       head_radius=synth.PhantomSpec().head_radius)


@pytest.fixture(scope="session")
def roi():
    return synth.cam_roi(MODEL_RES)


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    """Synthetic cohort, model and two phantoms (cam-free and cam) built through the CLI."""
    from femcam.cli import main

    root = tmp_path_factory.mktemp("workspace")
    assert main(["synth", "cohort", "--n", "40", "--seed", "1", "--output-dir", str(root / "cohort")]) == 0
    assert main(["build-model", str(root / "cohort"), "--output-dir", str(root / "model")]) == 0
    assert main(["synth", "phantom", "--case-id", "healthy",
                 "--output-dir", str(root / "data")]) == 0
    assert main(["synth", "phantom", "--case-id", "cam", "--bump-peak", "3.89", "--bump-width", "7",
                 "--output-dir", str(root / "data")]) == 0
    return root


def run_pipeline(ws, case, out, *extra):
    from femcam.cli import main

    return main(["pipeline", str(ws / "data" / f"{case}.mhd"), "--model", str(ws / "model" / "model.fsm"),
                 "--output-dir", str(out), *extra])


@pytest.fixture(scope="session")
def pipeline_runs(workspace, tmp_path_factory):
    """Both phantoms through the pipeline into ``a``, the cam phantom again into ``b``."""
    out = tmp_path_factory.mktemp("runs")
    codes = {case: run_pipeline(workspace, case, out / "a") for case in ("healthy", "cam")}
    codes["repeat"] = run_pipeline(workspace, "cam", out / "b")
    return out, codes


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
