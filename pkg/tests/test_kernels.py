"""Closest-point kernels: both backends against a brute-force scan and each other."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from femcam import _pykernels, kernels
from femcam.kernels import TriangleBVH, closest_points_brute

from conftest import BACKENDS, icosphere


def _random_soup(rng, n):
    base = rng.normal(scale=5, size=(n, 1, 3))
    return base + rng.normal(scale=1.5, size=(n, 3, 3))


def _numpy_closest(p, tri):
    """Independent oracle: minimise over a dense barycentric grid, then polish."""
    a, b, c = tri
    best, pt = np.inf, None
    for u in np.linspace(0, 1, 201):
        v = np.linspace(0, 1 - u, max(2, int(201 * (1 - u))))
        q = a + u * (b - a)[None] + v[:, None] * (c - a)[None]
        d = ((q - p) ** 2).sum(1)
        k = d.argmin()
        if d[k] < best:
            best, pt = d[k], q[k]
    return best, pt


def test_brute_against_sampling_oracle(backend):
    rng = np.random.default_rng(0)
    tris = _random_soup(rng, 3)
    q = rng.normal(scale=6, size=(10, 3))
    d2, tri, _, pt = closest_points_brute(q, tris, backend)
    for i in range(len(q)):
        od2, _ = _numpy_closest(q[i], tris[tri[i]])
        assert d2[i] <= od2 + 1e-12
        assert d2[i] == pytest.approx(od2, abs=2e-3)
        assert np.sum((pt[i] - q[i]) ** 2) == pytest.approx(d2[i], rel=1e-12, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 500), st.integers(1, 200), st.integers(0, 2 ** 32 - 1))
def test_bvh_equals_brute(n_tris, n_q, seed):
    rng = np.random.default_rng(seed)
    tris = _random_soup(rng, n_tris)
    q = rng.normal(scale=8, size=(n_q, 3))
    ref = closest_points_brute(q, tris, "python")
    for backend in BACKENDS:
        got = TriangleBVH(tris, backend=backend).query(q)
        for r, g in zip(ref, got):
            assert np.array_equal(r, g), backend


def test_backends_bit_identical_on_mesh():
    if len(BACKENDS) < 2:
        pytest.skip("compiled kernels unavailable")
    s = icosphere(10.0, 3)
    q = np.random.default_rng(3).normal(scale=10, size=(2000, 3))
    q[:100] = s.vertices[:100]                 # exact vertex hits
    a = TriangleBVH(s.corners(), "python").query(q)
    b = TriangleBVH(s.corners(), "cython").query(q)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_ties_go_to_lowest_triangle(backend):
    tri = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0]]], float)
    tris = np.concatenate([tri, tri, tri + [0, 0, 2], tri])
    _, t, _, _ = TriangleBVH(tris, backend).query([[0.2, 0.2, 1.0]])
    assert t[0] == 0


def test_region_codes(backend):
    tri = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0]]], float)
    q = np.array([[-1, -1, 0], [2, -0.5, 0], [-0.5, 2, 0],      # vertices A, B, C
                  [0.5, -1, 0], [1, 1, 0], [-1, 0.5, 0],         # edges AB, BC, CA
                  [0.2, 0.2, 3]])                                # face
    _, _, reg, _ = closest_points_brute(q, tri, backend)
    assert reg.tolist() == [0, 1, 2, 3, 4, 5, 6]


def test_hint_does_not_change_results():
    if kernels._ckernels is None:
        pytest.skip("compiled kernels unavailable")
    s = icosphere(10.0, 3)
    bvh = TriangleBVH(s.corners(), "cython")
    rng = np.random.default_rng(9)
    q = rng.normal(scale=10, size=(3000, 3))
    plain = bvh.query(q)
    for hint in (plain[1], rng.integers(-1, len(s.triangles), len(q)), np.full(len(q), -1)):
        got = bvh.query(q, hint)
        for x, y in zip(plain, got):
            assert np.array_equal(x, y)


def test_python_backend_selection():
    assert kernels.BACKEND in ("python", "cython")
    assert TriangleBVH(np.zeros((1, 3, 3)) + np.eye(3), "python").backend == "python"
    assert _pykernels.closest_on_triangles is not None
