"""Time the closest-point kernels on both backends.

Run from the repository root::

    python3 benchmarks/bench_kernels.py [--resolution 2.0] [--queries 20000]

Queries are template vertices jittered by up to 2 mm, the typical load of one
fitting iteration. Both backends must return identical answers; the script
checks that before printing timings.
"""
import argparse
import time

import numpy as np

from femcam import kernels, synth


def _best_of(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--resolution", type=float, default=2.0)
    ap.add_argument("--queries", type=int, default=20000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)
    if kernels.BACKEND != "cython":
        raise SystemExit("compiled kernels not importable; build with pip install -e .")

    mesh = synth.make_template(resolution=args.resolution)
    tris = mesh.vertices[mesh.triangles]
    rng = np.random.default_rng(0)
    pick = rng.integers(0, mesh.n_vertices, args.queries)
    queries = mesh.vertices[pick] + rng.uniform(-2, 2, (args.queries, 3))
    print(f"{len(tris)} triangles, {len(queries)} queries")

    timings = {}
    results = {}
    for backend in ("cython", "python"):
        t_build, bvh = _best_of(lambda: kernels.TriangleBVH(tris, backend), args.repeats)
        t_query, res = _best_of(lambda: bvh.query(queries), args.repeats)
        timings[backend] = (t_build, t_query)
        results[backend] = res
        print(f"{backend:>7}: build {t_build * 1e3:8.2f} ms  query {t_query * 1e3:9.2f} ms")
    for a, b in zip(results["cython"], results["python"]):
        if not np.array_equal(a, b):
            raise SystemExit("backends disagree")
    speedup = timings["python"][1] / timings["cython"][1]
    print(f"query speedup {speedup:.1f}x, results identical")


if __name__ == "__main__":
    main()
