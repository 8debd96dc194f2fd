"""Pure numpy closest-point kernels (fallback for ``_ckernels``).

The per-triangle routine repeats the compiled kernel's arithmetic operation by
operation, so results agree bit for bit. Instead of walking the BVH one query
at a time, candidate triangles are pruned with a centroid k-d tree: a triangle
whose centroid is farther than ``d0 + r_max`` from the query cannot beat the
upper bound ``d0``.
"""
import numpy as np
from scipy.spatial import cKDTree

_CHUNK = 20000


def closest_on_triangles(p, a, b, c):
    """Closest points from ``p[i]`` to triangle ``(a[i], b[i], c[i])``.

    Returns ``(point, region)`` with region codes 0/1/2 (vertices A/B/C),
    3/4/5 (edges AB/BC/CA) and 6 (interior).
    """
    px, py, pz = p[:, 0], p[:, 1], p[:, 2]
    a0, a1, a2 = a[:, 0], a[:, 1], a[:, 2]
    b0, b1, b2 = b[:, 0], b[:, 1], b[:, 2]
    c0, c1, c2 = c[:, 0], c[:, 1], c[:, 2]
    ab0, ab1, ab2 = b0 - a0, b1 - a1, b2 - a2
    ac0, ac1, ac2 = c0 - a0, c1 - a1, c2 - a2
    ap0, ap1, ap2 = px - a0, py - a1, pz - a2
    d1 = ab0 * ap0 + ab1 * ap1 + ab2 * ap2
    d2 = ac0 * ap0 + ac1 * ap1 + ac2 * ap2
    bp0, bp1, bp2 = px - b0, py - b1, pz - b2
    d3 = ab0 * bp0 + ab1 * bp1 + ab2 * bp2
    d4 = ac0 * bp0 + ac1 * bp1 + ac2 * bp2
    cp0, cp1, cp2 = px - c0, py - c1, pz - c2
    d5 = ab0 * cp0 + ab1 * cp1 + ab2 * cp2
    d6 = ac0 * cp0 + ac1 * cp1 + ac2 * cp2
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    n = len(p)
    out = np.empty((n, 3))
    region = np.full(n, 6, dtype=np.int8)
    done = np.zeros(n, dtype=bool)

    def take(mask, code):
        mask &= ~done
        region[mask] = code
        done[mask] = True
        return mask

    with np.errstate(divide="ignore", invalid="ignore"):
        m = take((d1 <= 0.0) & (d2 <= 0.0), 0)
        out[m] = a[m]
        m = take((d3 >= 0.0) & (d4 <= d3), 1)
        out[m] = b[m]
        m = take((vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0), 3)
        v = d1[m] / (d1[m] - d3[m])
        out[m, 0] = a0[m] + v * ab0[m]
        out[m, 1] = a1[m] + v * ab1[m]
        out[m, 2] = a2[m] + v * ab2[m]
        m = take((d6 >= 0.0) & (d5 <= d6), 2)
        out[m] = c[m]
        m = take((vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0), 5)
        w = d2[m] / (d2[m] - d6[m])
        out[m, 0] = a0[m] + w * ac0[m]
        out[m, 1] = a1[m] + w * ac1[m]
        out[m, 2] = a2[m] + w * ac2[m]
        m = take((va <= 0.0) & ((d4 - d3) >= 0.0) & ((d5 - d6) >= 0.0), 4)
        e1, e2 = d4[m] - d3[m], d5[m] - d6[m]
        w = e1 / (e1 + e2)
        out[m, 0] = b0[m] + w * (c0[m] - b0[m])
        out[m, 1] = b1[m] + w * (c1[m] - b1[m])
        out[m, 2] = b2[m] + w * (c2[m] - b2[m])
        m = ~done
        denom = 1.0 / (va[m] + vb[m] + vc[m])
        v = vb[m] * denom
        w = vc[m] * denom
        out[m, 0] = a0[m] + ab0[m] * v + ac0[m] * w
        out[m, 1] = a1[m] + ab1[m] * v + ac1[m] * w
        out[m, 2] = a2[m] + ab2[m] * v + ac2[m] * w
    return out, region


def _sqdist(p, q):
    t0 = p[:, 0] - q[:, 0]
    t1 = p[:, 1] - q[:, 1]
    t2 = p[:, 2] - q[:, 2]
    return t0 * t0 + t1 * t1 + t2 * t2


def _reduce(qidx, tidx, d2, reg, pts, nq):
    # lowest distance per query, ties to lowest triangle index
    order = np.lexsort((tidx, d2, qidx))
    qs = qidx[order]
    first = np.ones(len(qs), dtype=bool)
    first[1:] = qs[1:] != qs[:-1]
    sel = order[first]
    out_d2 = np.full(nq, np.inf)
    out_t = np.full(nq, -1, dtype=np.int64)
    out_r = np.full(nq, -1, dtype=np.int8)
    out_p = np.full((nq, 3), np.nan)
    q = qidx[sel]
    out_d2[q] = d2[sel]
    out_t[q] = tidx[sel]
    out_r[q] = reg[sel]
    out_p[q] = pts[sel]
    return out_d2, out_t, out_r, out_p


class CentroidPruner:
    """Exact closest-point search over a triangle soup using centroid pruning."""

    def __init__(self, tris):
        self.tris = np.ascontiguousarray(tris, dtype=np.float64)
        cent = self.tris.mean(axis=1)
        self.tree = cKDTree(cent)
        self.r_max = float(np.sqrt(((self.tris - cent[:, None, :]) ** 2).sum(-1)).max()) if len(cent) else 0.0

    def query(self, queries):
        queries = np.ascontiguousarray(queries, dtype=np.float64)
        nq = len(queries)
        parts = [self._query_chunk(queries[s:s + _CHUNK]) for s in range(0, nq, _CHUNK)]
        if not parts:
            return (np.empty(0), np.empty(0, np.int64), np.empty(0, np.int8), np.empty((0, 3)))
        return tuple(np.concatenate(x) for x in zip(*parts))

    def _query_chunk(self, q):
        tris = self.tris
        _, near = self.tree.query(q)
        pts, _ = closest_on_triangles(q, tris[near, 0], tris[near, 1], tris[near, 2])
        bound = np.sqrt(_sqdist(q, pts)) * (1 + 1e-12) + self.r_max + 1e-9
        cand = self.tree.query_ball_point(q, bound)
        counts = np.fromiter((len(c) for c in cand), dtype=np.int64, count=len(cand))
        qidx = np.repeat(np.arange(len(q)), counts)
        tidx = np.fromiter((t for c in cand for t in c), dtype=np.int64, count=int(counts.sum()))
        pts, reg = closest_on_triangles(q[qidx], tris[tidx, 0], tris[tidx, 1], tris[tidx, 2])
        d2 = _sqdist(q[qidx], pts)
        return _reduce(qidx, tidx, d2, reg, pts, len(q))


def closest_points_brute(queries, tris):
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    tris = np.asarray(tris, dtype=np.float64)
    nq, nt = len(queries), len(tris)
    qidx = np.repeat(np.arange(nq), nt)
    tidx = np.tile(np.arange(nt), nq)
    pts, reg = closest_on_triangles(queries[qidx], tris[tidx, 0], tris[tidx, 1], tris[tidx, 2])
    d2 = _sqdist(queries[qidx], pts)
    return _reduce(qidx, tidx, d2, reg, pts, nq)
