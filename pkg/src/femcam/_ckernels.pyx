# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled closest-point kernels.

Arithmetic is written in the same order as ``_pykernels`` so both backends
return bit-identical results.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

DEF STACK_SIZE = 128


cdef inline double _box_d2(const double* lo, const double* hi,
                           double px, double py, double pz) noexcept nogil:
    cdef double d = 0.0, t
    if px < lo[0]:
        t = lo[0] - px
        d += t * t
    elif px > hi[0]:
        t = px - hi[0]
        d += t * t
    if py < lo[1]:
        t = lo[1] - py
        d += t * t
    elif py > hi[1]:
        t = py - hi[1]
        d += t * t
    if pz < lo[2]:
        t = lo[2] - pz
        d += t * t
    elif pz > hi[2]:
        t = pz - hi[2]
        d += t * t
    return d


cdef inline int _closest_on_triangle(const double* a, const double* b, const double* c,
                                     double px, double py, double pz,
                                     double* out) noexcept nogil:
    # Returns region: 0/1/2 vertex A/B/C, 3 edge AB, 4 edge BC, 5 edge CA, 6 face.
    cdef double ab0 = b[0] - a[0], ab1 = b[1] - a[1], ab2 = b[2] - a[2]
    cdef double ac0 = c[0] - a[0], ac1 = c[1] - a[1], ac2 = c[2] - a[2]
    cdef double ap0 = px - a[0], ap1 = py - a[1], ap2 = pz - a[2]
    cdef double d1 = ab0 * ap0 + ab1 * ap1 + ab2 * ap2
    cdef double d2 = ac0 * ap0 + ac1 * ap1 + ac2 * ap2
    cdef double bp0, bp1, bp2, cp0, cp1, cp2, d3, d4, d5, d6, va, vb, vc, v, w, denom
    if d1 <= 0.0 and d2 <= 0.0:
        out[0] = a[0]; out[1] = a[1]; out[2] = a[2]
        return 0
    bp0 = px - b[0]; bp1 = py - b[1]; bp2 = pz - b[2]
    d3 = ab0 * bp0 + ab1 * bp1 + ab2 * bp2
    d4 = ac0 * bp0 + ac1 * bp1 + ac2 * bp2
    if d3 >= 0.0 and d4 <= d3:
        out[0] = b[0]; out[1] = b[1]; out[2] = b[2]
        return 1
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        out[0] = a[0] + v * ab0; out[1] = a[1] + v * ab1; out[2] = a[2] + v * ab2
        return 3
    cp0 = px - c[0]; cp1 = py - c[1]; cp2 = pz - c[2]
    d5 = ab0 * cp0 + ab1 * cp1 + ab2 * cp2
    d6 = ac0 * cp0 + ac1 * cp1 + ac2 * cp2
    if d6 >= 0.0 and d5 <= d6:
        out[0] = c[0]; out[1] = c[1]; out[2] = c[2]
        return 2
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        out[0] = a[0] + w * ac0; out[1] = a[1] + w * ac1; out[2] = a[2] + w * ac2
        return 5
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out[0] = b[0] + w * (c[0] - b[0])
        out[1] = b[1] + w * (c[1] - b[1])
        out[2] = b[2] + w * (c[2] - b[2])
        return 4
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    out[0] = a[0] + ab0 * v + ac0 * w
    out[1] = a[1] + ab1 * v + ac1 * w
    out[2] = a[2] + ab2 * v + ac2 * w
    return 6


def closest_points_bvh(const double[:, ::1] queries,
                       const double[:, :, ::1] tris,
                       const long[::1] tri_ids,
                       const double[:, ::1] node_lo,
                       const double[:, ::1] node_hi,
                       long n_leaves, long leaf_size,
                       const long[::1] hint_pos=None):
    """Exact nearest point on a triangle set for each query.

    ``tris`` is in BVH (leaf) order and ``tri_ids`` maps back to the original
    triangle index. The tree is an implicit complete binary heap whose leaves
    ``n_leaves - 1 .. 2 * n_leaves - 2`` each own ``leaf_size`` consecutive
    triangles. Ties go to the smallest original triangle index.

    ``hint_pos`` optionally gives, per query, a BVH-order triangle position
    (or -1) whose distance seeds the bound; the answer does not change, only
    how much of the tree is visited.
    """
    cdef Py_ssize_t nq = queries.shape[0], nt = tris.shape[0]
    d2_out = np.empty(nq, dtype=np.float64)
    tri_out = np.empty(nq, dtype=np.int64)
    reg_out = np.empty(nq, dtype=np.int8)
    pt_out = np.empty((nq, 3), dtype=np.float64)
    cdef double[::1] d2v = d2_out
    cdef long[::1] triv = tri_out
    cdef signed char[::1] regv = reg_out
    cdef double[:, ::1] ptv = pt_out
    cdef long stack[STACK_SIZE]
    cdef long sp, node, left, right, first, k, start, stop, tid, best_t, n_internal
    cdef int reg, best_r
    cdef double px, py, pz, best, d, dl, dr, t0, t1, t2
    cdef double tmp[3]
    cdef double best_p[3]
    cdef Py_ssize_t q
    cdef bint hinted = hint_pos is not None
    n_internal = n_leaves - 1
    with nogil:
        for q in range(nq):
            px = queries[q, 0]; py = queries[q, 1]; pz = queries[q, 2]
            best = INFINITY
            best_t = -1
            best_r = -1
            if hinted and hint_pos[q] >= 0:
                k = hint_pos[q]
                best_r = _closest_on_triangle(&tris[k, 0, 0], &tris[k, 1, 0], &tris[k, 2, 0],
                                              px, py, pz, best_p)
                t0 = px - best_p[0]; t1 = py - best_p[1]; t2 = pz - best_p[2]
                best = t0 * t0 + t1 * t1 + t2 * t2
                best_t = tri_ids[k]
            sp = 0
            stack[sp] = 0
            sp += 1
            while sp > 0:
                sp -= 1
                node = stack[sp]
                if _box_d2(&node_lo[node, 0], &node_hi[node, 0], px, py, pz) > best:
                    continue
                if node >= n_internal:
                    start = (node - n_internal) * leaf_size
                    stop = start + leaf_size
                    if stop > nt:
                        stop = nt
                    for k in range(start, stop):
                        reg = _closest_on_triangle(&tris[k, 0, 0], &tris[k, 1, 0], &tris[k, 2, 0],
                                                   px, py, pz, tmp)
                        t0 = px - tmp[0]; t1 = py - tmp[1]; t2 = pz - tmp[2]
                        d = t0 * t0 + t1 * t1 + t2 * t2
                        tid = tri_ids[k]
                        if d < best or (d == best and tid < best_t):
                            best = d
                            best_t = tid
                            best_r = reg
                            best_p[0] = tmp[0]; best_p[1] = tmp[1]; best_p[2] = tmp[2]
                else:
                    left = 2 * node + 1
                    right = left + 1
                    dl = _box_d2(&node_lo[left, 0], &node_hi[left, 0], px, py, pz)
                    dr = _box_d2(&node_lo[right, 0], &node_hi[right, 0], px, py, pz)
                    # push the farther child first so the nearer one is popped next
                    if dl <= dr:
                        if dr <= best:
                            stack[sp] = right
                            sp += 1
                        if dl <= best:
                            stack[sp] = left
                            sp += 1
                    else:
                        if dl <= best:
                            stack[sp] = left
                            sp += 1
                        if dr <= best:
                            stack[sp] = right
                            sp += 1
            d2v[q] = best
            triv[q] = best_t
            regv[q] = best_r
            ptv[q, 0] = best_p[0]; ptv[q, 1] = best_p[1]; ptv[q, 2] = best_p[2]
    return d2_out, tri_out, reg_out, pt_out


def closest_points_brute(const double[:, ::1] queries, const double[:, :, ::1] tris):
    """O(Q*T) reference scan with the same tie rule as the BVH query."""
    cdef Py_ssize_t nq = queries.shape[0], nt = tris.shape[0], q, k
    d2_out = np.empty(nq, dtype=np.float64)
    tri_out = np.empty(nq, dtype=np.int64)
    reg_out = np.empty(nq, dtype=np.int8)
    pt_out = np.empty((nq, 3), dtype=np.float64)
    cdef double[::1] d2v = d2_out
    cdef long[::1] triv = tri_out
    cdef signed char[::1] regv = reg_out
    cdef double[:, ::1] ptv = pt_out
    cdef double px, py, pz, best, d, t0, t1, t2
    cdef double tmp[3]
    cdef double best_p[3]
    cdef int reg, best_r
    cdef long best_t
    with nogil:
        for q in range(nq):
            px = queries[q, 0]; py = queries[q, 1]; pz = queries[q, 2]
            best = INFINITY
            best_t = -1
            best_r = -1
            for k in range(nt):
                reg = _closest_on_triangle(&tris[k, 0, 0], &tris[k, 1, 0], &tris[k, 2, 0],
                                           px, py, pz, tmp)
                t0 = px - tmp[0]; t1 = py - tmp[1]; t2 = pz - tmp[2]
                d = t0 * t0 + t1 * t1 + t2 * t2
                if d < best:
                    best = d
                    best_t = k
                    best_r = reg
                    best_p[0] = tmp[0]; best_p[1] = tmp[1]; best_p[2] = tmp[2]
            d2v[q] = best
            triv[q] = best_t
            regv[q] = best_r
            ptv[q, 0] = best_p[0]; ptv[q, 1] = best_p[1]; ptv[q, 2] = best_p[2]
    return d2_out, tri_out, reg_out, pt_out
