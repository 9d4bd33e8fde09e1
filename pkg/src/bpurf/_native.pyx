# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: point-in-polygon, R-tree traversal, DTW, extraction loops.

Semantics (tie-breaks, boundary inclusion, empty conventions) must stay in
lockstep with ``_purepy.py``; the test suite cross-checks the two backends.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, fabs

cnp.import_array()

BACKEND = "native"


cdef inline bint _pip(double x, double y, const double[::1] rx, const double[::1] ry) noexcept nogil:
    cdef Py_ssize_t n = rx.shape[0]
    cdef Py_ssize_t i, j
    cdef double x1, y1, x2, y2, cross, xint, lo, hi
    cdef bint inside = False
    j = n - 1
    for i in range(n):
        x1 = rx[j]; y1 = ry[j]
        x2 = rx[i]; y2 = ry[i]
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if cross == 0.0:
            lo = x1 if x1 < x2 else x2
            hi = x1 if x1 > x2 else x2
            if lo <= x <= hi:
                lo = y1 if y1 < y2 else y2
                hi = y1 if y1 > y2 else y2
                if lo <= y <= hi:
                    return True
        if (y1 > y) != (y2 > y):
            xint = x1 + (x2 - x1) * (y - y1) / (y2 - y1)
            if x < xint:
                inside = not inside
        j = i
    return inside


def point_in_polygon(double x, double y, rx, ry):
    cdef double[::1] rxv = np.ascontiguousarray(rx, dtype=np.float64)
    cdef double[::1] ryv = np.ascontiguousarray(ry, dtype=np.float64)
    return bool(_pip(x, y, rxv, ryv))


def points_in_polygon(xs, ys, rx, ry):
    cdef double[::1] xv = np.ascontiguousarray(xs, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(ys, dtype=np.float64)
    cdef double[::1] rxv = np.ascontiguousarray(rx, dtype=np.float64)
    cdef double[::1] ryv = np.ascontiguousarray(ry, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    out = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] ov = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            ov[i] = _pip(xv[i], yv[i], rxv, ryv)
    return out.view(np.bool_)


def dtw_distance(a, b):
    cdef double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = av.shape[0]
    cdef Py_ssize_t m = bv.shape[0]
    cdef Py_ssize_t i, j
    cdef double acc = 0.0
    if n == 0 and m == 0:
        return 0.0
    if n == 0:
        for j in range(m):
            acc += fabs(bv[j])
        return acc
    if m == 0:
        for i in range(n):
            acc += fabs(av[i])
        return acc
    prev_arr = np.full(m, np.inf)
    cur_arr = np.empty(m)
    cdef double[::1] prev = prev_arr
    cdef double[::1] cur = cur_arr
    cdef double[::1] tmp
    cdef double ai, best
    with nogil:
        for i in range(n):
            ai = av[i]
            if i == 0:
                cur[0] = fabs(ai - bv[0])
            else:
                cur[0] = fabs(ai - bv[0]) + prev[0]
            for j in range(1, m):
                best = cur[j - 1]
                if prev[j] < best:
                    best = prev[j]
                if prev[j - 1] < best:
                    best = prev[j - 1]
                cur[j] = fabs(ai - bv[j]) + best
            tmp = prev; prev = cur; cur = tmp
    return prev[m - 1]


def rtree_query(tree, rx, ry):
    """Entry indices whose point lies in the polygon; unsorted tree order."""
    cdef double[::1] rxv = np.ascontiguousarray(rx, dtype=np.float64)
    cdef double[::1] ryv = np.ascontiguousarray(ry, dtype=np.float64)
    cdef double[::1] nminx = tree.node_minx
    cdef double[::1] nminy = tree.node_miny
    cdef double[::1] nmaxx = tree.node_maxx
    cdef double[::1] nmaxy = tree.node_maxy
    cdef cnp.int64_t[::1] nfirst = tree.node_first
    cdef cnp.int64_t[::1] ncount = tree.node_count
    cdef cnp.uint8_t[::1] nleaf = tree.node_leaf
    cdef double[::1] ex = tree.ex
    cdef double[::1] ey = tree.ey
    cdef Py_ssize_t n_nodes = nfirst.shape[0]
    cdef double qminx = INFINITY, qminy = INFINITY, qmaxx = -INFINITY, qmaxy = -INFINITY
    cdef Py_ssize_t i
    for i in range(rxv.shape[0]):
        if rxv[i] < qminx: qminx = rxv[i]
        if rxv[i] > qmaxx: qmaxx = rxv[i]
        if ryv[i] < qminy: qminy = ryv[i]
        if ryv[i] > qmaxy: qmaxy = ryv[i]

    stack_arr = np.empty(n_nodes + 1, dtype=np.int64)
    out_arr = np.empty(ex.shape[0], dtype=np.int64)
    cdef cnp.int64_t[::1] stack = stack_arr
    cdef cnp.int64_t[::1] out = out_arr
    cdef Py_ssize_t sp = 0, n_out = 0
    cdef cnp.int64_t nd, e, first, count
    cdef double x, y
    stack[0] = tree.root
    sp = 1
    with nogil:
        while sp > 0:
            sp -= 1
            nd = stack[sp]
            if nminx[nd] > qmaxx or nmaxx[nd] < qminx or nminy[nd] > qmaxy or nmaxy[nd] < qminy:
                continue
            first = nfirst[nd]
            count = ncount[nd]
            if nleaf[nd]:
                for e in range(first, first + count):
                    x = ex[e]; y = ey[e]
                    if qminx <= x <= qmaxx and qminy <= y <= qmaxy:
                        if _pip(x, y, rxv, ryv):
                            out[n_out] = e
                            n_out += 1
            else:
                for e in range(first, first + count):
                    stack[sp] = e
                    sp += 1
    return out_arr[:n_out].copy()


def rtree_query_rect(tree, double x0, double y0, double x1, double y1):
    """Entry indices inside the closed rectangle; contained subtrees are
    accepted wholesale without per-entry tests."""
    cdef double[::1] nminx = tree.node_minx
    cdef double[::1] nminy = tree.node_miny
    cdef double[::1] nmaxx = tree.node_maxx
    cdef double[::1] nmaxy = tree.node_maxy
    cdef cnp.int64_t[::1] nfirst = tree.node_first
    cdef cnp.int64_t[::1] ncount = tree.node_count
    cdef cnp.uint8_t[::1] nleaf = tree.node_leaf
    cdef double[::1] ex = tree.ex
    cdef double[::1] ey = tree.ey
    cdef Py_ssize_t n_nodes = nfirst.shape[0]

    stack_arr = np.empty(n_nodes + 1, dtype=np.int64)
    flag_arr = np.empty(n_nodes + 1, dtype=np.uint8)
    out_arr = np.empty(ex.shape[0], dtype=np.int64)
    cdef cnp.int64_t[::1] stack = stack_arr
    cdef cnp.uint8_t[::1] flag = flag_arr
    cdef cnp.int64_t[::1] out = out_arr
    cdef Py_ssize_t sp = 0, n_out = 0
    cdef cnp.int64_t nd, e, first, count
    cdef bint contained
    cdef double x, y
    stack[0] = tree.root
    flag[0] = 0
    sp = 1
    with nogil:
        while sp > 0:
            sp -= 1
            nd = stack[sp]
            contained = flag[sp]
            if not contained:
                if nminx[nd] > x1 or nmaxx[nd] < x0 or nminy[nd] > y1 or nmaxy[nd] < y0:
                    continue
                contained = (nminx[nd] >= x0 and nmaxx[nd] <= x1
                             and nminy[nd] >= y0 and nmaxy[nd] <= y1)
            first = nfirst[nd]
            count = ncount[nd]
            if nleaf[nd]:
                if contained:
                    for e in range(first, first + count):
                        out[n_out] = e
                        n_out += 1
                else:
                    for e in range(first, first + count):
                        x = ex[e]; y = ey[e]
                        if x0 <= x <= x1 and y0 <= y <= y1:
                            out[n_out] = e
                            n_out += 1
            else:
                for e in range(first, first + count):
                    stack[sp] = e
                    flag[sp] = contained
                    sp += 1
    return out_arr[:n_out].copy()


def rtree_knn(tree, double qx, double qy, Py_ssize_t k,
              int exclude_type=-1, long exclude_local=-1, double dmax=INFINITY):
    """Exact k nearest entries by (distance, type_index, local_id) order."""
    cdef double[::1] nminx = tree.node_minx
    cdef double[::1] nminy = tree.node_miny
    cdef double[::1] nmaxx = tree.node_maxx
    cdef double[::1] nmaxy = tree.node_maxy
    cdef cnp.int64_t[::1] nfirst = tree.node_first
    cdef cnp.int64_t[::1] ncount = tree.node_count
    cdef cnp.uint8_t[::1] nleaf = tree.node_leaf
    cdef double[::1] ex = tree.ex
    cdef double[::1] ey = tree.ey
    cdef cnp.uint16_t[::1] etype = tree.etype
    cdef cnp.uint32_t[::1] elocal = tree.elocal
    cdef Py_ssize_t n_nodes = nfirst.shape[0]
    if k <= 0:
        return np.empty(0, dtype=np.int64)

    cdef double dmax2 = dmax * dmax if dmax != INFINITY else INFINITY
    # bounded candidate set, worst tracked by (dist2, type, local)
    kd_arr = np.empty(k, dtype=np.float64)
    kt_arr = np.empty(k, dtype=np.int64)
    kl_arr = np.empty(k, dtype=np.int64)
    ki_arr = np.empty(k, dtype=np.int64)
    stack_arr = np.empty(n_nodes + 1, dtype=np.int64)
    cdef double[::1] kd = kd_arr
    cdef cnp.int64_t[::1] kt = kt_arr
    cdef cnp.int64_t[::1] kl = kl_arr
    cdef cnp.int64_t[::1] ki = ki_arr
    cdef cnp.int64_t[::1] stack = stack_arr
    cdef Py_ssize_t n_k = 0, worst = 0, sp = 0
    cdef cnp.int64_t nd, e, first, count
    cdef double dx, dy, d2, wd
    cdef long et, el
    cdef Py_ssize_t c

    stack[0] = tree.root
    sp = 1
    with nogil:
        while sp > 0:
            sp -= 1
            nd = stack[sp]
            # node min distance
            dx = 0.0
            if qx < nminx[nd]: dx = nminx[nd] - qx
            elif qx > nmaxx[nd]: dx = qx - nmaxx[nd]
            dy = 0.0
            if qy < nminy[nd]: dy = nminy[nd] - qy
            elif qy > nmaxy[nd]: dy = qy - nmaxy[nd]
            d2 = dx * dx + dy * dy
            if d2 > dmax2:
                continue
            if n_k == k and d2 > kd[worst]:
                continue
            first = nfirst[nd]
            count = ncount[nd]
            if nleaf[nd]:
                for e in range(first, first + count):
                    et = etype[e]
                    el = elocal[e]
                    if et == exclude_type and el == exclude_local:
                        continue
                    dx = ex[e] - qx
                    dy = ey[e] - qy
                    d2 = dx * dx + dy * dy
                    if d2 > dmax2:
                        continue
                    if n_k < k:
                        kd[n_k] = d2; kt[n_k] = et; kl[n_k] = el; ki[n_k] = e
                        n_k += 1
                        if n_k == k:
                            worst = _worst_idx(kd, kt, kl, n_k)
                    else:
                        wd = kd[worst]
                        if d2 < wd or (d2 == wd and (et < kt[worst] or (et == kt[worst] and el < kl[worst]))):
                            kd[worst] = d2; kt[worst] = et; kl[worst] = el; ki[worst] = e
                            worst = _worst_idx(kd, kt, kl, n_k)
            else:
                for e in range(first, first + count):
                    stack[sp] = e
                    sp += 1
    order = np.lexsort((kl_arr[:n_k], kt_arr[:n_k], kd_arr[:n_k]))
    return ki_arr[:n_k][order]


cdef Py_ssize_t _worst_idx(double[::1] kd, cnp.int64_t[::1] kt, cnp.int64_t[::1] kl, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, w = 0
    for i in range(1, n):
        if (kd[i] > kd[w]
                or (kd[i] == kd[w] and (kt[i] > kt[w]
                    or (kt[i] == kt[w] and kl[i] > kl[w])))):
            w = i
    return w


def expand_virtual(gs_ids, sv_offsets, sv_targets, bits):
    """Set bits for the virtual neighbors of the given spatial ids.

    Returns newly-set ids, sorted. Bits stay set for the caller to reset.
    """
    cdef cnp.int64_t[::1] gv = np.ascontiguousarray(gs_ids, dtype=np.int64)
    cdef cnp.int64_t[::1] off = sv_offsets
    cdef cnp.uint32_t[::1] tgt = sv_targets
    cdef cnp.uint8_t[::1] bv = bits
    cdef Py_ssize_t i, n = gv.shape[0]
    cdef cnp.int64_t p, g
    cdef cnp.uint32_t t
    cdef Py_ssize_t cap = 0, n_out = 0
    for i in range(n):
        g = gv[i]
        cap += off[g + 1] - off[g]
    out_arr = np.empty(cap, dtype=np.uint32)
    cdef cnp.uint32_t[::1] out = out_arr
    with nogil:
        for i in range(n):
            g = gv[i]
            for p in range(off[g], off[g + 1]):
                t = tgt[p]
                if bv[t] == 0:
                    bv[t] = 1
                    out[n_out] = t
                    n_out += 1
    res = out_arr[:n_out]
    res.sort()
    return res


cdef inline Py_ssize_t _bisect_left(const cnp.int64_t[::1] a, cnp.int64_t v) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = a.shape[0], mid
    while lo < hi:
        mid = (lo + hi) // 2
        if a[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


def extract_core(gs_in, sv_offsets, sv_targets, bits,
                 sp_tids, sp_bounds, sp_base, v_tids, v_bounds, v_base,
                 rel_src_type, rel_dst_type, rel_src_spatial,
                 adj_offs, adj_dsts, masks, positions):
    """Whole-subgraph core: sorted spatial ordinals in, typed selections and
    position-indexed induced edges out. Bitmap and masks are set internally
    and reset before returning (also on error paths)."""
    gs_arr = np.ascontiguousarray(gs_in, dtype=np.int64)
    cdef cnp.int64_t[::1] gs = gs_arr
    cdef Py_ssize_t n = gs.shape[0]
    cdef Py_ssize_t i, j
    cdef bint is_sorted = True
    for i in range(1, n):
        if gs[i] < gs[i - 1]:
            is_sorted = False
            break
    if not is_sorted:
        gs_arr = np.sort(gs_arr)
        gs = gs_arr

    cdef cnp.int64_t[::1] svo = sv_offsets
    cdef cnp.uint32_t[::1] svt = sv_targets
    cdef cnp.uint8_t[::1] bv = bits
    # virtual expansion with bitmap dedup
    cdef Py_ssize_t cap = 0
    cdef cnp.int64_t g, p
    cdef cnp.uint32_t t32
    for i in range(n):
        g = gs[i]
        cap += svo[g + 1] - svo[g]
    fresh_arr = np.empty(cap, dtype=np.int64)
    cdef cnp.int64_t[::1] fresh = fresh_arr
    cdef Py_ssize_t n_fresh = 0
    with nogil:
        for i in range(n):
            g = gs[i]
            for p in range(svo[g], svo[g + 1]):
                t32 = svt[p]
                if bv[t32] == 0:
                    bv[t32] = 1
                    fresh[n_fresh] = t32
                    n_fresh += 1
    fresh_arr = fresh_arr[:n_fresh]
    fresh_arr.sort()

    cdef cnp.int64_t[::1] freshv = fresh_arr
    cdef cnp.int64_t[::1] spt = sp_tids
    cdef cnp.int64_t[::1] spb = sp_bounds
    cdef cnp.int64_t[::1] spbase = sp_base
    cdef cnp.int64_t[::1] vt_ids = v_tids
    cdef cnp.int64_t[::1] vb = v_bounds
    cdef cnp.int64_t[::1] vbase = v_base

    t_sp_arr = np.empty(n, dtype=np.uint16)
    l_sp_arr = np.empty(n, dtype=np.int64)
    t_v_arr = np.empty(n_fresh, dtype=np.uint16)
    l_v_arr = np.empty(n_fresh, dtype=np.int64)
    cdef cnp.uint16_t[::1] t_sp = t_sp_arr
    cdef cnp.int64_t[::1] l_sp = l_sp_arr
    cdef cnp.uint16_t[::1] t_v = t_v_arr
    cdef cnp.int64_t[::1] l_v = l_v_arr

    cdef Py_ssize_t n_sp_types = spt.shape[0]
    cdef Py_ssize_t n_v_types = vt_ids.shape[0]
    # per-type [start, stop) runs within gs / fresh
    sp_runs_arr = np.zeros(2 * n_sp_types, dtype=np.int64)
    v_runs_arr = np.zeros(2 * n_v_types, dtype=np.int64)
    cdef cnp.int64_t[::1] sp_runs = sp_runs_arr
    cdef cnp.int64_t[::1] v_runs = v_runs_arr
    cdef Py_ssize_t a, b
    cdef cnp.int64_t tt, base
    for i in range(n_sp_types):
        a = _bisect_left(gs, spb[2 * i])
        b = _bisect_left(gs, spb[2 * i + 1])
        sp_runs[2 * i] = a
        sp_runs[2 * i + 1] = b
        tt = spt[i]
        base = spbase[tt]
        for j in range(a, b):
            t_sp[j] = <cnp.uint16_t> tt
            l_sp[j] = gs[j] - base
    for i in range(n_v_types):
        a = _bisect_left(freshv, vb[2 * i])
        b = _bisect_left(freshv, vb[2 * i + 1])
        v_runs[2 * i] = a
        v_runs[2 * i + 1] = b
        tt = vt_ids[i]
        base = vbase[tt]
        for j in range(a, b):
            t_v[j] = <cnp.uint16_t> tt
            l_v[j] = freshv[j] - base

    cdef cnp.uint8_t[::1] mask
    cdef cnp.int64_t[::1] pos
    cdef cnp.int64_t[::1] dpos
    cdef cnp.int64_t[::1] aoff
    cdef cnp.uint32_t[::1] adst
    cdef cnp.int64_t[::1] rst = rel_src_type
    cdef cnp.int64_t[::1] rdt = rel_dst_type
    cdef cnp.uint8_t[::1] rss = rel_src_spatial
    cdef Py_ssize_t n_rel = rst.shape[0]
    cdef Py_ssize_t k, total, n_out
    cdef cnp.int64_t u
    cdef cnp.int64_t[::1] sel_l
    cdef cnp.int64_t[::1] eso, edo
    edges = []
    try:
        # membership masks and node positions (spatial block then virtual)
        for i in range(n_sp_types):
            tt = spt[i]
            mask = masks[tt]
            pos = positions[tt]
            for j in range(sp_runs[2 * i], sp_runs[2 * i + 1]):
                mask[l_sp[j]] = 1
                pos[l_sp[j]] = j
        for i in range(n_v_types):
            tt = vt_ids[i]
            mask = masks[tt]
            pos = positions[tt]
            for j in range(v_runs[2 * i], v_runs[2 * i + 1]):
                mask[l_v[j]] = 1
                pos[l_v[j]] = n + j
        for k in range(n_rel):
            if rss[k]:
                sel_l = l_sp
                a, b = _type_run(sp_tids, sp_runs, rst[k])
            else:
                sel_l = l_v
                a, b = _type_run(v_tids, v_runs, rst[k])
            if b <= a:
                edges.append((np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)))
                continue
            aoff = adj_offs[k]
            adst = adj_dsts[k]
            mask = masks[rdt[k]]
            total = 0
            with nogil:
                for i in range(a, b):
                    u = sel_l[i]
                    for p in range(aoff[u], aoff[u + 1]):
                        if mask[adst[p]]:
                            total += 1
            es_arr = np.empty(total, dtype=np.int64)
            ed_arr = np.empty(total, dtype=np.int64)
            eso = es_arr
            edo = ed_arr
            pos = positions[rst[k]]
            dpos = positions[rdt[k]]
            n_out = 0
            with nogil:
                for i in range(a, b):
                    u = sel_l[i]
                    for p in range(aoff[u], aoff[u + 1]):
                        if mask[adst[p]]:
                            eso[n_out] = pos[u]
                            edo[n_out] = dpos[adst[p]]
                            n_out += 1
            edges.append((es_arr, ed_arr))
    finally:
        for i in range(n_sp_types):
            mask = masks[spt[i]]
            for j in range(sp_runs[2 * i], sp_runs[2 * i + 1]):
                mask[l_sp[j]] = 0
        for i in range(n_v_types):
            mask = masks[vt_ids[i]]
            for j in range(v_runs[2 * i], v_runs[2 * i + 1]):
                mask[l_v[j]] = 0
        for j in range(n_fresh):
            bv[freshv[j]] = 0
    return gs_arr, fresh_arr, t_sp_arr, l_sp_arr, t_v_arr, l_v_arr, edges


def _type_run(tids, runs, cnp.int64_t t):
    cdef cnp.int64_t[::1] tv = tids
    cdef cnp.int64_t[::1] rv = runs
    cdef Py_ssize_t i
    for i in range(tv.shape[0]):
        if tv[i] == t:
            return rv[2 * i], rv[2 * i + 1]
    return 0, 0


def collect_induced(sel_src, adj_offsets, adj_dst, member_dst):
    """Edges from selected sources whose destination is also a member."""
    cdef cnp.int64_t[::1] sel = np.ascontiguousarray(sel_src, dtype=np.int64)
    cdef cnp.int64_t[::1] off = adj_offsets
    cdef cnp.uint32_t[::1] dst = adj_dst
    cdef cnp.uint8_t[::1] mem = member_dst
    cdef Py_ssize_t i, n = sel.shape[0]
    cdef cnp.int64_t p, u
    cdef Py_ssize_t total = 0, n_out = 0
    with nogil:
        for i in range(n):
            u = sel[i]
            for p in range(off[u], off[u + 1]):
                if mem[dst[p]]:
                    total += 1
    src_arr = np.empty(total, dtype=np.int64)
    dst_arr = np.empty(total, dtype=np.int64)
    cdef cnp.int64_t[::1] so = src_arr
    cdef cnp.int64_t[::1] do = dst_arr
    with nogil:
        for i in range(n):
            u = sel[i]
            for p in range(off[u], off[u + 1]):
                if mem[dst[p]]:
                    so[n_out] = u
                    do[n_out] = dst[p]
                    n_out += 1
    return src_arr, dst_arr
