"""Pure-Python/numpy fallback for the compiled kernels.

Every function here has a twin in ``_native.pyx`` with identical semantics
(including tie-breaking and boundary inclusion), so the two backends are
interchangeable. This module is the reference; the compiled one is the fast
path selected at import in ``kernels``.
"""

import heapq

import numpy as np

BACKEND = "pure"


# --- point in polygon ---------------------------------------------------------


def points_in_polygon(xs, ys, rx, ry):
    """Even-odd ray casting over a batch of points; on-edge counts inside.

    ``rx``/``ry`` are the ring vertices without a closing duplicate.
    Returns a bool array.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    n = len(rx)
    inside = np.zeros(xs.shape, dtype=bool)
    on_edge = np.zeros(xs.shape, dtype=bool)
    j = n - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(n):
            x1, y1 = rx[j], ry[j]
            x2, y2 = rx[i], ry[i]
            cross = (x2 - x1) * (ys - y1) - (y2 - y1) * (xs - x1)
            on = (
                (cross == 0.0)
                & (xs >= min(x1, x2))
                & (xs <= max(x1, x2))
                & (ys >= min(y1, y2))
                & (ys <= max(y1, y2))
            )
            on_edge |= on
            crosses = (y1 > ys) != (y2 > ys)
            if y1 != y2:
                xint = x1 + (x2 - x1) * (ys - y1) / (y2 - y1)
                inside ^= crosses & (xs < xint)
            j = i
    return inside | on_edge


def point_in_polygon(x, y, rx, ry):
    return bool(points_in_polygon(np.array([x]), np.array([y]), rx, ry)[0])


# --- dynamic time warping ------------------------------------------------------


def dtw_distance(a, b):
    """Alignment distance with |a_i - b_j| cell cost and unit DP moves.

    Empty inputs follow the sum-of-absolute-values convention: an empty
    sequence aligned against ``s`` costs ``sum(|s_i|)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, m = len(a), len(b)
    if n == 0 and m == 0:
        return 0.0
    if n == 0:
        return float(np.abs(b).sum())
    if m == 0:
        return float(np.abs(a).sum())
    inf = np.inf
    prev = np.full(m, inf)
    cur = np.empty(m)
    for i in range(n):
        cost = np.abs(a[i] - b)
        if i == 0:
            cur[0] = cost[0]
        else:
            cur[0] = cost[0] + prev[0]
        for j in range(1, m):
            best = cur[j - 1]
            if prev[j] < best:
                best = prev[j]
            if prev[j - 1] < best:
                best = prev[j - 1]
            cur[j] = cost[j] + best
        prev, cur = cur, prev
    return float(prev[m - 1])


# --- packed R-tree traversal ----------------------------------------------------


def rtree_query(tree, rx, ry):
    """Entry indices inside the polygon ring, in tree order (unsorted)."""
    qminx, qmaxx = min(rx), max(rx)
    qminy, qmaxy = min(ry), max(ry)
    spans = []
    stack = [tree.root]
    while stack:
        nd = stack.pop()
        if (
            tree.node_minx[nd] > qmaxx
            or tree.node_maxx[nd] < qminx
            or tree.node_miny[nd] > qmaxy
            or tree.node_maxy[nd] < qminy
        ):
            continue
        first = tree.node_first[nd]
        count = tree.node_count[nd]
        if tree.node_leaf[nd]:
            spans.append((first, first + count))
        else:
            stack.extend(range(first, first + count))
    if not spans:
        return np.empty(0, dtype=np.int64)
    idx = np.concatenate([np.arange(a, b, dtype=np.int64) for a, b in spans])
    xs = tree.ex[idx]
    ys = tree.ey[idx]
    bbox_ok = (xs >= qminx) & (xs <= qmaxx) & (ys >= qminy) & (ys <= qmaxy)
    idx = idx[bbox_ok]
    if len(idx) == 0:
        return idx
    keep = points_in_polygon(tree.ex[idx], tree.ey[idx], rx, ry)
    return idx[keep]


def rtree_query_rect(tree, x0, y0, x1, y1):
    """Entry indices inside the closed rectangle, in tree order."""
    spans = []
    singles = []
    stack = [(tree.root, False)]
    while stack:
        nd, contained = stack.pop()
        if not contained:
            if (
                tree.node_minx[nd] > x1
                or tree.node_maxx[nd] < x0
                or tree.node_miny[nd] > y1
                or tree.node_maxy[nd] < y0
            ):
                continue
            contained = (
                tree.node_minx[nd] >= x0
                and tree.node_maxx[nd] <= x1
                and tree.node_miny[nd] >= y0
                and tree.node_maxy[nd] <= y1
            )
        first = tree.node_first[nd]
        count = tree.node_count[nd]
        if tree.node_leaf[nd]:
            if contained:
                spans.append((first, first + count))
            else:
                singles.append((first, first + count))
        else:
            stack.extend((c, contained) for c in range(first, first + count))
    parts = [np.arange(a, b, dtype=np.int64) for a, b in spans]
    if singles:
        idx = np.concatenate([np.arange(a, b, dtype=np.int64) for a, b in singles])
        xs = tree.ex[idx]
        ys = tree.ey[idx]
        keep = (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
        parts.append(idx[keep])
    if not parts:
        return np.empty(0, dtype=np.int64)
    return np.concatenate(parts)


def _mindist2(tree, nd, qx, qy):
    dx = 0.0
    if qx < tree.node_minx[nd]:
        dx = tree.node_minx[nd] - qx
    elif qx > tree.node_maxx[nd]:
        dx = qx - tree.node_maxx[nd]
    dy = 0.0
    if qy < tree.node_miny[nd]:
        dy = tree.node_miny[nd] - qy
    elif qy > tree.node_maxy[nd]:
        dy = qy - tree.node_maxy[nd]
    return dx * dx + dy * dy


def rtree_knn(tree, qx, qy, k, exclude_type=-1, exclude_local=-1, dmax=np.inf):
    """Best-first k-nearest entries, ties by (type_index, local_id).

    Entries farther than ``dmax`` (Euclidean) are dropped. Returns entry
    indices sorted by (distance, type_index, local_id).
    """
    dmax2 = dmax * dmax if np.isfinite(dmax) else np.inf
    out = []
    # nodes carry kind 0 so they expand before equally-distant entries
    heap = [(_mindist2(tree, tree.root, qx, qy), 0, 0, 0, tree.root)]
    while heap and len(out) < k:
        d2, kind, t, l, idx = heapq.heappop(heap)
        if d2 > dmax2:
            break
        if kind == 1:
            out.append(idx)
            continue
        first = tree.node_first[idx]
        count = tree.node_count[idx]
        if tree.node_leaf[idx]:
            for e in range(first, first + count):
                et = int(tree.etype[e])
                el = int(tree.elocal[e])
                if et == exclude_type and el == exclude_local:
                    continue
                dx = tree.ex[e] - qx
                dy = tree.ey[e] - qy
                ed2 = dx * dx + dy * dy
                if ed2 <= dmax2:
                    heapq.heappush(heap, (ed2, 1, et, el, e))
        else:
            for c in range(first, first + count):
                cd2 = _mindist2(tree, c, qx, qy)
                if cd2 <= dmax2:
                    heapq.heappush(heap, (cd2, 0, 0, 0, c))
    return np.asarray(out, dtype=np.int64)


# --- extraction helpers -----------------------------------------------------------


def _csr_gather_positions(starts, counts, total):
    """Flat positions of the concatenated slices [starts[i], starts[i]+counts[i])."""
    starts = np.asarray(starts, dtype=np.int64)
    counts = np.asarray(counts, dtype=np.int64)
    block_base = np.repeat(np.cumsum(counts) - counts, counts)
    return np.arange(total, dtype=np.int64) - block_base + np.repeat(starts, counts)


def expand_virtual(gs_ids, sv_offsets, sv_targets, bits):
    """Mark the virtual neighbors of the given spatial tokens in ``bits``.

    Returns the newly-set virtual ids (sorted). Bits are left set; the caller
    owns the reset.
    """
    if len(gs_ids) == 0:
        return np.empty(0, dtype=np.uint32)
    starts = sv_offsets[gs_ids]
    counts = sv_offsets[gs_ids + 1] - starts
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.uint32)
    pos = _csr_gather_positions(starts, counts, total)
    hit = np.unique(sv_targets[pos])
    fresh = hit[bits[hit] == 0]
    bits[fresh] = 1
    return fresh.astype(np.uint32)


def extract_core(gs_in, sv_offsets, sv_targets, bits,
                 sp_tids, sp_bounds, sp_base, v_tids, v_bounds, v_base,
                 rel_src_type, rel_dst_type, rel_src_spatial,
                 adj_offs, adj_dsts, masks, positions):
    """Whole-subgraph core: sorted spatial ordinals in, typed selections and
    position-indexed induced edges out. Mirrors the compiled kernel."""
    gs = np.ascontiguousarray(gs_in, dtype=np.int64)
    if len(gs) > 1 and (np.diff(gs) < 0).any():
        gs = np.sort(gs)
    fresh = expand_virtual(gs, sv_offsets, sv_targets, bits).astype(np.int64)
    n = len(gs)
    sp_runs = np.searchsorted(gs, sp_bounds)
    v_runs = np.searchsorted(fresh, v_bounds)
    t_sp = np.empty(n, dtype=np.uint16)
    l_sp = np.empty(n, dtype=np.int64)
    t_v = np.empty(len(fresh), dtype=np.uint16)
    l_v = np.empty(len(fresh), dtype=np.int64)

    def runs_of(tids, runs):
        return {int(t): slice(int(runs[2 * i]), int(runs[2 * i + 1]))
                for i, t in enumerate(tids) if runs[2 * i + 1] > runs[2 * i]}

    sp_slices = runs_of(sp_tids, sp_runs)
    v_slices = runs_of(v_tids, v_runs)
    for t, sl in sp_slices.items():
        t_sp[sl] = t
        l_sp[sl] = gs[sl] - sp_base[t]
    for t, sl in v_slices.items():
        t_v[sl] = t
        l_v[sl] = fresh[sl] - v_base[t]
    edges = []
    try:
        for t, sl in sp_slices.items():
            masks[t][l_sp[sl]] = 1
            positions[t][l_sp[sl]] = np.arange(sl.start, sl.stop)
        for t, sl in v_slices.items():
            masks[t][l_v[sl]] = 1
            positions[t][l_v[sl]] = np.arange(n + sl.start, n + sl.stop)
        for k in range(len(rel_src_type)):
            st, dt = int(rel_src_type[k]), int(rel_dst_type[k])
            sl = (sp_slices if rel_src_spatial[k] else v_slices).get(st)
            if sl is None:
                edges.append((np.empty(0, np.int64), np.empty(0, np.int64)))
                continue
            sel = (l_sp if rel_src_spatial[k] else l_v)[sl]
            s_loc, d_loc = collect_induced(sel, adj_offs[k], adj_dsts[k], masks[dt])
            edges.append((positions[st][s_loc], positions[dt][d_loc]))
    finally:
        for t, sl in sp_slices.items():
            masks[t][l_sp[sl]] = 0
        for t, sl in v_slices.items():
            masks[t][l_v[sl]] = 0
        bits[fresh] = 0
    return gs, fresh, t_sp, l_sp, t_v, l_v, edges


def collect_induced(sel_src, adj_offsets, adj_dst, member_dst):
    """Edges from selected source nodes whose target is also selected.

    Returns (src_locals, dst_locals) arrays, one row per induced edge.
    """
    sel_src = np.asarray(sel_src, dtype=np.int64)
    if len(sel_src) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    starts = adj_offsets[sel_src]
    counts = adj_offsets[sel_src + 1] - starts
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    pos = _csr_gather_positions(starts, counts, total)
    dsts = adj_dst[pos]
    srcs = np.repeat(sel_src, counts)
    keep = member_dst[dsts] != 0
    return srcs[keep], dsts[keep].astype(np.int64)
