"""R-tree spatial indexes over point entries.

``StaticRTree`` is the production index: sort-tile-recursive bulk load into
packed arrays that the kernel backends traverse without chasing pointers.
``IncrementalRTree`` is the one-insert-at-a-time variant kept as an
alternative code path for build-complexity measurements; it answers the same
queries through a slower pointer-based walk.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels


def _str_order(xs, ys, cap):
    """Permutation packing entries into tiles of ``cap``, STR style."""
    m = len(xs)
    n_groups = math.ceil(m / cap)
    n_slices = math.ceil(math.sqrt(n_groups))
    slice_cap = n_slices * cap
    by_x = np.argsort(xs, kind="stable")
    order = np.empty(m, dtype=np.int64)
    pos = 0
    for s in range(0, m, slice_cap):
        chunk = by_x[s : s + slice_cap]
        chunk = chunk[np.argsort(ys[chunk], kind="stable")]
        order[pos : pos + len(chunk)] = chunk
        pos += len(chunk)
    return order


class StaticRTree:
    """Bulk-loaded packed R-tree; immutable after construction.

    Nodes live in flat arrays: leaves reference contiguous entry ranges,
    internal nodes reference contiguous node ranges, the root is the last
    node. Entry payload is (x, y, type_index, local_id).
    """

    def __init__(self, xs, ys, type_idx, local_id, branching=32):
        if branching < 2:
            raise ValueError("branching factor must be >= 2")
        xs = np.ascontiguousarray(xs, dtype=np.float64)
        ys = np.ascontiguousarray(ys, dtype=np.float64)
        type_idx = np.ascontiguousarray(type_idx, dtype=np.uint16)
        local_id = np.ascontiguousarray(local_id, dtype=np.uint32)
        if not (len(xs) == len(ys) == len(type_idx) == len(local_id)):
            raise ValueError("entry arrays must have equal length")
        self.branching = branching
        m = len(xs)
        if m:
            order = _str_order(xs, ys, branching)
            xs, ys = xs[order].copy(), ys[order].copy()
            type_idx, local_id = type_idx[order].copy(), local_id[order].copy()
        else:
            order = np.empty(0, dtype=np.int64)
        self.ex, self.ey = xs, ys
        self.etype, self.elocal = type_idx, local_id
        self.eorig = order  # tree position -> insertion-order index
        self._build_nodes()

    def _build_nodes(self):
        b = self.branching
        m = len(self.ex)
        minx, miny, maxx, maxy = [], [], [], []
        first, count, leaf = [], [], []

        if m == 0:
            # single empty leaf whose inverted bbox rejects every probe
            minx, miny = [np.inf], [np.inf]
            maxx, maxy = [-np.inf], [-np.inf]
            first, count, leaf = [0], [0], [1]
            level = [0]
        else:
            n_leaves = math.ceil(m / b)
            level = []
            for i in range(n_leaves):
                lo, hi = i * b, min((i + 1) * b, m)
                minx.append(self.ex[lo:hi].min())
                maxx.append(self.ex[lo:hi].max())
                miny.append(self.ey[lo:hi].min())
                maxy.append(self.ey[lo:hi].max())
                first.append(lo)
                count.append(hi - lo)
                leaf.append(1)
                level.append(i)
            while len(level) > 1:
                idx = np.asarray(level, dtype=np.int64)
                cx = (np.asarray(minx)[idx] + np.asarray(maxx)[idx]) / 2.0
                cy = (np.asarray(miny)[idx] + np.asarray(maxy)[idx]) / 2.0
                pack = _str_order(cx, cy, b)
                packed = idx[pack]
                # physically reorder this level so parents cover contiguous runs
                lvl_start = len(minx) - len(level)
                for arr in (minx, miny, maxx, maxy, first, count, leaf):
                    vals = [arr[i] for i in packed]
                    arr[lvl_start : lvl_start + len(level)] = vals
                next_level = []
                for g in range(0, len(level), b):
                    children = range(lvl_start + g, lvl_start + min(g + b, len(level)))
                    minx.append(min(minx[c] for c in children))
                    maxx.append(max(maxx[c] for c in children))
                    miny.append(min(miny[c] for c in children))
                    maxy.append(max(maxy[c] for c in children))
                    first.append(children.start)
                    count.append(len(children))
                    leaf.append(0)
                    next_level.append(len(minx) - 1)
                level = next_level

        self.node_minx = np.ascontiguousarray(minx, dtype=np.float64)
        self.node_miny = np.ascontiguousarray(miny, dtype=np.float64)
        self.node_maxx = np.ascontiguousarray(maxx, dtype=np.float64)
        self.node_maxy = np.ascontiguousarray(maxy, dtype=np.float64)
        self.node_first = np.ascontiguousarray(first, dtype=np.int64)
        self.node_count = np.ascontiguousarray(count, dtype=np.int64)
        self.node_leaf = np.ascontiguousarray(leaf, dtype=np.uint8)
        self.root = level[0]

    def __len__(self):
        return len(self.ex)

    def query_ring(self, rx, ry):
        """Entry indices whose point lies in the ring (inclusive boundary)."""
        return kernels.rtree_query(self, rx, ry)

    def query_rect(self, x0, y0, x1, y1):
        """Entry indices inside a closed axis-aligned rectangle."""
        return kernels.rtree_query_rect(self, float(x0), float(y0), float(x1), float(y1))

    def knn(self, qx, qy, k, exclude=None, dmax=np.inf):
        """Entry indices of the k nearest points, (distance, type, id) order."""
        if k >= len(self.ex):
            return self._knn_all(qx, qy, exclude, dmax)
        ext, exl = exclude if exclude is not None else (-1, -1)
        return kernels.rtree_knn(self, float(qx), float(qy), int(k), int(ext), int(exl), float(dmax))

    def _knn_all(self, qx, qy, exclude, dmax):
        d2 = (self.ex - qx) ** 2 + (self.ey - qy) ** 2
        order = np.lexsort((self.elocal, self.etype, d2))
        keep = d2[order] <= dmax * dmax
        order = order[keep]
        if exclude is not None:
            ext, exl = exclude
            mask = (self.etype[order] == ext) & (self.elocal[order] == exl)
            order = order[~mask]
        return order.astype(np.int64)


class _Node:
    __slots__ = ("minx", "miny", "maxx", "maxy", "children", "entries", "leaf")

    def __init__(self, leaf):
        self.minx = self.miny = np.inf
        self.maxx = self.maxy = -np.inf
        self.children = []
        self.entries = []
        self.leaf = leaf

    def extend_bbox(self, x0, y0, x1, y1):
        self.minx = min(self.minx, x0)
        self.miny = min(self.miny, y0)
        self.maxx = max(self.maxx, x1)
        self.maxy = max(self.maxy, y1)

    def bbox(self):
        return self.minx, self.miny, self.maxx, self.maxy


def _enlargement(node, x, y):
    nx0 = min(node.minx, x)
    ny0 = min(node.miny, y)
    nx1 = max(node.maxx, x)
    ny1 = max(node.maxy, y)
    new_area = (nx1 - nx0) * (ny1 - ny0)
    old_area = (node.maxx - node.minx) * (node.maxy - node.miny)
    if not math.isfinite(old_area):
        old_area = 0.0
    return new_area - old_area


class IncrementalRTree:
    """Classic insert-one-entry-at-a-time R-tree with quadratic split."""

    def __init__(self, branching=32):
        self.branching = branching
        self.root = _Node(leaf=True)
        self.size = 0

    def insert(self, x, y, type_idx, local_id):
        leaf = self._choose_leaf(self.root, x, y)
        leaf.entries.append((float(x), float(y), int(type_idx), int(local_id)))
        leaf.extend_bbox(x, y, x, y)
        self._propagate_bbox(x, y)
        if len(leaf.entries) > self.branching:
            self._split_upward(leaf)
        self.size += 1

    def _choose_leaf(self, node, x, y):
        self._path = [node]
        while not node.leaf:
            node = min(node.children, key=lambda c: (_enlargement(c, x, y),))
            self._path.append(node)
        return node

    def _propagate_bbox(self, x, y):
        for node in self._path:
            node.extend_bbox(x, y, x, y)

    def _split_upward(self, node):
        path = self._path
        while len(node.entries if node.leaf else node.children) > self.branching:
            a, b = _quadratic_split(node, self.branching)
            if node is self.root:
                new_root = _Node(leaf=False)
                new_root.children = [a, b]
                for c in (a, b):
                    new_root.extend_bbox(*c.bbox())
                self.root = new_root
                return
            parent = path[path.index(node) - 1]
            parent.children.remove(node)
            parent.children.extend([a, b])
            _recompute_bbox(parent)
            node = parent

    def query_ring(self, rx, ry):
        """List of (type_idx, local_id) inside the ring, unsorted."""
        qminx, qmaxx = min(rx), max(rx)
        qminy, qmaxy = min(ry), max(ry)
        out = []
        stack = [self.root]
        while stack:
            nd = stack.pop()
            if nd.minx > qmaxx or nd.maxx < qminx or nd.miny > qmaxy or nd.maxy < qminy:
                continue
            if nd.leaf:
                for x, y, t, l in nd.entries:
                    if qminx <= x <= qmaxx and qminy <= y <= qmaxy:
                        if kernels.point_in_polygon(x, y, rx, ry):
                            out.append((t, l))
            else:
                stack.extend(nd.children)
        return out


def _recompute_bbox(node):
    node.minx = node.miny = np.inf
    node.maxx = node.maxy = -np.inf
    if node.leaf:
        for x, y, _, _ in node.entries:
            node.extend_bbox(x, y, x, y)
    else:
        for c in node.children:
            node.extend_bbox(*c.bbox())


def _quadratic_split(node, branching):
    items = node.entries if node.leaf else node.children
    boxes = (
        [(x, y, x, y) for x, y, _, _ in items]
        if node.leaf
        else [c.bbox() for c in items]
    )

    def waste(i, j):
        bi, bj = boxes[i], boxes[j]
        x0, y0 = min(bi[0], bj[0]), min(bi[1], bj[1])
        x1, y1 = max(bi[2], bj[2]), max(bi[3], bj[3])
        ai = (bi[2] - bi[0]) * (bi[3] - bi[1])
        aj = (bj[2] - bj[0]) * (bj[3] - bj[1])
        return (x1 - x0) * (y1 - y0) - ai - aj

    n = len(items)
    seed_i, seed_j, worst = 0, 1, -np.inf
    for i in range(n):
        for j in range(i + 1, n):
            w = waste(i, j)
            if w > worst:
                seed_i, seed_j, worst = i, j, w

    a, b = _Node(node.leaf), _Node(node.leaf)
    ga, gb = [seed_i], [seed_j]
    for i in range(n):
        if i == seed_i or i == seed_j:
            continue
        # grow the group that wastes less area; split quality only affects speed
        (ga if waste(i, seed_i) <= waste(i, seed_j) else gb).append(i)
    for idx_list, g in ((ga, a), (gb, b)):
        for i in idx_list:
            if node.leaf:
                g.entries.append(items[i])
            else:
                g.children.append(items[i])
        _recompute_bbox(g)
    return a, b
