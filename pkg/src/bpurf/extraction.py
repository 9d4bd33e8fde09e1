"""Boundary-prompted region subgraph extraction.

The fast path answers a polygon prompt with one R-tree query, expands the
enclosed spatial tokens to their adjacent virtual tokens through the
spatial-virtual index (bitmap-deduplicated), and collects induced edges by
walking only the selected nodes' adjacency — O(tokens in the region), not
O(graph). ``brute_force_extract`` recomputes the same region by linear scans
and doubles as both correctness oracle and speedup baseline.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import EmptyRegion
from .geometry import BoundaryPrompt, parse_boundary, points_in_prompt, ring_as_rect
from .graph import SpatialVirtualIndex, TokenGraph
from .rtree import StaticRTree


class VirtualBitmap:
    """One byte-backed bit per virtual token, indexed by global virtual id.

    The reset contract: all bits are zero between extractions; extraction
    resets exactly the bits it touched.
    """

    def __init__(self, n_virtual):
        self.bits = np.zeros(n_virtual, dtype=np.uint8)

    def is_clear(self) -> bool:
        return not self.bits.any()


class ExtractionScratch:
    """Per-worker reusable buffers: the virtual bitmap, per-type membership
    masks, and per-type position tables (uninitialized; only currently
    selected entries are ever read)."""

    def __init__(self, graph: TokenGraph):
        self.vbitmap = VirtualBitmap(graph.n_virtual)
        self.masks = [np.zeros(int(c), dtype=np.uint8) for c in graph.counts]
        self.positions = [np.empty(int(c), dtype=np.int64) for c in graph.counts]
        self.iota = np.arange(graph.n_spatial + graph.n_virtual, dtype=np.int64)

    @classmethod
    def for_graph(cls, graph):
        return cls(graph)

    def is_clear(self) -> bool:
        return self.vbitmap.is_clear() and not any(m.any() for m in self.masks)


class RegionSubgraph:
    """Token set of one boundary prompt plus its induced and augmented edges.

    Nodes are positioned 0..n-1: the spatial block first (sorted by
    (type_index, local_id)), then the virtual block (same order). Edges are
    stored as position pairs; ``edges_by_rel`` aligns with the graph's
    relation types and ``aug`` holds proximity edges added later.
    """

    def __init__(self, graph, node_type, node_local, n_spatial, sx, sy,
                 edges_by_rel, boundary=None):
        self.graph = graph
        self.node_type = node_type
        self.node_local = node_local
        self.n_spatial = int(n_spatial)
        self.n_virtual = len(node_type) - self.n_spatial
        self.sx = sx
        self.sy = sy
        self.edges_by_rel = edges_by_rel
        self.aug_src = _EMPTY_EDGES[0]
        self.aug_dst = _EMPTY_EDGES[1]
        self.boundary = boundary
        self._degree_seqs = None
        self._center = None

    @property
    def center(self):
        if self._center is None:
            if len(self.sx):
                self._center = (float(self.sx.mean()), float(self.sy.mean()))
            else:
                self._center = (np.nan, np.nan)
        return self._center

    def __len__(self):
        return len(self.node_type)

    @property
    def spatial_tokens(self):
        return self.node_type[: self.n_spatial], self.node_local[: self.n_spatial]

    @property
    def virtual_tokens(self):
        return self.node_type[self.n_spatial :], self.node_local[self.n_spatial :]

    def n_edges(self):
        return sum(len(s) for s, _ in self.edges_by_rel) + len(self.aug_src)

    def type_counts(self) -> dict[str, int]:
        out = {}
        for t in np.bincount(self.node_type, minlength=len(self.graph.types)).nonzero()[0]:
            out[self.graph.types[t].name] = int((self.node_type == t).sum())
        return out

    def degree_sequences(self):
        """Per node type, descending multiset of degrees (induced + augmented)."""
        if self._degree_seqs is None:
            deg = np.zeros(len(self.node_type), dtype=np.int64)
            for src, dst in self.edges_by_rel:
                np.add.at(deg, src.astype(np.int64), 1)
                np.add.at(deg, dst.astype(np.int64), 1)
            np.add.at(deg, self.aug_src.astype(np.int64), 1)
            np.add.at(deg, self.aug_dst.astype(np.int64), 1)
            seqs = []
            for t in range(len(self.graph.types)):
                d = deg[self.node_type == t]
                seqs.append(np.sort(d)[::-1].astype(np.float64))
            self._degree_seqs = seqs
        return self._degree_seqs

    def invalidate_degrees(self):
        self._degree_seqs = None


_EMPTY_EDGES = (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))


def _assemble(graph, gs, t_sp, l_sp, sp_slices, t_v, l_v, v_slices,
              induced_local, boundary, positions, iota=None):
    """Shared assembly: sorted selections + local-id edges -> positioned
    subgraph. ``positions`` provides per-type scratch tables that map a
    selected local id to its node position; ``iota`` is an optional
    preallocated arange to slice position runs from."""
    node_type = np.concatenate([t_sp, t_v])
    node_local = np.concatenate([l_sp, l_v])
    n_spatial = len(t_sp)
    if iota is None:
        iota = np.arange(len(node_type), dtype=np.int64)
    for t, sl in sp_slices.items():
        positions[t][l_sp[sl]] = iota[sl.start : sl.stop]
    for t, sl in v_slices.items():
        positions[t][l_v[sl]] = iota[n_spatial + sl.start : n_spatial + sl.stop]
    edges_by_rel = []
    for rel, (src_loc, dst_loc) in zip(graph.relations, induced_local):
        if len(src_loc) == 0:
            edges_by_rel.append(_EMPTY_EDGES)
            continue
        edges_by_rel.append((positions[rel.src_type][src_loc],
                             positions[rel.dst_type][dst_loc]))
    sx = graph.spatial_x[gs]
    sy = graph.spatial_y[gs]
    return RegionSubgraph(graph, node_type, node_local, n_spatial, sx, sy,
                          edges_by_rel, boundary)


def _query_part(gir, part):
    """Entry indices for one polygon part, holes subtracted."""
    rx, ry = part.exterior
    rect = ring_as_rect(rx, ry)
    idx = gir.query_rect(*rect) if rect else gir.query_ring(rx, ry)
    for hx, hy in part.holes:
        if len(idx) == 0:
            break
        hole_rect = ring_as_rect(hx, hy)
        if hole_rect:
            x0, y0, x1, y1 = hole_rect
            ex, ey = gir.ex[idx], gir.ey[idx]
            in_hole = (ex >= x0) & (ex <= x1) & (ey >= y0) & (ey <= y1)
        else:
            in_hole = np.asarray(kernels.points_in_polygon(gir.ex[idx], gir.ey[idx], hx, hy))
        idx = idx[~in_hole]
    return idx


def extract_token_set(boundary, graph: TokenGraph, gir: StaticRTree,
                      svindex: SpatialVirtualIndex, scratch: ExtractionScratch) -> RegionSubgraph:
    """Index-backed extraction of a region subgraph for one boundary prompt.

    The GIR stores entries in global-spatial-ordinal order, so query results
    map straight to ordinals. Everything after the spatial query (virtual
    expansion, membership, induced-edge collection) runs in one kernel call
    that also honors the bitmap/mask reset contract.
    """
    boundary = parse_boundary(boundary).validate()
    parts = []
    for part in boundary.parts:
        idx = _query_part(gir, part)
        if len(idx):
            parts.append(gir.eorig[idx])
    if not parts:
        raise EmptyRegion("boundary prompt encloses no spatial tokens")
    if len(parts) == 1:
        gs_in = parts[0]  # a single query returns distinct entries
    else:
        gs_in = np.unique(np.concatenate(parts))
    gs, _, t_sp, l_sp, t_v, l_v, edges = kernels.extract_core(
        gs_in, svindex.offsets, svindex.targets, scratch.vbitmap.bits,
        *graph.extract_args, scratch.masks, scratch.positions)
    node_type = np.concatenate([t_sp, t_v])
    node_local = np.concatenate([l_sp, l_v])
    return RegionSubgraph(graph, node_type, node_local, len(gs),
                          graph.spatial_x[gs], graph.spatial_y[gs], edges, boundary)


def brute_force_extract(boundary, graph: TokenGraph) -> RegionSubgraph:
    """Oracle/baseline: full point scan plus full edge scans, same semantics."""
    boundary = parse_boundary(boundary).validate()
    sel_spatial = {}
    for t in graph.spatial_type_ids:
        xs, ys = graph.coords[t]
        m = points_in_prompt(xs, ys, boundary)
        if m.any():
            sel_spatial[t] = np.nonzero(m)[0].astype(np.int64)
    if not sel_spatial:
        raise EmptyRegion("boundary prompt encloses no spatial tokens")

    member = [np.zeros(int(c), dtype=bool) for c in graph.counts]
    for t, loc in sel_spatial.items():
        member[t][loc] = True
    virt_hits = {}
    for rel, (src, dst) in zip(graph.relations, graph.edges):
        s_spatial = graph.types[rel.src_type].spatial
        d_spatial = graph.types[rel.dst_type].spatial
        if s_spatial and not d_spatial:
            hit = dst[member[rel.src_type][src]]
            vt = rel.dst_type
        elif d_spatial and not s_spatial:
            hit = src[member[rel.dst_type][dst]]
            vt = rel.src_type
        else:
            continue
        if len(hit):
            virt_hits.setdefault(vt, []).append(hit)
    sel_virtual = {
        t: np.unique(np.concatenate(parts)).astype(np.int64)
        for t, parts in virt_hits.items()
    }
    for t, loc in sel_virtual.items():
        member[t][loc] = True

    induced = []
    for rel, (src, dst) in zip(graph.relations, graph.edges):
        m = member[rel.src_type][src] & member[rel.dst_type][dst]
        induced.append((src[m].astype(np.int64), dst[m].astype(np.int64)))

    def flat(sel, group):
        ts, ls, slices = [], [], {}
        pos = 0
        for t in group:
            if t in sel:
                ts.append(np.full(len(sel[t]), t, dtype=np.uint16))
                ls.append(sel[t])
                slices[t] = slice(pos, pos + len(sel[t]))
                pos += len(sel[t])
        if not ts:
            return np.empty(0, np.uint16), np.empty(0, np.int64), slices
        return np.concatenate(ts), np.concatenate(ls), slices

    t_sp, l_sp, sp_slices = flat(sel_spatial, graph.spatial_type_ids)
    t_v, l_v, v_slices = flat(sel_virtual, graph.virtual_type_ids)
    gs = graph.gs_ids(t_sp, l_sp)
    positions = [np.empty(int(c), dtype=np.int64) for c in graph.counts]
    return _assemble(graph, gs, t_sp, l_sp, sp_slices, t_v, l_v, v_slices,
                     induced, boundary, positions)


def augment_spatial_edges(subgraph: RegionSubgraph, k_aug: int, d_max: float) -> RegionSubgraph:
    """Add proximity edges: each spatial token to its k nearest subgraph-internal
    spatial tokens within d_max. Edges are undirected and deduplicated."""
    if k_aug < 1:
        raise ValueError("k_aug must be >= 1")
    if d_max <= 0:
        raise ValueError("d_max must be > 0")
    n = subgraph.n_spatial
    if n < 2:
        subgraph.aug_src = np.empty(0, dtype=np.uint32)
        subgraph.aug_dst = np.empty(0, dtype=np.uint32)
        subgraph.invalidate_degrees()
        return subgraph
    tree = StaticRTree(
        subgraph.sx, subgraph.sy,
        np.zeros(n, dtype=np.uint16), np.arange(n, dtype=np.uint32),
        branching=16,
    )
    pairs = set()
    for i in range(n):
        near = tree.knn(subgraph.sx[i], subgraph.sy[i], k_aug, exclude=(0, i), dmax=d_max)
        for e in near:
            j = int(tree.elocal[e])
            pairs.add((i, j) if i < j else (j, i))
    if pairs:
        arr = np.array(sorted(pairs), dtype=np.uint32)
        subgraph.aug_src, subgraph.aug_dst = arr[:, 0].copy(), arr[:, 1].copy()
    else:
        subgraph.aug_src = np.empty(0, dtype=np.uint32)
        subgraph.aug_dst = np.empty(0, dtype=np.uint32)
    subgraph.invalidate_degrees()
    return subgraph


def degree_sequences(subgraph: RegionSubgraph):
    return subgraph.degree_sequences()


def subgraphs_equal(a: RegionSubgraph, b: RegionSubgraph) -> bool:
    """Deep equality of token sets, induced edges, and centers (oracle checks).

    Edge lists are compared as sets: the two extraction paths discover the
    same edges in different orders.
    """
    if (
        not np.array_equal(a.node_type, b.node_type)
        or not np.array_equal(a.node_local, b.node_local)
        or a.n_spatial != b.n_spatial
    ):
        return False
    if not np.allclose(a.center, b.center, rtol=0, atol=1e-12):
        return False
    for (s1, d1), (s2, d2) in zip(a.edges_by_rel, b.edges_by_rel):
        if len(s1) != len(s2):
            return False
        o1 = np.lexsort((d1, s1))
        o2 = np.lexsort((d2, s2))
        if not (np.array_equal(s1[o1], s2[o2]) and np.array_equal(d1[o1], d2[o2])):
            return False
    return True
