"""Spatial token graph: typed nodes, typed edges, and its two indexes.

Nodes are created in arrival order while streaming relation pairs (an entity
that never appears in a relation is not a token). Spatial tokens go into a
bulk-loaded R-tree; each spatial token's adjacent virtual tokens are
precomputed into a CSR index so boundary extraction can expand token sets
without touching edge lists.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio
from .errors import DanglingSpatialToken, InvalidPolygon, VersionMismatch
from .geometry import as_ring, ring_is_simple
from .rtree import IncrementalRTree, StaticRTree

GRAPH_FORMAT = "bpurf-graph"
GRAPH_VERSION = 1


@dataclass(frozen=True, order=True)
class TokenRef:
    type_index: int
    local_id: int


@dataclass(frozen=True)
class TokenType:
    name: str
    spatial: bool


@dataclass(frozen=True)
class RelationType:
    src_type: int
    dst_type: int
    name: str


class TokenGraph:
    """Immutable after construction; shared read-only by all consumers."""

    def __init__(self, types, ids, coords, relations, edges):
        self.types: list[TokenType] = types
        self.ids: list[list[str]] = ids
        self.coords = coords  # per type: (xs, ys) arrays or None
        self.relations: list[RelationType] = relations
        self.edges = edges  # per relation: (src u32 array, dst u32 array)
        self.type_index = {t.name: i for i, t in enumerate(types)}
        self._finalize()

    def _finalize(self):
        n_types = len(self.types)
        counts = np.array([len(i) for i in self.ids], dtype=np.int64)
        self.counts = counts
        self.spatial_type_ids = [i for i, t in enumerate(self.types) if t.spatial]
        self.virtual_type_ids = [i for i, t in enumerate(self.types) if not t.spatial]
        self.spatial_base = np.full(n_types, -1, dtype=np.int64)
        self.virtual_base = np.full(n_types, -1, dtype=np.int64)
        acc = 0
        for t in self.spatial_type_ids:
            self.spatial_base[t] = acc
            acc += counts[t]
        self.n_spatial = int(acc)
        acc = 0
        for t in self.virtual_type_ids:
            self.virtual_base[t] = acc
            acc += counts[t]
        self.n_virtual = int(acc)
        # flat spatial coordinates in global-spatial-ordinal order
        if self.spatial_type_ids:
            self.spatial_x = np.concatenate([self.coords[t][0] for t in self.spatial_type_ids])
            self.spatial_y = np.concatenate([self.coords[t][1] for t in self.spatial_type_ids])
        else:
            self.spatial_x = np.empty(0)
            self.spatial_y = np.empty(0)
        # per-type [base, base+count) boundaries for one-shot searchsorted
        self.spatial_bounds = np.array(
            [v for t in self.spatial_type_ids
             for v in (self.spatial_base[t], self.spatial_base[t] + counts[t])],
            dtype=np.int64)
        self.virtual_bounds = np.array(
            [v for t in self.virtual_type_ids
             for v in (self.virtual_base[t], self.virtual_base[t] + counts[t])],
            dtype=np.int64)
        # forward adjacency per relation (src local -> dst locals), CSR
        self._adjacency = []
        for rel, (src, dst) in zip(self.relations, self.edges):
            n_src = counts[rel.src_type]
            order = np.lexsort((dst, src))
            s, d = src[order], dst[order]
            off = np.zeros(n_src + 1, dtype=np.int64)
            np.add.at(off, s.astype(np.int64) + 1, 1)
            np.cumsum(off, out=off)
            self._adjacency.append((off, np.ascontiguousarray(d, dtype=np.uint32)))
        # packed argument block for the extraction kernel
        self.extract_args = (
            np.asarray(self.spatial_type_ids, dtype=np.int64), self.spatial_bounds,
            self.spatial_base,
            np.asarray(self.virtual_type_ids, dtype=np.int64), self.virtual_bounds,
            self.virtual_base,
            np.asarray([r.src_type for r in self.relations], dtype=np.int64),
            np.asarray([r.dst_type for r in self.relations], dtype=np.int64),
            np.asarray([1 if self.types[r.src_type].spatial else 0
                        for r in self.relations], dtype=np.uint8),
            [off for off, _ in self._adjacency],
            [d for _, d in self._adjacency],
        )

    # -- id/ref helpers ------------------------------------------------------

    def n_tokens(self, type_index) -> int:
        return int(self.counts[type_index])

    def ref(self, type_name, external_id) -> TokenRef:
        t = self.type_index[type_name]
        return TokenRef(t, self.ids[t].index(external_id))

    def external_id(self, ref: TokenRef) -> str:
        return self.ids[ref.type_index][ref.local_id]

    def gs_ids(self, type_arr, local_arr):
        """Global spatial ordinals for (type, local) arrays."""
        return self.spatial_base[np.asarray(type_arr, np.int64)] + np.asarray(local_arr, np.int64)

    def gv_ids(self, type_arr, local_arr):
        return self.virtual_base[np.asarray(type_arr, np.int64)] + np.asarray(local_arr, np.int64)

    def gv_to_refs(self, gv):
        """Inverse of gv_ids; input must be sorted ascending."""
        types = np.empty(len(gv), dtype=np.uint16)
        locals_ = np.empty(len(gv), dtype=np.uint32)
        for t in self.virtual_type_ids:
            base = self.virtual_base[t]
            m = (gv >= base) & (gv < base + self.counts[t])
            types[m] = t
            locals_[m] = gv[m] - base
        return types, locals_

    def adjacency(self, rel_index):
        return self._adjacency[rel_index]

    def describe(self):
        return {
            "types": [
                {"name": t.name, "spatial": t.spatial, "count": int(self.counts[i])}
                for i, t in enumerate(self.types)
            ],
            "relations": [
                {
                    "name": r.name,
                    "src_type": self.types[r.src_type].name,
                    "dst_type": self.types[r.dst_type].name,
                    "count": int(len(self.edges[i][0])),
                }
                for i, r in enumerate(self.relations)
            ],
            "n_spatial": self.n_spatial,
            "n_virtual": self.n_virtual,
        }


class SpatialVirtualIndex:
    """CSR map: global spatial ordinal -> sorted unique global virtual ids."""

    def __init__(self, offsets, targets):
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.targets = np.asarray(targets, dtype=np.uint32)

    def neighbors(self, gs) -> np.ndarray:
        return self.targets[self.offsets[gs] : self.offsets[gs + 1]]

    def __len__(self):
        return len(self.offsets) - 1


def build_graph(schema, datasets, entities=None, branching=32):
    """Construct (TokenGraph, StaticRTree, SpatialVirtualIndex) from data.

    Nodes get dense per-type local ids in order of first appearance across
    the relation streams; edges are deduplicated per relation type, with
    same-type pairs normalized as undirected.
    """
    from .schema import load_entity_table

    if entities is None:
        entities = {
            t.name: load_entity_table(t, schema.base_dir) for t in schema.entity_types
        }
    types = [TokenType(t.name, t.spatial) for t in schema.entity_types]
    tindex = {t.name: i for i, t in enumerate(types)}
    id_maps: list[dict] = [{} for _ in types]
    relations, edges_raw = [], []

    for ds in datasets:
        si, di = tindex[ds.spec.src_type], tindex[ds.spec.dst_type]
        relations.append(RelationType(si, di, ds.spec.name))
        smap, dmap = id_maps[si], id_maps[di]
        seen = {}
        for e1, e2 in ds.pairs:
            id1 = smap.setdefault(e1, len(smap))
            id2 = dmap.setdefault(e2, len(dmap))
            if si == di and id2 < id1:
                id1, id2 = id2, id1
            seen[(id1, id2)] = None
        if seen:
            arr = np.fromiter(seen.keys(), dtype=np.dtype((np.uint32, 2)), count=len(seen))
            edges_raw.append((arr[:, 0].copy(), arr[:, 1].copy()))
        else:
            edges_raw.append((np.empty(0, np.uint32), np.empty(0, np.uint32)))

    ids = [[None] * len(m) for m in id_maps]
    for t, m in enumerate(id_maps):
        for eid, local in m.items():
            ids[t][local] = eid

    coords = []
    for t, tt in enumerate(types):
        if not tt.spatial:
            coords.append(None)
            continue
        cmap = entities[tt.name].coord_map()
        xs = np.empty(len(ids[t]))
        ys = np.empty(len(ids[t]))
        for local, eid in enumerate(ids[t]):
            if eid not in cmap:
                raise DanglingSpatialToken(
                    f"spatial {tt.name} id {eid!r} appears in a relation but has no coordinate row"
                )
            xs[local], ys[local] = cmap[eid]
        coords.append((xs, ys))

    graph = TokenGraph(types, ids, coords, relations, edges_raw)
    gir = build_gir(graph, branching=branching)
    svindex = build_svindex(graph)
    return graph, gir, svindex


def _gir_entries(graph):
    xs, ys, ts, ls = [], [], [], []
    for t in graph.spatial_type_ids:
        cx, cy = graph.coords[t]
        xs.append(cx)
        ys.append(cy)
        ts.append(np.full(len(cx), t, dtype=np.uint16))
        ls.append(np.arange(len(cx), dtype=np.uint32))
    if not xs:
        z = np.empty(0)
        return z, z, np.empty(0, np.uint16), np.empty(0, np.uint32)
    return (np.concatenate(xs), np.concatenate(ys),
            np.concatenate(ts), np.concatenate(ls))


def build_gir(graph, branching=32) -> StaticRTree:
    return StaticRTree(*_gir_entries(graph), branching=branching)


def build_gir_incremental(graph, branching=32) -> IncrementalRTree:
    """One-insert-per-token construction; same query results, slower build."""
    xs, ys, ts, ls = _gir_entries(graph)
    tree = IncrementalRTree(branching=branching)
    for i in range(len(xs)):
        tree.insert(xs[i], ys[i], int(ts[i]), int(ls[i]))
    return tree


def build_svindex(graph) -> SpatialVirtualIndex:
    gs_all, gv_all = [], []
    for rel, (src, dst) in zip(graph.relations, graph.edges):
        s_spatial = graph.types[rel.src_type].spatial
        d_spatial = graph.types[rel.dst_type].spatial
        if s_spatial == d_spatial:
            continue
        if s_spatial:
            gs = graph.spatial_base[rel.src_type] + src.astype(np.int64)
            gv = graph.virtual_base[rel.dst_type] + dst.astype(np.int64)
        else:
            gs = graph.spatial_base[rel.dst_type] + dst.astype(np.int64)
            gv = graph.virtual_base[rel.src_type] + src.astype(np.int64)
        gs_all.append(gs)
        gv_all.append(gv)
    if gs_all:
        gs = np.concatenate(gs_all)
        gv = np.concatenate(gv_all)
        pairs = np.unique(np.stack([gs, gv], axis=1), axis=0)
        gs, gv = pairs[:, 0], pairs[:, 1]
    else:
        gs = np.empty(0, np.int64)
        gv = np.empty(0, np.int64)
    offsets = np.zeros(graph.n_spatial + 1, dtype=np.int64)
    np.add.at(offsets, gs + 1, 1)
    np.cumsum(offsets, out=offsets)
    return SpatialVirtualIndex(offsets, gv.astype(np.uint32))


# -- query operations -----------------------------------------------------------


def _validated_ring(polygon):
    rx, ry = as_ring(polygon)
    if not ring_is_simple(rx, ry):
        raise InvalidPolygon("polygon self-intersects")
    return rx, ry


def rtree_query_polygon(gir: StaticRTree, polygon):
    """Spatial TokenRefs inside a simple polygon, sorted by (type, local).

    ``polygon`` is a vertex list; boundary-incident points count as inside.
    """
    rx, ry = _validated_ring(polygon)
    idx = gir.query_ring(rx, ry)
    t = gir.etype[idx].astype(np.int64)
    l = gir.elocal[idx].astype(np.int64)
    order = np.lexsort((l, t))
    return t[order].astype(np.uint16), l[order].astype(np.uint32)


def rtree_knn(gir: StaticRTree, point, k):
    """k nearest spatial TokenRefs; (distance, type, local) order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    idx = gir.knn(point[0], point[1], k)
    return gir.etype[idx], gir.elocal[idx]


# -- persistence ------------------------------------------------------------------


def save_graph(graph: TokenGraph, gir: StaticRTree, svindex: SpatialVirtualIndex, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": GRAPH_FORMAT,
        "version": GRAPH_VERSION,
        "branching": gir.branching,
        "types": [
            {"name": t.name, "spatial": t.spatial, "count": int(graph.counts[i])}
            for i, t in enumerate(graph.types)
        ],
        "relations": [
            {"name": r.name, "src_type": r.src_type, "dst_type": r.dst_type}
            for r in graph.relations
        ],
        "n_spatial": graph.n_spatial,
        "n_virtual": graph.n_virtual,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    for i, t in enumerate(graph.types):
        path = out / f"nodes_{t.name}.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if t.spatial:
                w.writerow(["external_id", "x", "y"])
                xs, ys = graph.coords[i]
                for local, eid in enumerate(graph.ids[i]):
                    w.writerow([eid, repr(float(xs[local])), repr(float(ys[local]))])
            else:
                w.writerow(["external_id"])
                for eid in graph.ids[i]:
                    w.writerow([eid])
    for k, (rel, (src, dst)) in enumerate(zip(graph.relations, graph.edges)):
        path = out / f"edges_{k}_{rel.name}.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("src_local_id,dst_local_id\n")
            for a, b in zip(src.tolist(), dst.tolist()):
                fh.write(f"{a},{b}\n")
    fileio.write_rtree_entries(out / "rtree.bin", *_gir_entries(graph))
    fileio.write_svindex(out / "svindex.bin", svindex.offsets, svindex.targets)


def load_graph(graph_dir):
    """Rebuild (graph, gir, svindex) from a saved directory."""
    d = Path(graph_dir)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise VersionMismatch(f"{d}: not a graph directory (no meta.json)")
    meta = json.loads(meta_path.read_text())
    if meta.get("format") != GRAPH_FORMAT or meta.get("version") != GRAPH_VERSION:
        raise VersionMismatch(f"{d}: unsupported graph format/version")
    types, ids, coords = [], [], []
    for td in meta["types"]:
        types.append(TokenType(td["name"], td["spatial"]))
        path = d / f"nodes_{td['name']}.csv"
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        ids.append([r["external_id"] for r in rows])
        if td["spatial"]:
            coords.append((
                np.array([float(r["x"]) for r in rows]),
                np.array([float(r["y"]) for r in rows]),
            ))
        else:
            coords.append(None)
    relations, edges = [], []
    for k, rd in enumerate(meta["relations"]):
        relations.append(RelationType(rd["src_type"], rd["dst_type"], rd["name"]))
        path = d / f"edges_{k}_{rd['name']}.csv"
        data = np.loadtxt(path, dtype=np.uint32, delimiter=",", skiprows=1, ndmin=2)
        if data.size == 0:
            edges.append((np.empty(0, np.uint32), np.empty(0, np.uint32)))
        else:
            edges.append((data[:, 0].copy(), data[:, 1].copy()))
    graph = TokenGraph(types, ids, coords, relations, edges)
    xs, ys, ts, ls = fileio.read_rtree_entries(d / "rtree.bin")
    gir = StaticRTree(xs, ys, ts, ls, branching=meta.get("branching", 32))
    offsets, targets = fileio.read_svindex(d / "svindex.bin")
    return graph, gir, SpatialVirtualIndex(offsets, targets)
