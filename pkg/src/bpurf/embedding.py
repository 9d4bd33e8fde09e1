"""Token embeddings and their two consumers: node encoding and region
aggregation.

Initialization is a translation-style margin-ranking fit over the graph's
typed edges (per-relation projection matrix and offset vector). Node
encoding refines embeddings inside one region subgraph with relation-typed
mean aggregation, and a region's summary vector is the per-type SUM of its
node embeddings concatenated in type order. SUM (rather than MEAN) keeps
region size information and makes the summary additive over disjoint token
sets, which is what lets a linear head's predictions decompose over
subregions.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import fileio
from . import numeric as nm
from .errors import EmptyGraph, VersionMismatch

AUG_RELATION = "proximity"  # extra encoder relation slot for augmented edges


class TokenEmbeddingTable:
    def __init__(self, tables, rel_vecs, rel_mats, dim):
        self.tables: list[nm.Tensor] = tables  # aligned with graph.types
        self.rel_vecs: list[nm.Tensor] = rel_vecs  # aligned with graph.relations
        self.rel_mats: list[nm.Tensor] = rel_mats
        self.dim = dim

    def params(self):
        return self.tables + self.rel_vecs + self.rel_mats

    def save(self, out_dir, graph):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for t, table in zip(graph.types, self.tables):
            fileio.write_emb(out / f"emb_{t.name}.emb", table.data)
        with open(out / "relations.bin", "wb") as fh:
            fh.write(fileio.BIN_MAGIC)
            fh.write(struct.pack("<IQI", fileio.VERSION, len(self.rel_vecs), self.dim))
            for v, m in zip(self.rel_vecs, self.rel_mats):
                fh.write(np.ascontiguousarray(v.data, dtype="<f4").tobytes())
                fh.write(np.ascontiguousarray(m.data, dtype="<f4").tobytes())

    @classmethod
    def load(cls, in_dir, graph):
        d = Path(in_dir)
        tables = [
            nm.tensor(fileio.read_emb(d / f"emb_{t.name}.emb"), requires_grad=True)
            for t in graph.types
        ]
        with open(d / "relations.bin", "rb") as fh:
            if fh.read(4) != fileio.BIN_MAGIC:
                raise VersionMismatch(f"{d}/relations.bin: bad magic")
            version, n_rel, dim = struct.unpack("<IQI", fh.read(16))
            if version != fileio.VERSION:
                raise VersionMismatch(f"{d}/relations.bin: unsupported version")
            vecs, mats = [], []
            for _ in range(n_rel):
                v = np.frombuffer(fh.read(dim * 4), dtype="<f4").astype(np.float64)
                m = np.frombuffer(fh.read(dim * dim * 4), dtype="<f4").astype(np.float64)
                vecs.append(nm.tensor(v.reshape(1, dim), requires_grad=True))
                mats.append(nm.tensor(m.reshape(dim, dim), requires_grad=True))
        return cls(tables, vecs, mats, dim)


def _eps_rows(n):
    return nm.tensor(np.full((n, 1), 1e-12))


def _edge_scores(table, rel_idx, src_type, dst_type, heads, tails):
    """Translation scores ||proj(h) + r - proj(t)|| as a (n, 1) tensor."""
    m = table.rel_mats[rel_idx]
    r = table.rel_vecs[rel_idx]
    ph = nm.matmul(nm.gather_rows(table.tables[src_type], heads), m)
    pt = nm.matmul(nm.gather_rows(table.tables[dst_type], tails), m)
    diff = nm.add(nm.sub(ph, pt), r)
    return nm.sqrt(nm.add(nm.reduce_sum(nm.square(diff), axis=1), _eps_rows(len(heads))))


def transr_scores(table, graph, rel_idx, heads, tails) -> np.ndarray:
    """Evaluation-only scores for given (head, tail) pairs of one relation."""
    rel = graph.relations[rel_idx]
    s = _edge_scores(table, rel_idx, rel.src_type, rel.dst_type,
                     np.asarray(heads), np.asarray(tails))
    return s.data[:, 0].copy()


def init_transr(graph, d, epochs=50, margin=1.0, neg_per_pos=4, lr=1e-2, seed=0) -> TokenEmbeddingTable:
    """Margin-ranking initialization of the token dictionary.

    Negatives corrupt the tail uniformly within its type; embeddings are
    clipped to the unit ball after each epoch. A graph with no edges keeps
    its random initialization.
    """
    if d < 2:
        raise ValueError("embedding dimension must be >= 2")
    if int(graph.counts.sum()) == 0:
        raise EmptyGraph("cannot initialize embeddings for an empty graph")
    rng = np.random.default_rng(seed)
    tables = []
    for c in graph.counts:
        t = rng.normal(0.0, 1.0 / np.sqrt(d), size=(int(c), d))
        norms = np.linalg.norm(t, axis=1, keepdims=True)
        t = t / np.maximum(norms, 1.0)
        tables.append(nm.tensor(t, requires_grad=True))
    rel_vecs = [
        nm.tensor(rng.normal(0.0, 1.0 / np.sqrt(d), size=(1, d)), requires_grad=True)
        for _ in graph.relations
    ]
    rel_mats = [
        nm.tensor(np.eye(d), requires_grad=True) for _ in graph.relations
    ]
    table = TokenEmbeddingTable(tables, rel_vecs, rel_mats, d)

    live = [k for k, (src, _) in enumerate(graph.edges) if len(src)]
    if not live:
        return table
    params = table.params()
    state = nm.AdamState(params, lr=lr)
    for _ in range(epochs):
        with nm.GradTape() as tape:
            total = None
            for k in live:
                rel = graph.relations[k]
                src, dst = graph.edges[k]
                n = len(src)
                n_dst = graph.n_tokens(rel.dst_type)
                neg_tails = rng.integers(0, n_dst, size=n * neg_per_pos)
                pos = _edge_scores(table, k, rel.src_type, rel.dst_type, src, dst)
                neg = _edge_scores(
                    table, k, rel.src_type, rel.dst_type,
                    np.repeat(np.asarray(src), neg_per_pos), neg_tails,
                )
                pos_rep = nm.gather_rows(pos, np.repeat(np.arange(n), neg_per_pos))
                viol = nm.relu(nm.add(nm.sub(pos_rep, neg), nm.tensor(np.full((n * neg_per_pos, 1), margin))))
                term = nm.reduce_sum(viol)
                total = term if total is None else nm.add(total, term)
            loss = total
        tape.backward(loss, params=params)
        nm.adam_step(state)
        for t in table.tables:
            norms = np.linalg.norm(t.data, axis=1, keepdims=True)
            np.divide(t.data, np.maximum(norms, 1.0), out=t.data)
    return table


class EncoderParams:
    """Per-type self transforms/biases and per-relation neighbor transforms.

    The last relation slot handles proximity-augmented edges.
    """

    def __init__(self, w_self, b_self, w_rel, layers):
        self.w_self: list[nm.Tensor] = w_self
        self.b_self: list[nm.Tensor] = b_self
        self.w_rel: list[nm.Tensor] = w_rel
        self.layers = layers

    @classmethod
    def init(cls, graph, d, layers=2, seed=0):
        if layers < 1:
            raise ValueError("encoder needs at least one layer")
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(d)
        w_self = [nm.tensor(np.eye(d) + rng.normal(0, 0.1 * scale, (d, d)), requires_grad=True)
                  for _ in graph.types]
        b_self = [nm.tensor(np.zeros((1, d)), requires_grad=True) for _ in graph.types]
        w_rel = [nm.tensor(rng.normal(0, scale, (d, d)), requires_grad=True)
                 for _ in range(len(graph.relations) + 1)]
        return cls(w_self, b_self, w_rel, layers)

    def params(self):
        return self.w_self + self.b_self + self.w_rel

    def save(self, out_dir, graph):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for t, w, b in zip(graph.types, self.w_self, self.b_self):
            fileio.write_emb(out / f"enc_self_{t.name}.emb", w.data)
            fileio.write_emb(out / f"enc_bias_{t.name}.emb", b.data)
        for k, w in enumerate(self.w_rel):
            fileio.write_emb(out / f"enc_rel_{k}.emb", w.data)

    @classmethod
    def load(cls, in_dir, graph, layers):
        d = Path(in_dir)
        w_self = [nm.tensor(fileio.read_emb(d / f"enc_self_{t.name}.emb"), requires_grad=True)
                  for t in graph.types]
        b_self = [nm.tensor(fileio.read_emb(d / f"enc_bias_{t.name}.emb"), requires_grad=True)
                  for t in graph.types]
        w_rel = []
        for k in range(len(graph.relations) + 1):
            w_rel.append(nm.tensor(fileio.read_emb(d / f"enc_rel_{k}.emb"), requires_grad=True))
        return cls(w_self, b_self, w_rel, layers)


def _type_segments(subgraph):
    """Contiguous (type, start, end) runs of the subgraph's node array."""
    segs = []
    nt = subgraph.node_type
    if len(nt) == 0:
        return segs
    starts = np.flatnonzero(np.r_[True, nt[1:] != nt[:-1]])
    ends = np.r_[starts[1:], len(nt)]
    for s, e in zip(starts, ends):
        segs.append((int(nt[s]), int(s), int(e)))
    return segs


def encode_nodes(subgraph, table: TokenEmbeddingTable, encoder: EncoderParams) -> nm.Tensor:
    """Subgraph-restricted relation-typed mean-aggregation encoding.

    h^(0) comes from the token table; each layer applies
    relu(W_self h_v + mean_rel(W_rel mean_{u in N_rel(v)} h_u) + bias), with
    neighborhoods limited to the subgraph's induced plus augmented edges.
    Isolated nodes keep a zero neighbor term.
    """
    segs = _type_segments(subgraph)
    n = len(subgraph.node_type)
    h = nm.concat_rows([
        nm.gather_rows(table.tables[t], subgraph.node_local[s:e]) for t, s, e in segs
    ])
    edge_lists = list(subgraph.edges_by_rel) + [(subgraph.aug_src, subgraph.aug_dst)]
    # per-relation neighbor structure is static across layers
    static = []
    active = np.zeros(n)
    for k, (src, dst) in enumerate(edge_lists):
        if len(src) == 0:
            static.append(None)
            continue
        into = np.concatenate([dst, src]).astype(np.int64)
        outof = np.concatenate([src, dst]).astype(np.int64)
        counts = np.bincount(into, minlength=n).astype(np.float64)
        inv = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
        static.append((outof, into, inv))
        active += counts > 0
    inv_active = np.divide(1.0, active, out=np.zeros_like(active), where=active > 0)

    for _ in range(encoder.layers):
        neigh = None
        for k, meta in enumerate(static):
            if meta is None:
                continue
            outof, into, inv = meta
            msg_sum = nm.scatter_add_rows(nm.gather_rows(h, outof), into, n)
            term = nm.matmul(nm.scale_rows(msg_sum, inv), encoder.w_rel[k])
            neigh = term if neigh is None else nm.add(neigh, term)
        self_parts = []
        for t, s, e in segs:
            block = nm.gather_rows(h, np.arange(s, e))
            self_parts.append(nm.add(nm.matmul(block, encoder.w_self[t]), encoder.b_self[t]))
        out = nm.concat_rows(self_parts)
        if neigh is not None:
            out = nm.add(out, nm.scale_rows(neigh, inv_active))
        h = nm.relu(out)
    return h


def aggregate_embeddings(h: nm.Tensor, node_types, n_types, spatial_flags=None,
                         spatial_only=False) -> nm.Tensor:
    """Per-type SUM of rows, concatenated in type order: a (1, n_types*d) row.

    Types with no nodes contribute zero blocks; with ``spatial_only`` the
    virtual-type blocks are zeroed (ablation switch), keeping the layout.
    """
    node_types = np.asarray(node_types)
    d = h.shape[1]
    parts = []
    for t in range(n_types):
        if spatial_only and spatial_flags is not None and not spatial_flags[t]:
            parts.append(nm.zeros(1, d))
            continue
        pos = np.flatnonzero(node_types == t)
        if len(pos) == 0:
            parts.append(nm.zeros(1, d))
        else:
            parts.append(nm.reduce_sum(nm.gather_rows(h, pos), axis=0))
    return nm.concat_cols(parts)


def aggregate_region(h: nm.Tensor, subgraph, spatial_only=False) -> nm.Tensor:
    graph = subgraph.graph
    flags = [t.spatial for t in graph.types]
    return aggregate_embeddings(h, subgraph.node_type, len(graph.types),
                                spatial_flags=flags, spatial_only=spatial_only)
