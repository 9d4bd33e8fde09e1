"""Multi-channel subgraph message passing and the boundary-to-embedding
pipeline.

Region summary vectors exchange messages along three channels whose weights
are data-derived constants: structure (DTW over per-type sorted degree
sequences), position (exponential of batch-normalized center distance), and
neighbor (0/1 top-k by center distance). Messages concatenate with the
region's own vector and pass through a learned transform. A persisted
context pool of training-time subgraphs backfills the batch at inference so
single-prompt requests still have relevance sets.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from . import numeric as nm
from .errors import BatchTooSmall, EmptyRegion, VersionMismatch
from .extraction import ExtractionScratch, augment_spatial_edges, extract_token_set
from .geometry import BoundaryPrompt, parse_boundary
from .kernels import dtw_distance

CHANNEL_ORDER = ("structure", "position", "neighbor")


@dataclass
class ChannelConfig:
    structure: bool = True
    position: bool = True
    neighbor: bool = True
    k_neighbor: int = 5
    structure_transform: str = "exp_neg_normalized"  # or "raw"
    message_agg: str = "mean"  # or "sum"

    def enabled(self):
        return [c for c in CHANNEL_ORDER if getattr(self, c)]

    def check(self):
        if self.neighbor and self.k_neighbor < 1:
            raise ValueError("k_neighbor must be >= 1 when the neighbor channel is on")
        if self.structure_transform not in ("raw", "exp_neg_normalized"):
            raise ValueError(f"unknown structure_transform {self.structure_transform!r}")
        if self.message_agg not in ("mean", "sum"):
            raise ValueError(f"unknown message_agg {self.message_agg!r}")
        return self

    def to_json(self):
        return {k: getattr(self, k) for k in
                ("structure", "position", "neighbor", "k_neighbor",
                 "structure_transform", "message_agg")}

    @classmethod
    def from_json(cls, doc):
        return cls(**doc).check()


def dtw(a, b) -> float:
    """Alignment distance between two numeric sequences (any lengths)."""
    return float(dtw_distance(np.asarray(a, dtype=np.float64),
                              np.asarray(b, dtype=np.float64)))


def raw_structure_matrix(degree_seqs, cached_block=None) -> np.ndarray:
    """Pairwise sums of per-type DTW distances; symmetric, zero diagonal.

    ``cached_block`` optionally provides the precomputed lower-right block
    (pool-vs-pool pairs) to avoid recomputation across calls.
    """
    n = len(degree_seqs)
    raw = np.zeros((n, n))
    start_cached = n - (len(cached_block) if cached_block is not None else 0)
    if cached_block is not None:
        raw[start_cached:, start_cached:] = cached_block
    for i in range(n):
        for j in range(i + 1, n):
            if i >= start_cached and j >= start_cached:
                continue
            s = 0.0
            for seq_i, seq_j in zip(degree_seqs[i], degree_seqs[j]):
                s += dtw_distance(seq_i, seq_j)
            raw[i, j] = raw[j, i] = s
    return raw


def gamma_structure(degree_seqs, transform="exp_neg_normalized", cached_block=None):
    """Structure-channel weight matrix over a batch of subgraphs.

    raw: the DTW sums themselves (the literal definition, which weights
    dissimilar regions more). exp_neg_normalized (default): min-max
    normalize the raw sums over distinct pairs and map through exp(-x), so
    similar structure exchanges stronger messages.
    """
    raw = raw_structure_matrix(degree_seqs, cached_block=cached_block)
    if transform == "raw":
        return raw
    n = len(raw)
    if n < 2:
        return np.ones_like(raw)
    off = ~np.eye(n, dtype=bool)
    lo, hi = raw[off].min(), raw[off].max()
    if hi == lo:
        norm = np.zeros_like(raw)
    else:
        norm = (raw - lo) / (hi - lo)
    return np.exp(-norm)


def center_distances(centers) -> np.ndarray:
    c = np.asarray(centers, dtype=np.float64)
    diff = c[:, None, :] - c[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def gamma_position(centers) -> np.ndarray:
    """exp(-normalized center distance); degenerate batches weigh 1."""
    n = len(centers)
    if n < 2:
        raise BatchTooSmall("position channel needs a batch of >= 2 subgraphs")
    d = center_distances(centers)
    off = ~np.eye(n, dtype=bool)
    lo, hi = d[off].min(), d[off].max()
    if hi == lo:
        norm = np.zeros_like(d)
    else:
        norm = (d - lo) / (hi - lo)
        norm[~off] = 0.0
    return np.exp(-norm)


def gamma_neighbor(centers, k_neighbor) -> np.ndarray:
    """0/1 selection of each subgraph's k nearest others (ties by index)."""
    n = len(centers)
    if n < 2:
        raise BatchTooSmall("neighbor channel needs a batch of >= 2 subgraphs")
    d = center_distances(centers)
    w = np.zeros((n, n))
    for i in range(n):
        order = np.lexsort((np.arange(n), d[i]))
        order = order[order != i][:k_neighbor]
        w[i, order] = 1.0
    return w


def channel_weights(config: ChannelConfig, centers, degree_seqs, cached_structure=None):
    """All enabled channels' weight matrices for one batch."""
    out = {}
    if config.structure:
        out["structure"] = gamma_structure(
            degree_seqs, config.structure_transform, cached_block=cached_structure)
    if config.position:
        out["position"] = gamma_position(centers)
    if config.neighbor:
        out["neighbor"] = gamma_neighbor(centers, config.k_neighbor)
    return out


class RegionModelParams:
    """Learned transform per message-passing layer plus the loss heads."""

    def __init__(self, w_layers, b_layers, m_flow, w_pred):
        self.w_layers: list[nm.Tensor] = w_layers
        self.b_layers: list[nm.Tensor] = b_layers
        self.m_flow = m_flow
        self.w_pred = w_pred

    @property
    def n_layers(self):
        return len(self.w_layers)

    @classmethod
    def init(cls, in_dim, d_region, n_channels, n_layers=1, seed=0):
        rng = np.random.default_rng(seed)
        w_layers, b_layers = [], []
        for layer in range(n_layers):
            src = in_dim if layer == 0 else d_region
            width = (1 + n_channels) * src
            w = rng.normal(0.0, 1.0 / np.sqrt(width), size=(width, d_region))
            w_layers.append(nm.tensor(w, requires_grad=True))
            b_layers.append(nm.tensor(np.zeros((1, d_region)), requires_grad=True))
        m_flow = nm.tensor(rng.normal(0.0, 1.0 / np.sqrt(d_region), (d_region, d_region)),
                           requires_grad=True)
        w_pred = nm.tensor(rng.normal(0.0, 1.0 / np.sqrt(d_region), (d_region, 2)),
                           requires_grad=True)
        return cls(w_layers, b_layers, m_flow, w_pred)

    def params(self):
        return self.w_layers + self.b_layers + [self.m_flow, self.w_pred]

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i, (w, b) in enumerate(zip(self.w_layers, self.b_layers)):
            fileio.write_emb(out / f"subgraph_w{i}.emb", w.data)
            fileio.write_emb(out / f"subgraph_b{i}.emb", b.data)
        fileio.write_emb(out / "flow_bilinear.emb", self.m_flow.data)
        fileio.write_emb(out / "pred_head.emb", self.w_pred.data)

    @classmethod
    def load(cls, in_dir, n_layers):
        d = Path(in_dir)
        w_layers = [nm.tensor(fileio.read_emb(d / f"subgraph_w{i}.emb"), requires_grad=True)
                    for i in range(n_layers)]
        b_layers = [nm.tensor(fileio.read_emb(d / f"subgraph_b{i}.emb"), requires_grad=True)
                    for i in range(n_layers)]
        m_flow = nm.tensor(fileio.read_emb(d / "flow_bilinear.emb"), requires_grad=True)
        w_pred = nm.tensor(fileio.read_emb(d / "pred_head.emb"), requires_grad=True)
        return cls(w_layers, b_layers, m_flow, w_pred)


def message_pass(h: nm.Tensor, weights: dict, config: ChannelConfig,
                 w: nm.Tensor, b: nm.Tensor) -> nm.Tensor:
    """One inter-subgraph layer: gather channel messages, concat, transform.

    Relevance sets: structure/position take all other batch members,
    neighbor takes its own top-k selection. Empty sets yield zero messages.
    """
    n = h.shape[0]
    off = ~np.eye(n, dtype=bool)
    blocks = [h]
    for channel in CHANNEL_ORDER:
        if not getattr(config, channel):
            continue
        gamma = weights[channel] * off
        if config.message_agg == "mean":
            sizes = np.full(n, n - 1.0) if channel != "neighbor" else gamma.sum(axis=1)
            inv = np.divide(1.0, sizes, out=np.zeros_like(sizes), where=sizes > 0)
            gamma = gamma * inv[:, None]
        msg = nm.matmul(nm.tensor(gamma), h)
        blocks.append(msg)
    cat = nm.concat_cols(blocks)
    return nm.relu(nm.add(nm.matmul(cat, w), b))


def forward_regions(h_s: nm.Tensor, centers, degree_seqs, params: RegionModelParams,
                    config: ChannelConfig, cached_structure=None) -> nm.Tensor:
    """Apply all message-passing layers to a batch of region summaries."""
    n = h_s.shape[0]
    if n >= 2:
        weights = channel_weights(config, centers, degree_seqs, cached_structure)
    else:
        weights = {c: np.zeros((n, n)) for c in config.enabled()}
    h = h_s
    for w, b in zip(params.w_layers, params.b_layers):
        h = message_pass(h, weights, config, w, b)
    return h


# --- context pool ---------------------------------------------------------------


@dataclass
class PoolEntry:
    node_type: np.ndarray
    node_local: np.ndarray
    center: tuple[float, float]
    h_s: np.ndarray  # (1, in_dim)
    degree_seqs: list[np.ndarray]
    boundary: BoundaryPrompt | None = None


@dataclass
class ContextPool:
    entries: list[PoolEntry] = field(default_factory=list)
    _raw_structure: np.ndarray | None = None

    def __len__(self):
        return len(self.entries)

    def centers(self):
        return [e.center for e in self.entries]

    def degree_seqs(self):
        return [e.degree_seqs for e in self.entries]

    def h_s_matrix(self):
        if not self.entries:
            return np.zeros((0, 0))
        return np.vstack([e.h_s for e in self.entries])

    def raw_structure(self):
        """Cached pool-vs-pool DTW block."""
        if self._raw_structure is None:
            self._raw_structure = raw_structure_matrix(self.degree_seqs())
        return self._raw_structure

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(fileio.BIN_MAGIC)
            fh.write(struct.pack("<IQ", fileio.VERSION, len(self.entries)))
            for e in self.entries:
                n = len(e.node_type)
                fh.write(struct.pack("<Q", n))
                fh.write(np.ascontiguousarray(e.node_type, dtype="<u2").tobytes())
                fh.write(np.ascontiguousarray(e.node_local, dtype="<u4").tobytes())
                fh.write(struct.pack("<dd", *e.center))
                fh.write(struct.pack("<I", e.h_s.size))
                fh.write(np.ascontiguousarray(e.h_s, dtype="<f8").tobytes())
                fh.write(struct.pack("<H", len(e.degree_seqs)))
                for seq in e.degree_seqs:
                    fh.write(struct.pack("<Q", len(seq)))
                    fh.write(np.ascontiguousarray(seq, dtype="<f8").tobytes())
                blob = b"" if e.boundary is None else json.dumps(
                    e.boundary.to_geojson()).encode("utf-8")
                fh.write(struct.pack("<I", len(blob)))
                fh.write(blob)

    @classmethod
    def load(cls, path):
        entries = []
        with open(path, "rb") as fh:
            if fh.read(4) != fileio.BIN_MAGIC:
                raise VersionMismatch(f"{path}: bad magic")
            version, count = struct.unpack("<IQ", fh.read(12))
            if version != fileio.VERSION:
                raise VersionMismatch(f"{path}: unsupported version {version}")
            for _ in range(count):
                (n,) = struct.unpack("<Q", fh.read(8))
                node_type = np.frombuffer(fh.read(2 * n), dtype="<u2").astype(np.uint16)
                node_local = np.frombuffer(fh.read(4 * n), dtype="<u4").astype(np.uint32)
                center = struct.unpack("<dd", fh.read(16))
                (hs_len,) = struct.unpack("<I", fh.read(4))
                h_s = np.frombuffer(fh.read(8 * hs_len), dtype="<f8").reshape(1, -1).copy()
                (n_types,) = struct.unpack("<H", fh.read(2))
                seqs = []
                for _ in range(n_types):
                    (m,) = struct.unpack("<Q", fh.read(8))
                    seqs.append(np.frombuffer(fh.read(8 * m), dtype="<f8").copy())
                (blob_len,) = struct.unpack("<I", fh.read(4))
                boundary = None
                if blob_len:
                    boundary = parse_boundary(json.loads(fh.read(blob_len).decode("utf-8")))
                entries.append(PoolEntry(node_type, node_local, center, h_s, seqs, boundary))
        return cls(entries)


# --- the end-to-end embedder --------------------------------------------------------


@dataclass
class ModelConfig:
    dim: int = 16
    d_region: int = 144
    enc_layers: int = 2
    sub_layers: int = 1
    k_aug: int = 4
    d_max: float = 10.0
    spatial_only_aggregation: bool = False
    channels: ChannelConfig = field(default_factory=ChannelConfig)

    def to_json(self):
        doc = {k: getattr(self, k) for k in
               ("dim", "d_region", "enc_layers", "sub_layers", "k_aug", "d_max",
                "spatial_only_aggregation")}
        doc["channels"] = self.channels.to_json()
        return doc

    @classmethod
    def from_json(cls, doc):
        doc = dict(doc)
        channels = ChannelConfig.from_json(doc.pop("channels"))
        return cls(channels=channels, **doc)


class RegionEmbedder:
    """Frozen model bundle: boundary prompts in, region embeddings out."""

    def __init__(self, graph, gir, svindex, table, encoder, params,
                 config: ModelConfig, pool: ContextPool):
        from .embedding import aggregate_region, encode_nodes  # cycle guard

        self._encode = encode_nodes
        self._aggregate = aggregate_region
        self.graph = graph
        self.gir = gir
        self.svindex = svindex
        self.table = table
        self.encoder = encoder
        self.params = params
        self.config = config
        self.pool = pool
        self.scratch = ExtractionScratch(graph)

    def prepare_subgraph(self, boundary):
        sub = extract_token_set(boundary, self.graph, self.gir, self.svindex, self.scratch)
        augment_spatial_edges(sub, self.config.k_aug, self.config.d_max)
        return sub

    def summarize(self, subgraphs) -> nm.Tensor:
        """Encoded, aggregated region vectors for a list of subgraphs."""
        rows = []
        for sub in subgraphs:
            h = self._encode(sub, self.table, self.encoder)
            rows.append(self._aggregate(h, sub, self.config.spatial_only_aggregation))
        return nm.concat_rows(rows)

    def embed(self, boundaries):
        """Embeddings for each boundary, in order; per-item error strings.

        The batch is supplemented with the context pool so relevance sets
        are non-degenerate even for a single prompt.
        """
        subs, errors, keep = [], [], []
        for i, b in enumerate(boundaries):
            try:
                subs.append(self.prepare_subgraph(parse_boundary(b)))
                errors.append(None)
                keep.append(i)
            except EmptyRegion:
                errors.append("empty_region")
        if not subs:
            return np.zeros((0, self.params.w_layers[-1].shape[1])), errors, []
        h_prompt = self.summarize(subs)
        pool_h = self.pool.h_s_matrix()
        if len(self.pool):
            h_all = nm.concat_rows([h_prompt, nm.tensor(pool_h)])
            centers = [s.center for s in subs] + self.pool.centers()
            seqs = [s.degree_sequences() for s in subs] + self.pool.degree_seqs()
            cached = self.pool.raw_structure() if self.config.channels.structure else None
        else:
            h_all = h_prompt
            centers = [s.center for s in subs]
            seqs = [s.degree_sequences() for s in subs]
            cached = None
        out = forward_regions(h_all, centers, seqs, self.params,
                              self.config.channels, cached_structure=cached)
        emb = out.data[: len(subs)].copy()
        return emb, errors, subs

    def embed_pool(self) -> np.ndarray:
        """Final embeddings of the pool regions themselves (for similarity)."""
        if not len(self.pool):
            return np.zeros((0, self.params.w_layers[-1].shape[1]))
        h = nm.tensor(self.pool.h_s_matrix())
        out = forward_regions(h, self.pool.centers(), self.pool.degree_seqs(),
                              self.params, self.config.channels,
                              cached_structure=self.pool.raw_structure())
        return out.data.copy()
