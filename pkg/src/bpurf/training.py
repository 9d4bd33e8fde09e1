"""Contrastive training over freshly sampled region boundaries.

Each step samples a batch of rectangular boundaries (or cycles pre-sampled
batches in mini mode), builds a jittered positive for every anchor, runs the
full extract-encode-aggregate-message-pass pipeline on tape, and descends a
weighted sum of in-batch InfoNCE, trip-flow reconstruction, and flow-total
prediction losses. The finished model directory carries the token table,
encoder, subgraph transform, a context pool of late-training subgraphs, a
JSONL loss log, and the sampled-boundary hashes used to keep evaluation
regions provably separate.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numeric as nm
from .embedding import EncoderParams, TokenEmbeddingTable, aggregate_region, encode_nodes, init_transr
from .errors import BatchTooSmall, EmptyRegion, MissingFile, NonFiniteValue, SamplerExhausted
from .extraction import ExtractionScratch, augment_spatial_edges, extract_token_set
from .geometry import BoundaryPrompt, points_in_prompt
from .graph import load_graph
from .model import (
    ChannelConfig,
    ContextPool,
    ModelConfig,
    PoolEntry,
    RegionEmbedder,
    RegionModelParams,
    channel_weights,
    forward_regions,
)

MODEL_FORMAT = "bpurf-model"
MODEL_VERSION = 1


@dataclass
class TrainingConfig:
    batch_size: int = 16
    steps: int = 200
    tau: float = 0.1
    lambda_nce: float = 1.0
    lambda_mob: float = 1.0
    lambda_pred: float = 0.5
    s_min: float = 0.10
    s_max: float = 0.30
    m_min: int = 5
    max_retries: int = 200
    rho: float = 0.25
    mini_mode: bool = False
    n_presampled_batches: int = 8
    lr: float = 1e-3
    pool_size: int = 64
    train_token_tables: bool = True
    seed: int = 0

    def check(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if not (0 < self.s_min <= self.s_max <= 1.0):
            raise ValueError("need 0 < s_min <= s_max <= 1")
        if not (0 < self.rho <= 0.5):
            raise ValueError("rho must be in (0, 0.5]")
        return self

    def to_json(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, doc):
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        return cls(**known).check()


# --- region sampling -----------------------------------------------------------


def boundary_hash(boundary: BoundaryPrompt) -> str:
    h = hashlib.sha256()
    for part in boundary.parts:
        h.update(part.exterior[0].tobytes())
        h.update(part.exterior[1].tobytes())
    return h.hexdigest()[:16]


def sample_region_boundary(rng, bbox, config: TrainingConfig, gir) -> BoundaryPrompt:
    """Rectangle with uniform center and per-axis extent in [s_min, s_max];
    resampled until it holds at least m_min spatial tokens."""
    x0, y0, x1, y1 = bbox
    ww, hh = x1 - x0, y1 - y0
    for _ in range(config.max_retries):
        cx = rng.uniform(x0, x1)
        cy = rng.uniform(y0, y1)
        w = rng.uniform(config.s_min, config.s_max) * ww
        h = rng.uniform(config.s_min, config.s_max) * hh
        b = BoundaryPrompt.rect(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
        if len(gir.query_rect(*b.bbox())) >= config.m_min:
            return b
    raise SamplerExhausted(
        f"no boundary with >= {config.m_min} tokens after {config.max_retries} draws"
    )


def make_positive(boundary: BoundaryPrompt, rng, rho: float) -> BoundaryPrompt:
    """Translate by a random direction, each axis scaled by its own extent.

    The per-axis shift is at most rho * extent, so rectangles keep at least
    (1 - rho)^2 >= (1 - 2 rho)^2 of their area overlapping the original.
    """
    x0, y0, x1, y1 = boundary.bbox()
    theta = rng.uniform(0.0, 2.0 * np.pi)
    u = rng.uniform()
    dx = u * rho * (x1 - x0) * np.cos(theta)
    dy = u * rho * (y1 - y0) * np.sin(theta)
    return boundary.translate(dx, dy)


# --- trip flows ---------------------------------------------------------------------


@dataclass
class FlowMatrix:
    flow: np.ndarray  # (B, B) trips from region i to region j
    outflow: np.ndarray  # (B,) trips originating in region i (any destination)
    inflow: np.ndarray  # (B,) trips ending in region i


def load_trips(path):
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"trips file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        ox, oy, dx, dy = [], [], [], []
        for row in reader:
            ox.append(float(row["origin_x"]))
            oy.append(float(row["origin_y"]))
            dx.append(float(row["dest_x"]))
            dy.append(float(row["dest_y"]))
    return (np.asarray(ox), np.asarray(oy), np.asarray(dx), np.asarray(dy))


def flow_matrix(boundaries, trips) -> FlowMatrix:
    ox, oy, dx, dy = trips
    n = len(boundaries)
    o_in = np.zeros((n, len(ox)), dtype=bool)
    d_in = np.zeros((n, len(ox)), dtype=bool)
    for i, b in enumerate(boundaries):
        o_in[i] = points_in_prompt(ox, oy, b)
        d_in[i] = points_in_prompt(dx, dy, b)
    flow = (o_in.astype(np.int64) @ d_in.T.astype(np.int64))
    return FlowMatrix(flow=flow, outflow=o_in.sum(axis=1), inflow=d_in.sum(axis=1))


# --- losses ----------------------------------------------------------------------------


def info_nce_loss(anchors: nm.Tensor, positives: nm.Tensor, tau: float) -> nm.Tensor:
    """Sum over anchors of -log(exp(r_i.p_i/tau) / sum_j exp(r_i.p_j/tau)).

    Embeddings are L2-normalized first; anchor i's negatives are the other
    anchors' positives, so the denominator is the full row. A batch of one
    has no negatives and scores exactly zero.
    """
    b = anchors.shape[0]
    if b < 1:
        raise BatchTooSmall("InfoNCE needs at least one anchor")
    rn = nm.l2_normalize_rows(anchors)
    pn = nm.l2_normalize_rows(positives)
    sims = nm.scale(nm.matmul(rn, nm.transpose(pn)), 1.0 / tau)
    row_max = sims.data.max(axis=1, keepdims=True)  # detached stabilizer
    shifted = nm.add(sims, nm.tensor(np.repeat(-row_max, b, axis=1)))
    lse = nm.add(nm.log(nm.reduce_sum(nm.exp(shifted), axis=1)), nm.tensor(row_max))
    diag = nm.reduce_sum(nm.mul(sims, nm.tensor(np.eye(b))), axis=1)
    return nm.reduce_sum(nm.sub(lse, diag))


def mobility_loss(embeddings: nm.Tensor, flows: FlowMatrix, m_flow: nm.Tensor) -> nm.Tensor:
    """MSE between softmaxed bilinear scores and row-normalized log flows."""
    b = embeddings.shape[0]
    t = np.log1p(flows.flow.astype(np.float64))
    sums = t.sum(axis=1, keepdims=True)
    target = np.where(sums > 0, t / np.maximum(sums, 1e-300), 1.0 / b)
    scores = nm.matmul(nm.matmul(embeddings, m_flow), nm.transpose(embeddings))
    pred = nm.softmax_row(scores)
    return nm.reduce_mean(nm.square(nm.sub(pred, nm.tensor(target))))


def pred_loss(embeddings: nm.Tensor, flows: FlowMatrix, w_pred: nm.Tensor) -> nm.Tensor:
    """MSE of a linear head against z-scored (log out-trips, log in-trips)."""
    t = np.stack([np.log1p(flows.outflow.astype(np.float64)),
                  np.log1p(flows.inflow.astype(np.float64))], axis=1)
    mean = t.mean(axis=0, keepdims=True)
    sd = t.std(axis=0, keepdims=True)
    target = np.where(sd > 0, (t - mean) / np.maximum(sd, 1e-300), 0.0)
    pred = nm.matmul(embeddings, w_pred)
    return nm.reduce_mean(nm.square(nm.sub(pred, nm.tensor(target))))


# --- training loop ------------------------------------------------------------------------


@dataclass
class _Batch:
    anchors: list
    positives: list
    subs: list  # anchor subgraphs then positive subgraphs
    flows: FlowMatrix
    weights: dict
    signature: str


class Trainer:
    def __init__(self, graph, gir, svindex, table: TokenEmbeddingTable,
                 trips, model_config: ModelConfig, config: TrainingConfig):
        config.check()
        model_config.channels.check()
        self.graph = graph
        self.gir = gir
        self.svindex = svindex
        self.table = table
        self.trips = trips
        self.mc = model_config
        self.tc = config
        self.rng = np.random.default_rng(config.seed)
        self.scratch = ExtractionScratch(graph)
        xs = np.concatenate([graph.coords[t][0] for t in graph.spatial_type_ids])
        ys = np.concatenate([graph.coords[t][1] for t in graph.spatial_type_ids])
        self.bbox = (xs.min(), ys.min(), xs.max(), ys.max())
        self.encoder = EncoderParams.init(graph, model_config.dim,
                                          model_config.enc_layers, config.seed + 1)
        in_dim = len(graph.types) * model_config.dim
        n_channels = len(model_config.channels.enabled())
        self.params = RegionModelParams.init(in_dim, model_config.d_region,
                                             n_channels, model_config.sub_layers,
                                             config.seed + 2)
        self.trainable = self.encoder.params() + self.params.params()
        if config.train_token_tables:
            self.trainable = [t for t in table.tables] + self.trainable
        self.opt = nm.AdamState(self.trainable, lr=config.lr)
        self.log: list[dict] = []
        self.boundary_hashes: list[str] = []
        self._pool_ring: list = []

    def _prepare(self, boundary):
        sub = extract_token_set(boundary, self.graph, self.gir, self.svindex, self.scratch)
        augment_spatial_edges(sub, self.mc.k_aug, self.mc.d_max)
        return sub

    def _make_batch(self) -> _Batch:
        b = self.tc.batch_size
        anchors, positives, subs_a, subs_p = [], [], [], []
        while len(anchors) < b:
            boundary = sample_region_boundary(self.rng, self.bbox, self.tc, self.gir)
            sub_a = self._prepare(boundary)
            pos = pos_sub = None
            for _ in range(self.tc.max_retries):
                cand = make_positive(boundary, self.rng, self.tc.rho)
                try:
                    pos_sub = self._prepare(cand)
                    pos = cand
                    break
                except EmptyRegion:
                    continue
            if pos is None:
                raise SamplerExhausted("could not jitter a non-empty positive")
            anchors.append(boundary)
            positives.append(pos)
            subs_a.append(sub_a)
            subs_p.append(pos_sub)
        subs = subs_a + subs_p
        flows = flow_matrix(anchors, self.trips)
        weights = channel_weights(self.mc.channels,
                                  [s.center for s in subs],
                                  [s.degree_sequences() for s in subs]) \
            if len(subs) >= 2 else {}
        sig = hashlib.sha256("".join(boundary_hash(a) for a in anchors).encode()).hexdigest()[:12]
        return _Batch(anchors, positives, subs, flows, weights, sig)

    def _summaries(self, subs) -> nm.Tensor:
        rows = []
        for sub in subs:
            h = encode_nodes(sub, self.table, self.encoder)
            rows.append(aggregate_region(h, sub, self.mc.spatial_only_aggregation))
        return nm.concat_rows(rows)

    def forward_losses(self, batch: _Batch):
        """Tape-recorded loss terms for one batch; returns tensors."""
        from .model import message_pass

        b = self.tc.batch_size
        h = self._summaries(batch.subs)
        for w, bias in zip(self.params.w_layers, self.params.b_layers):
            h = message_pass(h, batch.weights, self.mc.channels, w, bias)
        r = nm.gather_rows(h, np.arange(b))
        p = nm.gather_rows(h, np.arange(b, 2 * b))
        zero = nm.zeros(1, 1)
        l_nce = info_nce_loss(r, p, self.tc.tau) if self.tc.lambda_nce else zero
        l_mob = mobility_loss(r, batch.flows, self.params.m_flow) if self.tc.lambda_mob else zero
        l_pred = pred_loss(r, batch.flows, self.params.w_pred) if self.tc.lambda_pred else zero
        total = nm.add(
            nm.add(nm.scale(l_nce, self.tc.lambda_nce), nm.scale(l_mob, self.tc.lambda_mob)),
            nm.scale(l_pred, self.tc.lambda_pred),
        )
        return l_nce, l_mob, l_pred, total

    def run(self):
        presampled = None
        if self.tc.mini_mode:
            presampled = [self._make_batch() for _ in range(self.tc.n_presampled_batches)]
        for step in range(self.tc.steps):
            batch = presampled[step % len(presampled)] if presampled else self._make_batch()
            try:
                with nm.GradTape() as tape:
                    l_nce, l_mob, l_pred, total = self.forward_losses(batch)
                tape.backward(total, params=self.trainable)
                nm.adam_step(self.opt)
            except NonFiniteValue as e:
                raise NonFiniteValue(f"training aborted at step {step}: {e}") from e
            self.boundary_hashes.extend(boundary_hash(a) for a in batch.anchors)
            self._pool_ring.extend(batch.subs[: self.tc.batch_size])
            self._pool_ring = self._pool_ring[-self.tc.pool_size:]
            self.log.append({
                "step": step,
                "l_nce": l_nce.item(),
                "l_mob": l_mob.item(),
                "l_pred": l_pred.item(),
                "l_total": total.item(),
                "batch": batch.signature,
            })

    def build_pool(self) -> ContextPool:
        """Freeze the last sampled subgraphs with final-parameter summaries."""
        seen = set()
        ring = []
        for sub in reversed(self._pool_ring):  # mini mode cycles batches; dedupe
            key = boundary_hash(sub.boundary) if sub.boundary else id(sub)
            if key in seen:
                continue
            seen.add(key)
            ring.append(sub)
        ring.reverse()
        entries = []
        for sub in ring:
            h = encode_nodes(sub, self.table, self.encoder)
            h_s = aggregate_region(h, sub, self.mc.spatial_only_aggregation)
            entries.append(PoolEntry(sub.node_type, sub.node_local, sub.center,
                                     h_s.data.copy(), sub.degree_sequences(),
                                     sub.boundary))
        return ContextPool(entries)

    def save(self, out_dir, graph_dir=None) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        pool = self.build_pool()
        manifest = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "graph_dir": str(Path(graph_dir).resolve()) if graph_dir else None,
            "model": self.mc.to_json(),
            "training": self.tc.to_json(),
            "pool_size": len(pool),
            "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        self.table.save(out, self.graph)
        self.encoder.save(out, self.graph)
        self.params.save(out)
        pool.save(out / "context_pool.bin")
        with open(out / "training_log.jsonl", "w", encoding="utf-8") as fh:
            for rec in self.log:
                fh.write(json.dumps(rec) + "\n")
        (out / "boundary_hashes.json").write_text(
            json.dumps({"training": self.boundary_hashes}) + "\n")
        return out


def train(graph_dir, embed_dir, trips_path, model_config: ModelConfig,
          config: TrainingConfig, out_dir):
    """CLI-facing wrapper: load inputs, run the loop, persist the model."""
    graph, gir, svindex = load_graph(graph_dir)
    if embed_dir is None:
        table = init_transr(graph, model_config.dim, seed=config.seed + 7)
    else:
        table = TokenEmbeddingTable.load(embed_dir, graph)
    trips = load_trips(trips_path)
    trainer = Trainer(graph, gir, svindex, table, trips, model_config, config)
    trainer.run()
    return trainer.save(out_dir, graph_dir=graph_dir)


def load_embedder(model_dir, graph_dir=None) -> RegionEmbedder:
    """Reassemble a frozen RegionEmbedder from a model directory."""
    d = Path(model_dir)
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest.get("format") != MODEL_FORMAT or manifest.get("version") != MODEL_VERSION:
        from .errors import VersionMismatch

        raise VersionMismatch(f"{d}: unsupported model format/version")
    mc = ModelConfig.from_json(manifest["model"])
    gdir = graph_dir or manifest.get("graph_dir")
    if gdir is None:
        raise MissingFile("model manifest has no graph_dir; pass one explicitly")
    graph, gir, svindex = load_graph(gdir)
    table = TokenEmbeddingTable.load(d, graph)
    encoder = EncoderParams.load(d, graph, mc.enc_layers)
    params = RegionModelParams.load(d, mc.sub_layers)
    pool = ContextPool.load(d / "context_pool.bin")
    return RegionEmbedder(graph, gir, svindex, table, encoder, params, mc, pool)
