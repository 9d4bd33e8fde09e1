import json

import numpy as np
import pytest

import bpurf.numeric as nm
import bpurf.training as tr
from bpurf.errors import SamplerExhausted
from bpurf.extraction import ExtractionScratch, extract_token_set
from bpurf.geometry import BoundaryPrompt
from bpurf.model import ModelConfig, RegionModelParams
from bpurf.embedding import init_transr


def small_model_config():
    return ModelConfig(dim=8, d_region=16, enc_layers=1, sub_layers=1,
                       k_aug=2, d_max=10.0)


def small_training_config(**kw):
    base = dict(batch_size=6, steps=10, s_min=0.15, s_max=0.35, m_min=5,
                rho=0.25, lr=3e-3, pool_size=12, seed=11)
    base.update(kw)
    return tr.TrainingConfig(**base).check()


@pytest.fixture(scope="module")
def trips(city_dir):
    return tr.load_trips(city_dir / "trips.csv")


def test_sampler_full_bbox_always_accepts(built):
    graph, gir, _ = built
    cfg = small_training_config(s_min=1.0, s_max=1.0, m_min=1)
    rng = np.random.default_rng(0)
    b = tr.sample_region_boundary(rng, (0, 0, 100, 100), cfg, gir)
    rx, ry = b.parts[0].exterior
    # center anywhere, extent = full bbox: must hold a big share of tokens
    assert len(gir.query_ring(rx, ry)) >= cfg.m_min


def test_sampler_exhausts_on_impossible_floor(built):
    graph, gir, _ = built
    cfg = small_training_config(m_min=graph.n_spatial + 1, max_retries=25)
    with pytest.raises(SamplerExhausted):
        tr.sample_region_boundary(np.random.default_rng(0), (0, 0, 100, 100), cfg, gir)


def test_sampler_acceptance_rate_and_floor(built):
    graph, gir, _ = built
    cfg = small_training_config(m_min=5, max_retries=1)
    rng = np.random.default_rng(3)
    accepted = 0
    for _ in range(1000):
        try:
            b = tr.sample_region_boundary(rng, (0, 0, 100, 100), cfg, gir)
        except SamplerExhausted:
            continue
        accepted += 1
        rx, ry = b.parts[0].exterior
        assert len(gir.query_ring(rx, ry)) >= 5
    assert accepted > 500


def test_make_positive_identity_at_zero_jitter():
    b = BoundaryPrompt.rect(10, 10, 20, 30)
    p = tr.make_positive(b, np.random.default_rng(0), rho=1e-12)
    assert np.allclose(p.parts[0].exterior[0], b.parts[0].exterior[0], atol=1e-9)


def rect_overlap(a, b):
    ax0, ay0, ax1, ay1 = a.bbox()
    bx0, by0, bx1, by1 = b.bbox()
    w = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    h = max(0.0, min(ay1, by1) - max(ay0, by0))
    return w * h


def test_unit_square_manual_shift_overlap():
    b = BoundaryPrompt.rect(0, 0, 1, 1)
    shifted = b.translate(0.25, 0.0)
    assert rect_overlap(b, shifted) == pytest.approx(0.75)


def test_positive_overlap_guarantee(rng):
    rho = 0.25
    for _ in range(200):
        x0, y0 = rng.uniform(0, 50, 2)
        w, h = rng.uniform(2, 30, 2)
        b = BoundaryPrompt.rect(x0, y0, x0 + w, y0 + h)
        p = tr.make_positive(b, rng, rho)
        assert rect_overlap(b, p) >= (1 - 2 * rho) ** 2 * w * h - 1e-9


def test_positive_jaccard_beats_random(built, rng):
    graph, gir, sv = built
    scratch = ExtractionScratch(graph)
    cfg = small_training_config()

    def token_set(b):
        sub = extract_token_set(b, graph, gir, sv, scratch)
        t, l = sub.spatial_tokens
        return set(zip(t.tolist(), l.tolist()))

    wins = trials = 0
    boundaries = [tr.sample_region_boundary(rng, (0, 0, 100, 100), cfg, gir)
                  for _ in range(40)]
    for i, b in enumerate(boundaries):
        pos = tr.make_positive(b, rng, 0.25)
        try:
            s_b, s_p = token_set(b), token_set(pos)
        except Exception:
            continue
        other = boundaries[(i + 7) % len(boundaries)]
        s_o = token_set(other)
        j_pos = len(s_b & s_p) / max(len(s_b | s_p), 1)
        j_other = len(s_b & s_o) / max(len(s_b | s_o), 1)
        trials += 1
        wins += j_pos > j_other
    assert trials >= 30
    assert wins / trials >= 0.95


def test_info_nce_single_anchor_is_zero():
    r = nm.tensor([[1.0, 0.0]])
    p = nm.tensor([[1.0, 0.0]])
    assert tr.info_nce_loss(r, p, tau=0.5).item() == pytest.approx(0.0, abs=1e-12)


def test_info_nce_orthogonal_example():
    r = nm.tensor([[1.0, 0.0], [0.0, 1.0]])
    p = nm.tensor([[1.0, 0.0], [0.0, 1.0]])
    total = tr.info_nce_loss(r, p, tau=1.0).item()
    per_anchor = total / 2
    assert per_anchor == pytest.approx(-np.log(np.e / (np.e + 1)), abs=1e-9)


def test_info_nce_permutation_invariant(rng):
    r = rng.normal(size=(5, 4))
    p = rng.normal(size=(5, 4))
    perm = rng.permutation(5)
    a = tr.info_nce_loss(nm.tensor(r), nm.tensor(p), 0.2).item()
    b = tr.info_nce_loss(nm.tensor(r[perm]), nm.tensor(p[perm]), 0.2).item()
    assert a == pytest.approx(b, rel=1e-12)


def test_info_nce_prefers_aligned_positives(rng):
    r = np.eye(4)
    p_aligned = np.eye(4)
    p_shuffled = np.eye(4)[[1, 2, 3, 0]]
    for tau in (0.05, 0.1, 0.5, 1.0, 5.0):
        good = tr.info_nce_loss(nm.tensor(r), nm.tensor(p_aligned), tau).item()
        bad = tr.info_nce_loss(nm.tensor(r), nm.tensor(p_shuffled), tau).item()
        assert good < bad


def test_flow_matrix_hand_case():
    b1 = BoundaryPrompt.rect(0, 0, 10, 10)
    b2 = BoundaryPrompt.rect(20, 20, 30, 30)
    trips = (np.array([5.0, 5.0, 25.0]), np.array([5.0, 5.0, 25.0]),
             np.array([25.0, 5.0, 25.0]), np.array([25.0, 5.0, 25.0]))
    fm = tr.flow_matrix([b1, b2], trips)
    assert fm.flow.tolist() == [[1, 1], [0, 1]]
    assert fm.outflow.tolist() == [2, 1]
    assert fm.inflow.tolist() == [1, 2]


def mobility_oracle(h, flow, m):
    b = len(h)
    t = np.log1p(flow.astype(float))
    sums = t.sum(axis=1, keepdims=True)
    target = np.where(sums > 0, t / np.maximum(sums, 1e-300), 1.0 / b)
    scores = h @ m @ h.T
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    pred = e / e.sum(axis=1, keepdims=True)
    return ((pred - target) ** 2).mean(), target


def test_mobility_loss_zero_flows(rng):
    h = rng.normal(size=(3, 4))
    m = rng.normal(size=(4, 4))
    flows = tr.FlowMatrix(np.zeros((3, 3), dtype=np.int64), np.zeros(3), np.zeros(3))
    got = tr.mobility_loss(nm.tensor(h), flows, nm.tensor(m)).item()
    want, target = mobility_oracle(h, flows.flow, m)
    assert np.allclose(target, 1.0 / 3)
    assert got == pytest.approx(want, rel=1e-10)


def test_mobility_target_hand_normalization(rng):
    flow = np.array([[0, 3], [0, 0]], dtype=np.int64)
    _, target = mobility_oracle(rng.normal(size=(2, 3)), flow, np.eye(3))
    assert np.allclose(target, [[0.0, 1.0], [0.5, 0.5]])


def test_mobility_loss_matches_oracle(rng):
    h = rng.normal(size=(5, 6))
    m = rng.normal(size=(6, 6))
    flow = rng.integers(0, 20, (5, 5))
    flows = tr.FlowMatrix(flow, flow.sum(1), flow.sum(0))
    got = tr.mobility_loss(nm.tensor(h), flows, nm.tensor(m)).item()
    want, _ = mobility_oracle(h, flow, m)
    assert got == pytest.approx(want, rel=1e-10)


def pred_oracle(h, outflow, inflow, w):
    t = np.stack([np.log1p(outflow.astype(float)), np.log1p(inflow.astype(float))], axis=1)
    sd = t.std(axis=0, keepdims=True)
    target = np.where(sd > 0, (t - t.mean(axis=0, keepdims=True)) / np.maximum(sd, 1e-300), 0.0)
    return ((h @ w - target) ** 2).mean()


def test_pred_loss_constant_totals(rng):
    h = rng.normal(size=(4, 3))
    w = rng.normal(size=(3, 2))
    flows = tr.FlowMatrix(np.zeros((4, 4), np.int64), np.full(4, 7), np.full(4, 7))
    got = tr.pred_loss(nm.tensor(h), flows, nm.tensor(w)).item()
    assert got == pytest.approx(((h @ w) ** 2).mean(), rel=1e-10)


def test_pred_loss_zero_head(rng):
    h = rng.normal(size=(4, 3))
    out = rng.integers(0, 9, 4)
    inf = rng.integers(0, 9, 4)
    flows = tr.FlowMatrix(np.zeros((4, 4), np.int64), out, inf)
    got = tr.pred_loss(nm.tensor(h), flows, nm.tensor(np.zeros((3, 2)))).item()
    t = np.stack([np.log1p(out.astype(float)), np.log1p(inf.astype(float))], 1)
    z = (t - t.mean(0)) / t.std(0)
    assert got == pytest.approx((z ** 2).mean(), rel=1e-10)


def test_pred_loss_matches_oracle(rng):
    h = rng.normal(size=(6, 5))
    w = rng.normal(size=(5, 2))
    out = rng.integers(0, 50, 6)
    inf = rng.integers(0, 50, 6)
    flows = tr.FlowMatrix(np.zeros((6, 6), np.int64), out, inf)
    got = tr.pred_loss(nm.tensor(h), flows, nm.tensor(w)).item()
    assert got == pytest.approx(pred_oracle(h, out, inf, w), rel=1e-10)


def make_trainer(built, trips, tc=None):
    graph, gir, sv = built
    table = init_transr(graph, d=8, epochs=3, seed=5)
    return tr.Trainer(graph, gir, sv, table, trips, small_model_config(),
                      tc or small_training_config())


def test_zero_steps_keeps_initialization(built, trips, tmp_path):
    trainer = make_trainer(built, trips, small_training_config(steps=0))
    before = [p.data.copy() for p in trainer.trainable]
    trainer.run()
    for p, b in zip(trainer.trainable, before):
        assert np.array_equal(p.data, b)
    out = trainer.save(tmp_path / "model")
    assert (out / "context_pool.bin").exists()
    # pool is empty; inference must still run (empty-relevance rule)
    from bpurf.model import ContextPool, RegionEmbedder

    e = RegionEmbedder(trainer.graph, trainer.gir, trainer.svindex, trainer.table,
                       trainer.encoder, trainer.params, trainer.mc, ContextPool())
    vecs, errors, _ = e.embed([BoundaryPrompt.rect(20, 20, 60, 60)])
    assert errors == [None] and np.isfinite(vecs).all()


def test_loss_decreases(built, trips):
    trainer = make_trainer(built, trips, small_training_config(steps=60, seed=2))
    trainer.run()
    totals = [r["l_total"] for r in trainer.log]
    assert np.mean(totals[-10:]) < np.mean(totals[:10])
    assert all(np.isfinite(r["l_total"]) for r in trainer.log)


def test_mini_mode_signature_count(built, trips):
    tc = small_training_config(steps=20, mini_mode=True, n_presampled_batches=8)
    trainer = make_trainer(built, trips, tc)
    trainer.run()
    sigs = {r["batch"] for r in trainer.log}
    assert len(sigs) == 8


def test_reproducible_training(built, trips, tmp_path):
    def run(tag):
        trainer = make_trainer(built, trips, small_training_config(steps=8, seed=21))
        trainer.run()
        out = trainer.save(tmp_path / tag)
        return trainer, out

    t1, d1 = run("a")
    t2, d2 = run("b")
    assert t1.log == t2.log
    for p1, p2 in zip(t1.trainable, t2.trainable):
        assert p1.data.tobytes() == p2.data.tobytes()
    assert (d1 / "subgraph_w0.emb").read_bytes() == (d2 / "subgraph_w0.emb").read_bytes()


def test_ablation_weight_zeroing(built, trips):
    tc = small_training_config(steps=3, lambda_mob=0.0, lambda_pred=0.0)
    trainer = make_trainer(built, trips, tc)
    trainer.run()
    for rec in trainer.log:
        assert rec["l_mob"] == 0.0 and rec["l_pred"] == 0.0
        assert rec["l_total"] == pytest.approx(rec["l_nce"], rel=1e-12)


def test_save_load_embedder_round_trip(built, trips, tmp_path, city_dir):
    from bpurf.graph import save_graph
    from bpurf.training import load_embedder

    graph, gir, sv = built
    save_graph(graph, gir, sv, tmp_path / "graph")
    trainer = make_trainer(built, trips, small_training_config(steps=4))
    trainer.run()
    out = trainer.save(tmp_path / "model", graph_dir=tmp_path / "graph")
    e = load_embedder(out)
    b = BoundaryPrompt.rect(25, 25, 55, 55)
    v1, err1, _ = e.embed([b])
    # direct in-memory embedder must agree
    from bpurf.model import RegionEmbedder

    direct = RegionEmbedder(graph, gir, sv, trainer.table, trainer.encoder,
                            trainer.params, trainer.mc, trainer.build_pool())
    v2, err2, _ = direct.embed([b])
    assert err1 == err2 == [None]
    assert np.allclose(v1, v2, atol=1e-5)  # f32 persistence rounding
    log = (out / "training_log.jsonl").read_text().splitlines()
    assert len(log) == 4
    hashes = json.loads((out / "boundary_hashes.json").read_text())
    assert len(hashes["training"]) == 4 * 6
