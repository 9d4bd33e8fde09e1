"""Acceptance suite: every contract-level criterion at its stated tolerance.

Run `pytest tests/test_acceptance.py -v` for one pass/fail line per
criterion (each test also prints an ACCEPTANCE line, visible with -s).
Criteria with stated runtime budgets assert them.
"""

import itertools
import json
import time

import numpy as np
import pytest

import bpurf.model as rm
from bpurf import kernels
from bpurf.downstream import evaluate, load_task
from bpurf.embedding import aggregate_embeddings, init_transr
from bpurf.extraction import (
    ExtractionScratch,
    brute_force_extract,
    extract_token_set,
    subgraphs_equal,
)
from bpurf.geometry import BoundaryPrompt
from bpurf.graph import build_graph, load_graph, save_graph
from bpurf.model import ChannelConfig, ModelConfig, RegionEmbedder
from bpurf.schema import load_city
from bpurf.synth import SynthConfig, generate_city
from bpurf.training import Trainer, TrainingConfig, load_embedder, load_trips

BBOX = (0.0, 0.0, 100.0, 100.0)


def _report(name):
    print(f"\nACCEPTANCE PASS: {name}")


def build_city(tmp, n_poi, n_road, n_junction, seed, trips=0, categories=20):
    cfg = SynthConfig(n_poi=n_poi, n_road=n_road, n_junction=n_junction,
                      n_categories=categories, n_clusters=5, bbox=BBOX,
                      trip_count=trips, gravity_decay=20.0, noise_sd=0.05,
                      seed=seed)
    generate_city(cfg, tmp)
    city = load_city(tmp / "schema.json")
    return build_graph(city.schema, city.relations, city.entities)


@pytest.fixture(scope="module")
def city10k(tmp_path_factory):
    return build_city(tmp_path_factory.mktemp("c10k"), 7000, 2000, 1000, seed=41)


@pytest.fixture(scope="module")
def city100k(tmp_path_factory):
    return build_city(tmp_path_factory.mktemp("c100k"), 70000, 20000, 10000, seed=42)


# pinned training setup shared by the learning criteria
TRAIN_CITY = dict(n_poi=1500, n_road=360, n_junction=180, n_categories=10,
                  n_clusters=5, bbox=BBOX, trip_count=6000, gravity_decay=20.0,
                  noise_sd=0.05, seed=33)
MODEL_CFG = dict(dim=16, d_region=12, enc_layers=2, sub_layers=1, k_aug=3, d_max=8.0)
TRAIN_CFG = dict(batch_size=8, steps=200, s_min=0.12, s_max=0.30, m_min=8,
                 rho=0.25, lr=3e-3, pool_size=64, seed=13)
EVAL_SEED = 101


@pytest.fixture(scope="module")
def train_city(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("train_city")
    t0 = time.perf_counter()
    generate_city(SynthConfig(**TRAIN_CITY), tmp)
    city = load_city(tmp / "schema.json")
    graph, gir, sv = build_graph(city.schema, city.relations, city.entities)
    setup_s = time.perf_counter() - t0
    return {
        "dir": tmp, "graph": graph, "gir": gir, "sv": sv,
        "trips": load_trips(tmp / "trips.csv"),
        "task": load_task(tmp / "tasks" / "intensity.csv", kind="intensity"),
        "setup_s": setup_s,
    }


def run_training(tc_city, channels=None):
    graph, gir, sv = tc_city["graph"], tc_city["gir"], tc_city["sv"]
    table = init_transr(graph, d=MODEL_CFG["dim"], epochs=30, seed=7)
    mc = ModelConfig(**MODEL_CFG, channels=channels or ChannelConfig())
    tc = TrainingConfig(**TRAIN_CFG)
    trainer = Trainer(graph, gir, sv, table, tc_city["trips"], mc, tc)
    trainer.run()
    embedder = RegionEmbedder(graph, gir, sv, trainer.table, trainer.encoder,
                              trainer.params, mc, trainer.build_pool())
    return trainer, embedder


@pytest.fixture(scope="module")
def trained(train_city):
    t0 = time.perf_counter()
    trainer, embedder = run_training(train_city)
    return {"trainer": trainer, "embedder": embedder,
            "train_s": time.perf_counter() - t0}


def random_rect(rng, min_side=2.0, max_side=40.0):
    w, h = rng.uniform(min_side, max_side, 2)
    x0 = rng.uniform(BBOX[0], BBOX[2] - w)
    y0 = rng.uniform(BBOX[1], BBOX[3] - h)
    return BoundaryPrompt.rect(x0, y0, x0 + w, y0 + h)


def test_criterion_01_extraction_oracle_equivalence(city10k):
    graph, gir, sv = city10k
    # tokens exist only through relations; a few junctions are never any
    # road's 2-nearest, so M lands slightly under the entity count
    assert abs(graph.n_spatial - 10_000) <= 200
    scratch = ExtractionScratch(graph)
    rng = np.random.default_rng(5)
    boundaries = [random_rect(rng) for _ in range(98)]
    boundaries.append(BoundaryPrompt.from_rings(
        [[20, 20], [60, 20], [60, 60], [20, 60]],
        holes=[[[35, 35], [45, 35], [45, 45], [35, 45]]]))
    boundaries.append(BoundaryPrompt(
        parts=BoundaryPrompt.rect(5, 5, 20, 20).parts
        + BoundaryPrompt.rect(70, 70, 95, 95).parts))
    t0 = time.perf_counter()
    compared = 0
    for b in boundaries:
        fast = extract_token_set(b, graph, gir, sv, scratch)
        slow = brute_force_extract(b, graph)
        assert subgraphs_equal(fast, slow)
        compared += 1
    elapsed = time.perf_counter() - t0
    assert compared == 100
    assert elapsed < 10.0, f"oracle comparison took {elapsed:.1f}s"
    _report(f"extraction oracle equivalence (100 boundaries, {elapsed:.1f}s)")


def test_criterion_02_extraction_speedup(city100k):
    graph, gir, sv = city100k
    assert abs(graph.n_spatial - 100_000) <= 2000
    from bpurf.bench import sample_query_rects, time_extractions

    t0 = time.perf_counter()
    boundaries = sample_query_rects(graph, gir, 200, area_frac=0.05, seed=3)
    indexed, brute, mq = time_extractions(boundaries, graph, gir, sv)
    elapsed = time.perf_counter() - t0
    speedup = brute / indexed
    assert indexed <= brute / 10.0, f"speedup only {speedup:.1f}x"
    assert elapsed < 120.0, f"benchmark took {elapsed:.0f}s"
    _report(f"extraction speedup {speedup:.0f}x at M=100k "
            f"(indexed {indexed*1e3:.2f}ms vs brute {brute*1e3:.1f}ms)")


def test_criterion_03_mq_stability(tmp_path_factory, city10k, city100k):
    city50k = build_city(tmp_path_factory.mktemp("c50k"), 35000, 10000, 5000, seed=43)
    scales = {c[0].n_spatial: c[1] for c in (city10k, city50k, city100k)}
    # identical relative-size boundaries across scales
    rng = np.random.default_rng(17)
    side = np.sqrt(0.02) * 100.0
    rects = []
    for _ in range(60):
        x0 = rng.uniform(0, 100 - side)
        y0 = rng.uniform(0, 100 - side)
        rects.append(BoundaryPrompt.rect(x0, y0, x0 + side, y0 + side))
    ratios = {}
    for m, gir in scales.items():
        mq = [len(gir.query_ring(*b.parts[0].exterior)) for b in rects]
        ratios[m] = np.mean(mq) / m
    mean_ratio = np.mean(list(ratios.values()))
    for m, r in ratios.items():
        assert abs(r - mean_ratio) <= 0.20 * mean_ratio, (m, ratios)
    _report(f"mean M_q scales linearly with M (ratios {ratios})")


def test_criterion_04_distributivity(train_city):
    graph, gir, sv = train_city["graph"], train_city["gir"], train_city["sv"]
    scratch = ExtractionScratch(graph)
    # context-free node embeddings: the token dictionary rows themselves
    table = init_transr(graph, d=16, epochs=0, seed=3)
    flags = [t.spatial for t in graph.types]
    k = len(graph.types)
    rng = np.random.default_rng(11)
    head = rng.normal(size=(k * 16,))

    def agg(boundary):
        sub = extract_token_set(boundary, graph, gir, sv, scratch)
        import bpurf.numeric as nm

        rows = nm.concat_rows([
            nm.gather_rows(table.tables[t], sub.node_local[sub.node_type == t])
            for t in range(k) if (sub.node_type == t).any()
        ])
        types = np.concatenate([
            np.full((sub.node_type == t).sum(), t)
            for t in range(k) if (sub.node_type == t).any()
        ])
        return aggregate_embeddings(rows, types, k, spatial_flags=flags,
                                    spatial_only=True).data[0]

    checked = 0
    while checked < 50:
        a = random_rect(rng, 4, 30)
        b = random_rect(rng, 4, 30)
        ax0, ay0, ax1, ay1 = a.bbox()
        bx0, by0, bx1, by1 = b.bbox()
        gap_x = max(ax0 - bx1, bx0 - ax1)
        gap_y = max(ay0 - by1, by0 - ay1)
        if max(gap_x, gap_y) < 0.5:  # require genuinely disjoint rectangles
            continue
        try:
            va, vb = agg(a), agg(b)
            vu = agg(BoundaryPrompt(parts=a.parts + b.parts))
        except Exception:
            continue
        assert np.abs(vu - va - vb).max() <= 1e-9
        assert abs(vu @ head - va @ head - vb @ head) <= 1e-8
        checked += 1
    _report("aggregation distributive over 50 disjoint rectangle pairs")


def test_criterion_05_gradient_correctness(train_city):
    import bpurf.numeric as nm

    graph, gir, sv = train_city["graph"], train_city["gir"], train_city["sv"]
    table = init_transr(graph, d=16, epochs=5, seed=9)
    mc = ModelConfig(**MODEL_CFG)
    tc = TrainingConfig(**{**TRAIN_CFG, "batch_size": 4, "seed": 31})
    trainer = Trainer(graph, gir, sv, table, train_city["trips"], mc, tc)
    batch = trainer._make_batch()
    t0 = time.perf_counter()
    worst = nm.finite_difference_check(
        lambda: trainer.forward_losses(batch)[3],
        trainer.trainable, np.random.default_rng(2), n_samples=200, h=1e-5)
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-4, f"max relative gradient error {worst:.2e}"
    assert elapsed < 60.0, f"gradient check took {elapsed:.0f}s"
    _report(f"full-loss gradients match finite differences "
            f"(worst rel err {worst:.1e}, {elapsed:.0f}s)")


def enumerate_paths(n, m):
    """All monotone alignment paths (1,1)->(n,m), grouped by length."""
    paths = []

    def walk(i, j, acc):
        acc = acc + [(i, j)]
        if i == n - 1 and j == m - 1:
            paths.append(acc)
            return
        if i + 1 < n:
            walk(i + 1, j, acc)
        if j + 1 < m:
            walk(i, j + 1, acc)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc)

    walk(0, 0, [])
    groups = {}
    for p in paths:
        groups.setdefault(len(p), []).append(p)
    out = []
    for length in sorted(groups):
        arr = np.asarray(groups[length], dtype=np.int64)
        out.append((arr[:, :, 0], arr[:, :, 1]))
    return out


def test_criterion_06_dtw_exhaustive():
    max_len = 6
    seq_sets = {n: np.asarray(list(itertools.product(range(3), repeat=n)),
                              dtype=np.int16).reshape(3 ** n, n)
                for n in range(0, max_len + 1)}
    # empty-side convention: sum of absolute values
    for m in range(0, max_len + 1):
        for b in seq_sets[m]:
            bf = b.astype(np.float64)
            assert kernels.dtw_distance(np.empty(0), bf) == float(np.abs(b).sum())
            assert kernels.dtw_distance(bf, np.empty(0)) == float(np.abs(b).sum())
    checked = 0
    for na in range(1, max_len + 1):
        for nb in range(na, max_len + 1):
            As, Bs = seq_sets[na], seq_sets[nb]
            groups = enumerate_paths(na, nb)
            b_gathers = [Bs[:, jp] for _, jp in groups]  # (3^nb, P, L) each
            for a in As:
                best = None
                for (ip, _), bj in zip(groups, b_gathers):
                    cost = np.abs(a[ip][None, :, :] - bj).sum(axis=2).min(axis=1)
                    best = cost if best is None else np.minimum(best, cost)
                af = a.astype(np.float64)
                got = np.array([kernels.dtw_distance(af, b.astype(np.float64))
                                for b in Bs])
                assert np.array_equal(got, best.astype(np.float64)), (a, na, nb)
                checked += len(Bs)
                # symmetry covers the (nb, na) orientation
                assert kernels.dtw_distance(Bs[0].astype(np.float64), af) == got[0]
    assert checked > 500_000
    _report(f"DTW matches exhaustive alignment oracle on {checked} pairs")


def test_criterion_07_channel_weight_contracts(train_city):
    graph, gir, sv = train_city["graph"], train_city["gir"], train_city["sv"]
    scratch = ExtractionScratch(graph)
    rng = np.random.default_rng(23)
    subs = []
    while len(subs) < 8:
        try:
            subs.append(extract_token_set(random_rect(rng, 6, 25), graph, gir, sv, scratch))
        except Exception:
            continue
    centers = [s.center for s in subs]
    seqs = [s.degree_sequences() for s in subs]
    n = len(subs)
    off = ~np.eye(n, dtype=bool)

    pos = rm.gamma_position(centers)
    assert np.allclose(pos, pos.T)
    assert (pos[off] >= np.exp(-1.0) - 1e-12).all() and (pos[off] <= 1.0 + 1e-12).all()
    d = rm.center_distances(centers)
    far = np.unravel_index(np.argmax(d), d.shape)
    assert pos[far] == pytest.approx(np.exp(-1.0))
    degenerate = rm.gamma_position([(3.0, 4.0)] * 5)
    assert (degenerate[~np.eye(5, dtype=bool)] == 1.0).all()

    k = 3
    nbr = rm.gamma_neighbor(centers, k)
    for i in range(n):
        assert nbr[i].sum() == k
        order = np.lexsort((np.arange(n), d[i]))
        want = [j for j in order if j != i][:k]
        assert sorted(np.flatnonzero(nbr[i]).tolist()) == sorted(want)

    raw = rm.raw_structure_matrix([seqs[0], seqs[0]])
    assert raw[0, 1] == 0.0
    full_raw = rm.raw_structure_matrix(seqs)
    assert (np.diag(full_raw) == 0.0).all()
    _report("channel weight contracts (position range/symmetry, top-k, self-DTW)")


def test_criterion_08_training_signal(train_city, trained):
    totals = [r["l_total"] for r in trained["trainer"].log]
    assert len(totals) == 200
    assert all(np.isfinite(t) for t in totals)
    assert np.mean(totals[-20:]) < np.mean(totals[:20])
    # bit-identical rerun under the same seed
    rerun, _ = run_training(train_city)
    assert rerun.log == trained["trainer"].log
    for a, b in zip(rerun.trainable, trained["trainer"].trainable):
        assert a.data.tobytes() == b.data.tobytes()
    _report(f"training signal (L {np.mean(totals[:20]):.2f} -> "
            f"{np.mean(totals[-20:]):.2f}; rerun bit-identical)")


def test_criterion_09_behavioral_embedding_quality(trained):
    embedder = trained["embedder"]
    rng = np.random.default_rng(55)
    sampler = TrainingConfig(**{**TRAIN_CFG, "batch_size": 2, "steps": 0})
    from bpurf.training import sample_region_boundary

    regions = [sample_region_boundary(rng, BBOX, sampler, embedder.gir)
               for _ in range(100)]
    shifted = []
    for b in regions:
        x0, y0, x1, y1 = b.bbox()
        shifted.append(b.translate(0.1 * (x1 - x0), 0.1 * (y1 - y0)))
    vecs, errors, _ = embedder.embed(regions + shifted)
    assert all(e is None for e in errors)
    v = vecs / np.maximum(np.linalg.norm(vecs, axis=1, keepdims=True), 1e-12)
    anchors, copies = v[:100], v[100:]
    perm = (np.arange(100) + 37) % 100
    wins = sum(float(anchors[i] @ copies[i]) > float(anchors[i] @ anchors[perm[i]])
               for i in range(100))
    assert wins >= 90, f"only {wins}/100"
    _report(f"behavioral embedding quality ({wins}/100 shifted-copy wins)")


def test_criterion_10_downstream_planted_signal(train_city, trained):
    task = train_city["task"]
    t0 = time.perf_counter()
    report = evaluate(trained["embedder"], task, n_batches=5, batch_size=40,
                      seed=EVAL_SEED, lambda_ridge=1.0)
    eval_s = time.perf_counter() - t0
    noise_rng = np.random.default_rng(99)
    noise = evaluate(trained["embedder"], task, n_batches=5, batch_size=40,
                     seed=EVAL_SEED, lambda_ridge=1.0,
                     feature_fn=lambda bs, X: noise_rng.normal(size=X.shape))
    total_s = train_city["setup_s"] + trained["train_s"] + eval_s
    assert report.mean_r2 >= 0.6, f"trained R^2 {report.mean_r2:.3f}"
    assert noise.mean_r2 <= 0.1, f"noise R^2 {noise.mean_r2:.3f}"
    assert total_s < 300.0, f"end-to-end took {total_s:.0f}s"
    _report(f"downstream planted signal (R^2 {report.mean_r2:.3f} trained vs "
            f"{noise.mean_r2:.3f} noise; MAE {report.mean_mae:.3f}, "
            f"RMSE {report.mean_rmse:.3f}; {total_s:.0f}s end-to-end)")


def test_criterion_11_ablation_direction(train_city, trained):
    task = train_city["task"]
    channels_off = ChannelConfig(structure=False, position=False, neighbor=False)
    _, embedder_off = run_training(train_city, channels=channels_off)
    full = evaluate(trained["embedder"], task, n_batches=5, batch_size=40,
                    seed=EVAL_SEED, lambda_ridge=1.0)
    off = evaluate(embedder_off, task, n_batches=5, batch_size=40,
                   seed=EVAL_SEED, lambda_ridge=1.0)
    assert off.mean_r2 < full.mean_r2, (off.mean_r2, full.mean_r2)
    _report(f"ablation direction (all channels off: R^2 {off.mean_r2:.3f} "
            f"< full {full.mean_r2:.3f})")


def _resave_model(model_dir, embedder, out_dir):
    import shutil

    out_dir.mkdir(parents=True, exist_ok=True)
    shutil.copy(model_dir / "manifest.json", out_dir / "manifest.json")
    shutil.copy(model_dir / "training_log.jsonl", out_dir / "training_log.jsonl")
    shutil.copy(model_dir / "boundary_hashes.json", out_dir / "boundary_hashes.json")
    embedder.table.save(out_dir, embedder.graph)
    embedder.encoder.save(out_dir, embedder.graph)
    embedder.params.save(out_dir)
    embedder.pool.save(out_dir / "context_pool.bin")


def test_criterion_12_persistence_round_trip(train_city, trained, tmp_path):
    from fastapi.testclient import TestClient

    from bpurf.service import create_app

    graph, gir, sv = train_city["graph"], train_city["gir"], train_city["sv"]
    save_graph(graph, gir, sv, tmp_path / "graph")
    model_dir = trained["trainer"].save(tmp_path / "model", graph_dir=tmp_path / "graph")
    emb_a = load_embedder(model_dir)
    # full second round trip through every format
    save_graph(emb_a.graph, emb_a.gir, emb_a.svindex, tmp_path / "graph2")
    _resave_model(model_dir, emb_a, tmp_path / "model2")
    emb_b = load_embedder(tmp_path / "model2", graph_dir=tmp_path / "graph2")

    rng = np.random.default_rng(7)
    boundaries = [random_rect(rng, 6, 30).to_geojson() for _ in range(20)]
    client_a = TestClient(create_app(emb_a))
    client_b = TestClient(create_app(emb_b))
    for b in boundaries:
        ra = client_a.post("/v1/embed", json={"boundaries": [b]})
        rb = client_b.post("/v1/embed", json={"boundaries": [b]})
        assert ra.status_code == rb.status_code == 200
        assert ra.content == rb.content
    _report("graph+model persistence round trip (20 identical /v1/embed bodies)")
