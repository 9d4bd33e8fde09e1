"""Extraction speed benchmark: indexed path vs linear-scan baseline,
plus compiled-vs-pure kernel micro timings."""

from __future__ import annotations

import time

import numpy as np

from . import kernels
from .extraction import ExtractionScratch, brute_force_extract, extract_token_set
from .geometry import BoundaryPrompt
from .graph import load_graph


def sample_query_rects(graph, gir, n_queries, area_frac, seed=0, min_tokens=1):
    """Random rectangles each covering at most ``area_frac`` of the bbox."""
    rng = np.random.default_rng(seed)
    xs = np.concatenate([graph.coords[t][0] for t in graph.spatial_type_ids])
    ys = np.concatenate([graph.coords[t][1] for t in graph.spatial_type_ids])
    x0, y0, x1, y1 = xs.min(), ys.min(), xs.max(), ys.max()
    w, h = x1 - x0, y1 - y0
    out = []
    while len(out) < n_queries:
        u = rng.uniform(0.25, 1.0)
        side = np.sqrt(area_frac * u)
        bw, bh = side * w, side * h
        cx = rng.uniform(x0, x1)
        cy = rng.uniform(y0, y1)
        b = BoundaryPrompt.rect(cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2)
        if len(gir.query_rect(*b.bbox())) >= min_tokens:
            out.append(b)
    return out


def time_extractions(boundaries, graph, gir, svindex):
    scratch = ExtractionScratch(graph)
    mq = []
    t0 = time.perf_counter()
    for b in boundaries:
        sub = extract_token_set(b, graph, gir, svindex, scratch)
        mq.append(sub.n_spatial)
    indexed = (time.perf_counter() - t0) / len(boundaries)
    t0 = time.perf_counter()
    for b in boundaries:
        brute_force_extract(b, graph)
    brute = (time.perf_counter() - t0) / len(boundaries)
    return indexed, brute, np.asarray(mq)


def kernel_micro_bench(seed=0, n_points=200_000, n_repeat=5):
    """Per-backend timings for the hot kernels (point-in-polygon, DTW)."""
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0, 100, n_points)
    ys = rng.uniform(0, 100, n_points)
    ring_x = np.array([20.0, 80.0, 80.0, 20.0])
    ring_y = np.array([20.0, 20.0, 70.0, 70.0])
    a = rng.integers(0, 10, 400).astype(np.float64)
    b = rng.integers(0, 10, 350).astype(np.float64)
    out = {}
    for name, impl in kernels.backends().items():
        t0 = time.perf_counter()
        for _ in range(n_repeat):
            impl.points_in_polygon(xs, ys, ring_x, ring_y)
        pip = (time.perf_counter() - t0) / n_repeat
        t0 = time.perf_counter()
        for _ in range(n_repeat):
            impl.dtw_distance(a, b)
        dtw = (time.perf_counter() - t0) / n_repeat
        out[name] = {
            "points_in_polygon_200k_s": pip,
            "dtw_400x350_s": dtw,
        }
    return out


def run_bench(graph_dir, n_queries=200, area_frac=0.05, seed=0,
              with_kernel_bench=True) -> dict:
    graph, gir, svindex = load_graph(graph_dir)
    boundaries = sample_query_rects(graph, gir, n_queries, area_frac, seed)
    indexed, brute, mq = time_extractions(boundaries, graph, gir, svindex)
    report = {
        "backend": kernels.BACKEND,
        "n_spatial_tokens": graph.n_spatial,
        "n_queries": n_queries,
        "area_frac": area_frac,
        "indexed_mean_s": indexed,
        "brute_mean_s": brute,
        "speedup": brute / indexed if indexed > 0 else float("inf"),
        "mq_mean": float(mq.mean()),
        "mq_min": int(mq.min()),
        "mq_max": int(mq.max()),
    }
    if with_kernel_bench:
        report["kernels"] = kernel_micro_bench(seed)
    return report
