"""Command-line entry points for every stage of the pipeline.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric error.
Failures also print a machine-readable JSON object to stderr.
"""

from __future__ import annotations

import functools
import json
import os
import sys
from pathlib import Path

import click

from .errors import (
    BatchTooSmall,
    BpurfError,
    DanglingSpatialToken,
    DegenerateBbox,
    EmptyGraph,
    InvalidPolygon,
    MalformedSchema,
    MissingColumn,
    MissingFile,
    NonFiniteValue,
    NotScalarLoss,
    SamplerExhausted,
    ShapeMismatch,
    SingularSystem,
    SpatialColumnsMissing,
    UnknownTypeReference,
    VersionMismatch,
)

DATA_ERRORS = (
    MissingFile, MalformedSchema, UnknownTypeReference, SpatialColumnsMissing,
    MissingColumn, DegenerateBbox, DanglingSpatialToken, VersionMismatch,
    InvalidPolygon, SamplerExhausted, EmptyGraph,
)
NUMERIC_ERRORS = (
    NonFiniteValue, NotScalarLoss, ShapeMismatch, SingularSystem, BatchTooSmall,
)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DATA_ERRORS as e:
            _fail(3, e)
        except NUMERIC_ERRORS as e:
            _fail(4, e)
        except BpurfError as e:
            _fail(3, e)

    return wrapper


def _fail(code, exc):
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "detail": str(exc)}) + "\n")
    sys.exit(code)


@click.group()
def main():
    """Elastic urban-region embedding engine."""


@main.command()
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, type=int)
@click.option("--n-poi", default=1000, type=int)
@click.option("--n-road", default=300, type=int)
@click.option("--n-junction", default=150, type=int)
@click.option("--n-categories", default=12, type=int)
@click.option("--n-clusters", default=5, type=int)
@click.option("--trips", "trip_count", default=5000, type=int)
@click.option("--bbox", default="0,0,100,100", help="x0,y0,x1,y1")
@click.option("--gravity-decay", default=20.0, type=float)
@click.option("--noise-sd", default=0.1, type=float)
@handle_errors
def synth(out, seed, n_poi, n_road, n_junction, n_categories, n_clusters,
          trip_count, bbox, gravity_decay, noise_sd):
    """Generate a synthetic city bundle with planted signal."""
    from .synth import SynthConfig, generate_city

    try:
        bounds = tuple(float(v) for v in bbox.split(","))
        assert len(bounds) == 4
    except (ValueError, AssertionError):
        raise click.UsageError("--bbox must be x0,y0,x1,y1")
    cfg = SynthConfig(n_poi=n_poi, n_road=n_road, n_junction=n_junction,
                      n_categories=n_categories, n_clusters=n_clusters,
                      bbox=bounds, trip_count=trip_count,
                      gravity_decay=gravity_decay, noise_sd=noise_sd, seed=seed)
    truth = generate_city(cfg, out)
    click.echo(json.dumps({"out": str(out), **truth["entity_counts"]}))


@main.command("build-graph")
@click.option("--schema", "schema_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--branching", default=32, type=int)
@handle_errors
def build_graph_cmd(schema_path, out, branching):
    """Build the token graph plus its indexes from a schema."""
    from .graph import build_graph, save_graph
    from .schema import load_city, validate

    city = load_city(schema_path)
    report = validate(city.schema, city.relations, city.entities)
    graph, gir, svindex = build_graph(city.schema, city.relations, city.entities,
                                      branching=branching)
    save_graph(graph, gir, svindex, out)
    click.echo(json.dumps({
        "out": str(out),
        "n_spatial": graph.n_spatial,
        "n_virtual": graph.n_virtual,
        "edges": int(sum(len(s) for s, _ in graph.edges)),
        "dangling": len(report.dangling),
    }))


@main.command("init-embed")
@click.option("--graph", "graph_dir", required=True, type=click.Path(exists=True))
@click.option("--dim", default=16, type=int)
@click.option("--out", required=True, type=click.Path())
@click.option("--epochs", default=50, type=int)
@click.option("--margin", default=1.0, type=float)
@click.option("--neg-per-pos", default=4, type=int)
@click.option("--lr", default=1e-2, type=float)
@click.option("--seed", default=0, type=int)
@handle_errors
def init_embed(graph_dir, dim, out, epochs, margin, neg_per_pos, lr, seed):
    """Initialize the token dictionary with margin-ranking training."""
    from .embedding import init_transr
    from .graph import load_graph

    graph, _, _ = load_graph(graph_dir)
    table = init_transr(graph, dim, epochs=epochs, margin=margin,
                        neg_per_pos=neg_per_pos, lr=lr, seed=seed)
    Path(out).mkdir(parents=True, exist_ok=True)
    table.save(out, graph)
    click.echo(json.dumps({"out": str(out), "dim": dim,
                           "tokens": int(graph.counts.sum())}))


@main.command()
@click.option("--graph", "graph_dir", required=True, type=click.Path(exists=True))
@click.option("--embed", "embed_dir", default=None, type=click.Path(exists=True))
@click.option("--trips", "trips_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--mini", is_flag=True, default=False)
@click.option("--n-batch", default=8, type=int)
@click.option("--steps", default=None, type=int)
@click.option("--seed", default=None, type=int)
@handle_errors
def train(graph_dir, embed_dir, trips_path, config_path, out, mini, n_batch,
          steps, seed):
    """Train the region model; writes a self-contained model directory."""
    from .model import ModelConfig
    from .training import TrainingConfig, train as run_train

    doc = {}
    if config_path:
        doc = json.loads(Path(config_path).read_text())
    mc = ModelConfig.from_json(doc["model"]) if "model" in doc else ModelConfig()
    tc = TrainingConfig.from_json(doc.get("training", {}))
    if mini:
        tc.mini_mode = True
        tc.n_presampled_batches = n_batch
    if steps is not None:
        tc.steps = steps
    if seed is not None:
        tc.seed = seed
    out_dir = run_train(graph_dir, embed_dir, trips_path, mc, tc, out)
    click.echo(json.dumps({"out": str(out_dir), "steps": tc.steps,
                           "mini": tc.mini_mode}))


def _load_boundaries(path):
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict) and doc.get("type") == "FeatureCollection":
        return doc["features"]
    if isinstance(doc, list):
        return doc
    return [doc]


@main.command()
@click.option("--model", "model_dir", required=True, type=click.Path(exists=True))
@click.option("--boundaries", "boundaries_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--graph", "graph_dir", default=None, type=click.Path(exists=True))
@handle_errors
def embed(model_dir, boundaries_path, out, graph_dir):
    """Embed boundary prompts from a GeoJSON file; order preserved."""
    import numpy as np

    from .geometry import parse_boundary
    from .training import load_embedder

    embedder = load_embedder(model_dir, graph_dir=graph_dir)
    raw = _load_boundaries(boundaries_path)
    boundaries = [parse_boundary(b) for b in raw]
    vecs, errors, _ = embedder.embed(boundaries)
    rows, vi = [], 0
    for err in errors:
        if err is None:
            rows.append([float(np.float32(v)) for v in vecs[vi]])
            vi += 1
        else:
            rows.append(None)
    Path(out).write_text(json.dumps({"embeddings": rows, "errors": errors}) + "\n")
    click.echo(json.dumps({"out": str(out), "count": len(rows),
                           "empty": sum(e is not None for e in errors)}))


@main.command("eval")
@click.option("--model", "model_dir", required=True, type=click.Path(exists=True))
@click.option("--task", "task_path", required=True, type=click.Path(exists=True))
@click.option("--task-kind", default="intensity", type=click.Choice(["intensity", "count"]))
@click.option("--batches", default=5, type=int)
@click.option("--batch-size", default=40, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--ridge-lambda", default=1.0, type=float)
@click.option("--out", required=True, type=click.Path())
@click.option("--graph", "graph_dir", default=None, type=click.Path(exists=True))
@handle_errors
def eval_cmd(model_dir, task_path, task_kind, batches, batch_size, seed,
             ridge_lambda, out, graph_dir):
    """Evaluate a trained model on a task file over sampled region batches."""
    from .downstream import evaluate, load_task
    from .training import load_embedder

    embedder = load_embedder(model_dir, graph_dir=graph_dir)
    task = load_task(task_path, kind=task_kind)
    report = evaluate(embedder, task, n_batches=batches, batch_size=batch_size,
                      seed=seed, lambda_ridge=ridge_lambda)
    report.save(out)
    click.echo(json.dumps({"out": str(out), "mean_r2": report.mean_r2,
                           "mean_mae": report.mean_mae, "mean_rmse": report.mean_rmse}))


@main.command()
@click.option("--graph", "graph_dir", required=True, type=click.Path(exists=True))
@click.option("--queries", default=200, type=int)
@click.option("--area-frac", default=0.05, type=float)
@click.option("--seed", default=0, type=int)
@click.option("--out", required=True, type=click.Path())
@handle_errors
def bench(graph_dir, queries, area_frac, seed, out):
    """Time indexed vs brute-force extraction and the kernel backends."""
    from .bench import run_bench

    report = run_bench(graph_dir, n_queries=queries, area_frac=area_frac, seed=seed)
    Path(out).write_text(json.dumps(report, indent=2) + "\n")
    click.echo(json.dumps({"out": str(out), "speedup": report["speedup"],
                           "mq_mean": report["mq_mean"]}))


@main.command()
@click.option("--model", "model_dir", required=True, type=click.Path(exists=True))
@click.option("--port", default=8000, type=int)
@click.option("--host", default="127.0.0.1")
@click.option("--tasks", "task_paths", multiple=True, type=click.Path(exists=True))
@click.option("--task-kind", default="intensity", type=click.Choice(["intensity", "count"]))
@click.option("--cors-origin", default="*")
@click.option("--graph", "graph_dir", default=None, type=click.Path(exists=True))
@handle_errors
def serve(model_dir, port, host, task_paths, task_kind, cors_origin, graph_dir):
    """Start the boundary-prompting HTTP service."""
    import uvicorn

    from .downstream import load_task
    from .service import create_app
    from .training import load_embedder

    port = int(os.environ.get("BPURF_PORT", port))
    embedder = load_embedder(model_dir, graph_dir=graph_dir)
    tasks = {Path(p).stem: load_task(p, kind=task_kind) for p in task_paths}
    app = create_app(embedder, tasks, cors_origin=cors_origin)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
