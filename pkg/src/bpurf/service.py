"""HTTP service for interactive boundary prompting.

All endpoints are read-only over a frozen model bundle; per-request
extraction state comes from the embedder's scratch buffers. Similarity
search runs over the persisted context pool plus a bounded ring of regions
embedded during the session.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response

from .downstream import RidgeModel, StandardizeStats, TaskDataset, aggregate_labels, default_sampler, ridge_fit, standardize
from .errors import BpurfError, EmptyRegion, InvalidPolygon, NonFiniteValue
from .geometry import parse_boundary
from .model import RegionEmbedder
from .training import sample_region_boundary

SESSION_RING_LIMIT = 1024


@dataclass
class TaskHead:
    task: TaskDataset
    model: RidgeModel
    stats: StandardizeStats
    batch_size: int


@dataclass
class ServiceState:
    embedder: RegionEmbedder
    pool_embeddings: np.ndarray
    task_heads: dict[str, TaskHead] = field(default_factory=dict)
    session_boundaries: list = field(default_factory=list)
    session_embeddings: list = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)

    def bump(self, endpoint):
        self.counters[endpoint] = self.counters.get(endpoint, 0) + 1

    def remember(self, boundary, vec):
        self.session_boundaries.append(boundary)
        self.session_embeddings.append(vec)
        if len(self.session_boundaries) > SESSION_RING_LIMIT:
            self.session_boundaries.pop(0)
            self.session_embeddings.pop(0)


def fit_task_head(embedder: RegionEmbedder, task: TaskDataset, batch_size=40,
                  seed=17, lambda_ridge=1.0) -> TaskHead:
    """Freeze one ridge head: sampled batch, standardized labels, full fit."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7EAD]))
    sampler = default_sampler()
    xs = np.concatenate([embedder.graph.coords[t][0] for t in embedder.graph.spatial_type_ids])
    ys = np.concatenate([embedder.graph.coords[t][1] for t in embedder.graph.spatial_type_ids])
    bbox = (xs.min(), ys.min(), xs.max(), ys.max())
    boundaries = [sample_region_boundary(rng, bbox, sampler, embedder.gir)
                  for _ in range(batch_size)]
    X, errors, _ = embedder.embed(boundaries)
    kept = [b for b, e in zip(boundaries, errors) if e is None]
    y = aggregate_labels(task, kept)
    z, stats = standardize(y)
    model = ridge_fit(X, z, lambda_ridge)
    return TaskHead(task, model, stats, batch_size)


def _f32_rounded(vec):
    return [float(np.float32(v)) for v in vec]


def _cosine(a, b):
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b, axis=1)
    denom = np.maximum(na * nb, 1e-300)
    return (b @ a) / denom


def create_app(embedder: RegionEmbedder, tasks: dict[str, TaskDataset] | None = None,
               cors_origin: str = "*") -> FastAPI:
    state = ServiceState(embedder=embedder, pool_embeddings=embedder.embed_pool())
    for name, task in (tasks or {}).items():
        state.task_heads[name] = fit_task_head(embedder, task)

    app = FastAPI(title="boundary-prompted region embedding service")
    app.state.service = state
    app.add_middleware(
        CORSMiddleware, allow_origins=[cors_origin], allow_methods=["*"],
        allow_headers=["*"],
    )

    def error_response(status, error, detail):
        return JSONResponse(status_code=status,
                            content={"error": error, "detail": str(detail)})

    @app.exception_handler(InvalidPolygon)
    async def _invalid(request: Request, exc):
        return error_response(400, "invalid_polygon", exc)

    @app.exception_handler(EmptyRegion)
    async def _empty(request: Request, exc):
        return error_response(422, "empty_region", exc)

    @app.exception_handler(NonFiniteValue)
    async def _numeric(request: Request, exc):
        return error_response(500, "numeric_failure", exc)

    @app.exception_handler(BpurfError)
    async def _other(request: Request, exc):
        return error_response(500, type(exc).__name__, exc)

    @app.post("/v1/embed")
    async def embed(request: Request):
        state.bump("embed")
        body = await request.json()
        if not isinstance(body, dict) or "boundaries" not in body:
            return error_response(400, "bad_request", "body must be {'boundaries': [...]}")
        try:
            boundaries = [parse_boundary(b) for b in body["boundaries"]]
        except InvalidPolygon as e:
            return error_response(400, "invalid_polygon", e)
        vecs, errors, subs = embedder.embed(boundaries)
        embeddings, token_counts = [], []
        vi = 0
        for b, err in zip(boundaries, errors):
            if err is None:
                embeddings.append(_f32_rounded(vecs[vi]))
                token_counts.append(subs[vi].type_counts())
                state.remember(b, vecs[vi].copy())
                vi += 1
            else:
                embeddings.append(None)
                token_counts.append({})
        payload = {"embeddings": embeddings, "token_counts": token_counts,
                   "errors": errors}
        # canonical serialization keeps identical requests byte-identical
        return Response(content=json.dumps(payload, sort_keys=True),
                        media_type="application/json")

    @app.post("/v1/similar")
    async def similar(request: Request):
        state.bump("similar")
        body = await request.json()
        if not isinstance(body, dict) or "boundary" not in body:
            return error_response(400, "bad_request", "body must be {'boundary':..., 'k':int}")
        k = int(body.get("k", 5))
        boundary = parse_boundary(body["boundary"])
        vecs, errors, _ = embedder.embed([boundary])
        if errors[0] is not None:
            return error_response(422, "empty_region", "boundary encloses no spatial tokens")
        query = vecs[0]
        cands, sources = [], []
        if len(state.pool_embeddings):
            cands.append(state.pool_embeddings)
            sources += [("pool", e.boundary) for e in embedder.pool.entries]
        if state.session_embeddings:
            cands.append(np.vstack(state.session_embeddings))
            sources += [("session", b) for b in state.session_boundaries]
        results = []
        if cands and k > 0:
            allv = np.vstack(cands)
            scores = _cosine(query, allv)
            order = np.argsort(-scores)[:k]
            for i in order:
                src, b = sources[int(i)]
                results.append({
                    "score": float(np.float32(scores[int(i)])),
                    "source": src,
                    "boundary": None if b is None else b.to_geojson(),
                })
        return {"similar": results}

    @app.post("/v1/predict")
    async def predict(request: Request):
        state.bump("predict")
        body = await request.json()
        name = body.get("task")
        if name not in state.task_heads:
            return error_response(404, "unknown_task", f"no fitted head for task {name!r}")
        head = state.task_heads[name]
        boundary = parse_boundary(body["boundary"])
        vecs, errors, _ = embedder.embed([boundary])
        if errors[0] is not None:
            return error_response(422, "empty_region", "boundary encloses no spatial tokens")
        z = float(head.model.predict(vecs[:1])[0])
        return {
            "task": name,
            "prediction_z": float(np.float32(z)),
            "batch_mean": head.stats.mean,
            "batch_sd": head.stats.sd,
            "batch_size": head.batch_size,
        }

    @app.get("/v1/tokens")
    async def tokens(bbox: str, limit: int = 2000):
        state.bump("tokens")
        try:
            x0, y0, x1, y1 = (float(v) for v in bbox.split(","))
        except ValueError:
            return error_response(400, "bad_request", "bbox must be x0,y0,x1,y1")
        gir = embedder.gir
        rx = np.array([x0, x1, x1, x0])
        ry = np.array([y0, y0, y1, y1])
        idx = gir.query_ring(rx, ry)
        order = np.lexsort((gir.elocal[idx], gir.etype[idx]))
        idx = idx[order]
        if len(idx) > limit > 0:
            # deterministic density thinning
            take = np.linspace(0, len(idx) - 1, limit).astype(np.int64)
            idx = idx[take]
        names = [t.name for t in embedder.graph.types]
        return {"tokens": [
            {"type": names[int(t)], "x": float(x), "y": float(y)}
            for t, x, y in zip(gir.etype[idx], gir.ex[idx], gir.ey[idx])
        ]}

    @app.get("/v1/meta")
    async def meta():
        state.bump("meta")
        return {
            "graph": embedder.graph.describe(),
            "model": embedder.config.to_json(),
            "channels": embedder.config.channels.enabled(),
            "pool_size": len(embedder.pool),
            "tasks": sorted(state.task_heads),
            "counters": dict(state.counters),
        }

    return app
