"""Synthetic city generator with planted, recoverable signal.

Produces a complete input bundle (schema + entity/relation CSVs + trips +
task event files) whose ground truth is recorded alongside, so every
quantitative pipeline property can be verified at desk scale. POIs cluster
around a configurable number of centers, roads are point entities tied to
their two nearest junctions, trips follow a gravity model, and task labels
come from a Gaussian-bump intensity field plus per-category offsets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import DegenerateBbox
from .rtree import StaticRTree
from .schema import DataSchema, EntityTypeSpec, RelationSpec, write_schema

N_ROAD_CATEGORIES = 4


@dataclass
class SynthConfig:
    n_poi: int = 1000
    n_road: int = 300
    n_junction: int = 150
    n_categories: int = 12
    n_clusters: int = 5
    bbox: tuple[float, float, float, float] = (0.0, 0.0, 100.0, 100.0)
    trip_count: int = 5000
    gravity_decay: float = 20.0
    noise_sd: float = 0.1
    seed: int = 0

    def check(self):
        x0, y0, x1, y1 = self.bbox
        if not (x1 > x0 and y1 > y0):
            raise DegenerateBbox(f"bbox {self.bbox} has no area")
        for name in ("n_poi", "n_road", "n_junction", "n_categories", "n_clusters", "trip_count"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if self.gravity_decay <= 0:
            raise ValueError("gravity_decay must be > 0")
        return self


@dataclass
class PlantedField:
    """Gaussian bump mixture plus per-category offsets; the label oracle."""

    centers: np.ndarray  # (k, 2)
    weights: np.ndarray  # (k,)
    bandwidths: np.ndarray  # (k,)
    category_coeffs: np.ndarray  # (n_categories,)
    noise_sd: float = 0.0

    def to_json(self):
        return {
            "centers": self.centers.tolist(),
            "weights": self.weights.tolist(),
            "bandwidths": self.bandwidths.tolist(),
            "category_coeffs": self.category_coeffs.tolist(),
            "noise_sd": self.noise_sd,
        }

    @classmethod
    def from_json(cls, doc):
        return cls(
            centers=np.asarray(doc["centers"], dtype=np.float64).reshape(-1, 2),
            weights=np.asarray(doc["weights"], dtype=np.float64),
            bandwidths=np.asarray(doc["bandwidths"], dtype=np.float64),
            category_coeffs=np.asarray(doc["category_coeffs"], dtype=np.float64),
            noise_sd=float(doc["noise_sd"]),
        )


def field_intensity(field: PlantedField, xs, ys, cats=None):
    """Noise-free intensity: bump mixture plus the category offset."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    out = np.zeros_like(xs)
    for (cx, cy), w, bw in zip(field.centers, field.weights, field.bandwidths):
        d2 = (xs - cx) ** 2 + (ys - cy) ** 2
        out += w * np.exp(-d2 / (2.0 * bw * bw))
    if cats is not None:
        out += field.category_coeffs[np.asarray(cats, dtype=np.int64)]
    return out


def label_points(field: PlantedField, task, xs, ys, cats=None, rng=None):
    """Point labels under the planted field.

    intensity: bump mixture + category offset + N(0, noise_sd) when an rng
    is supplied. count: Poisson draws with the clipped intensity as mean
    (rng required).
    """
    base = field_intensity(field, xs, ys, cats)
    if task == "intensity":
        if rng is not None and field.noise_sd > 0:
            base = base + rng.normal(0.0, field.noise_sd, size=base.shape)
        return base
    if task == "count":
        if rng is None:
            raise ValueError("count labels are sampled; pass an rng")
        return rng.poisson(np.clip(base, 0.0, None)).astype(np.int64)
    raise ValueError(f"unknown task {task!r}")


def _fmt(v):
    return repr(float(v))


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _bundle_schema() -> DataSchema:
    et = [
        EntityTypeSpec("poi", True, "poi.csv", "id", "x", "y"),
        EntityTypeSpec("road", True, "road.csv", "id", "x", "y"),
        EntityTypeSpec("junction", True, "junction.csv", "id", "x", "y"),
        EntityTypeSpec("poi_category", False, "poi_category.csv", "id"),
        EntityTypeSpec("road_category", False, "road_category.csv", "id"),
    ]
    rel = [
        RelationSpec("poi", "poi_category", "rel_poi_category.csv", "src", "dst"),
        RelationSpec("road", "junction", "rel_road_junction.csv", "src", "dst"),
        RelationSpec("road", "road_category", "rel_road_category.csv", "src", "dst"),
    ]
    return DataSchema(et, rel)


def generate_city(config: SynthConfig, out_dir) -> dict:
    """Write a full city bundle; deterministic in the seed.

    Returns a summary with ground-truth entity/relation counts (also written
    to truth.json) for validation oracles.
    """
    config.check()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "tasks").mkdir(exist_ok=True)
    rng = np.random.default_rng(config.seed)
    x0, y0, x1, y1 = config.bbox
    w, h = x1 - x0, y1 - y0

    # cluster structure
    k = config.n_clusters
    if k > 0:
        margin = 0.15
        ccx = rng.uniform(x0 + margin * w, x1 - margin * w, k)
        ccy = rng.uniform(y0 + margin * h, y1 - margin * h, k)
        spread = 0.07 * np.hypot(w, h)
    # POIs
    if config.n_poi and k > 0:
        assign = rng.integers(0, k, config.n_poi)
        px = np.clip(ccx[assign] + rng.normal(0, spread, config.n_poi), x0, x1)
        py = np.clip(ccy[assign] + rng.normal(0, spread, config.n_poi), y0, y1)
    else:
        assign = np.zeros(config.n_poi, dtype=np.int64)
        px = rng.uniform(x0, x1, config.n_poi)
        py = rng.uniform(y0, y1, config.n_poi)
    # category: cluster-preferred with uniform leakage, so virtual tokens
    # carry geographic signal
    if config.n_categories > 0 and config.n_poi > 0:
        pref = assign % config.n_categories
        leak = rng.random(config.n_poi) > 0.6
        pcat = np.where(leak, rng.integers(0, config.n_categories, config.n_poi), pref)
    else:
        pcat = np.zeros(config.n_poi, dtype=np.int64)

    jx = rng.uniform(x0, x1, config.n_junction)
    jy = rng.uniform(y0, y1, config.n_junction)
    rx = rng.uniform(x0, x1, config.n_road)
    ry = rng.uniform(y0, y1, config.n_road)
    rcat = rng.integers(0, N_ROAD_CATEGORIES, config.n_road)

    poi_ids = [f"p{i}" for i in range(config.n_poi)]
    road_ids = [f"r{i}" for i in range(config.n_road)]
    junc_ids = [f"j{i}" for i in range(config.n_junction)]

    _write_csv(out / "poi.csv", ["id", "x", "y"],
               ([poi_ids[i], _fmt(px[i]), _fmt(py[i])] for i in range(config.n_poi)))
    _write_csv(out / "road.csv", ["id", "x", "y"],
               ([road_ids[i], _fmt(rx[i]), _fmt(ry[i])] for i in range(config.n_road)))
    _write_csv(out / "junction.csv", ["id", "x", "y"],
               ([junc_ids[i], _fmt(jx[i]), _fmt(jy[i])] for i in range(config.n_junction)))

    used_pcat = sorted(set(pcat.tolist())) if config.n_poi else []
    used_rcat = sorted(set(rcat.tolist())) if config.n_road else []
    _write_csv(out / "poi_category.csv", ["id"], ([f"pc{c}"] for c in used_pcat))
    _write_csv(out / "road_category.csv", ["id"], ([f"rc{c}"] for c in used_rcat))

    _write_csv(out / "rel_poi_category.csv", ["src", "dst"],
               ([poi_ids[i], f"pc{pcat[i]}"] for i in range(config.n_poi)))
    _write_csv(out / "rel_road_category.csv", ["src", "dst"],
               ([road_ids[i], f"rc{rcat[i]}"] for i in range(config.n_road)))

    # each road connects to its 2 nearest junctions
    rj_pairs = []
    if config.n_road and config.n_junction:
        jt = StaticRTree(jx, jy, np.zeros(config.n_junction, np.uint16),
                         np.arange(config.n_junction, dtype=np.uint32))
        kk = min(2, config.n_junction)
        for i in range(config.n_road):
            near = jt.knn(rx[i], ry[i], kk)
            for e in near:
                rj_pairs.append((road_ids[i], junc_ids[int(jt.elocal[e])]))
    _write_csv(out / "rel_road_junction.csv", ["src", "dst"], ([a, b] for a, b in rj_pairs))

    # gravity trips: uniform pair proposals accepted with exp(-d / decay)
    trips = []
    if config.trip_count and config.n_poi >= 2:
        need = config.trip_count
        while need > 0:
            batch = max(256, 4 * need)
            o = rng.integers(0, config.n_poi, batch)
            d = rng.integers(0, config.n_poi, batch)
            dist = np.hypot(px[o] - px[d], py[o] - py[d])
            accept = rng.random(batch) < np.exp(-dist / config.gravity_decay)
            o, d = o[accept][:need], d[accept][:need]
            trips.extend(zip(o.tolist(), d.tolist()))
            need = config.trip_count - len(trips)
    _write_csv(out / "trips.csv", ["origin_x", "origin_y", "dest_x", "dest_y"],
               ([_fmt(px[o]), _fmt(py[o]), _fmt(px[d]), _fmt(py[d])] for o, d in trips))

    # planted field over a subset of cluster centers
    if k > 0:
        nb = max(1, k - 1)
        field = PlantedField(
            centers=np.column_stack([ccx[:nb], ccy[:nb]]),
            weights=rng.uniform(1.0, 3.0, nb),
            bandwidths=rng.uniform(0.10, 0.22, nb) * np.hypot(w, h),
            category_coeffs=rng.normal(0.0, 1.0, max(config.n_categories, 1)),
            noise_sd=config.noise_sd,
        )
    else:
        field = PlantedField(
            centers=np.array([[x0 + w / 2, y0 + h / 2]]),
            weights=np.array([1.0]),
            bandwidths=np.array([0.2 * np.hypot(w, h)]),
            category_coeffs=rng.normal(0.0, 1.0, max(config.n_categories, 1)),
            noise_sd=config.noise_sd,
        )
    (out / "field.json").write_text(json.dumps(field.to_json(), indent=2) + "\n")

    # task event files: one intensity event per POI; count events expanded
    y_int = label_points(field, "intensity", px, py, pcat, rng=rng)
    _write_csv(out / "tasks" / "intensity.csv", ["x", "y", "value"],
               ([_fmt(px[i]), _fmt(py[i]), _fmt(y_int[i])] for i in range(config.n_poi)))
    counts = label_points(field, "count", px, py, pcat, rng=rng) if config.n_poi else np.zeros(0, np.int64)
    def count_rows():
        for i in range(config.n_poi):
            for _ in range(int(counts[i])):
                yield [_fmt(px[i]), _fmt(py[i]), "1.0"]
    _write_csv(out / "tasks" / "count.csv", ["x", "y", "value"], count_rows())

    schema = _bundle_schema()
    write_schema(schema, out / "schema.json")

    truth = {
        "entity_counts": {
            "poi": config.n_poi,
            "road": config.n_road,
            "junction": config.n_junction,
            "poi_category": len(used_pcat),
            "road_category": len(used_rcat),
        },
        "relation_pair_counts": {
            "poi__poi_category": config.n_poi,
            "road__junction": len(set(rj_pairs)),
            "road__road_category": config.n_road,
        },
        "bbox": list(config.bbox),
        "seed": config.seed,
        "trip_count": len(trips),
    }
    (out / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    return truth
