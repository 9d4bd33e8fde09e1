"""Downstream regression evaluation over freshly sampled regions.

Point-level task events aggregate into per-region targets (count or value
sum), get standardized within each evaluation batch, and a ridge head fit on
a 70/30 within-batch split reports MAE/RMSE/R^2, averaged over batches. The
evaluation sampler runs on its own RNG stream, and every sampled boundary's
hash is logged so train/eval region separation is checkable.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import BatchTooSmall, MissingFile, SingularSystem
from .geometry import points_in_prompt
from .training import TrainingConfig, boundary_hash, sample_region_boundary


@dataclass
class TaskDataset:
    name: str
    kind: str  # "count" | "intensity"
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray


def load_task(path, name=None, kind="intensity") -> TaskDataset:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"task file not found: {path}")
    xs, ys, vals = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            xs.append(float(row["x"]))
            ys.append(float(row["y"]))
            vals.append(float(row["value"]))
    return TaskDataset(name or path.stem, kind,
                       np.asarray(xs), np.asarray(ys), np.asarray(vals))


def aggregate_labels(task: TaskDataset, boundaries) -> np.ndarray:
    """Per-region target: event count inside, or sum of event values."""
    out = np.zeros(len(boundaries))
    for i, b in enumerate(boundaries):
        inside = points_in_prompt(task.xs, task.ys, b)
        out[i] = inside.sum() if task.kind == "count" else task.values[inside].sum()
    return out


@dataclass
class StandardizeStats:
    mean: float
    sd: float
    degenerate: bool

    def apply(self, y):
        if self.degenerate:
            return np.zeros_like(np.asarray(y, dtype=np.float64))
        return (np.asarray(y, dtype=np.float64) - self.mean) / self.sd


def standardize(y):
    """Population z-scores plus the stats used (constant input flags degenerate)."""
    y = np.asarray(y, dtype=np.float64)
    if len(y) < 2:
        raise BatchTooSmall("standardization needs at least 2 values")
    mean = float(y.mean())
    sd = float(y.std())
    if sd == 0.0:
        return np.zeros_like(y), StandardizeStats(mean, 0.0, True)
    return (y - mean) / sd, StandardizeStats(mean, sd, False)


@dataclass
class RidgeModel:
    beta: np.ndarray
    intercept: float
    x_mean: np.ndarray
    lambda_ridge: float

    def predict(self, X):
        return (np.asarray(X) - self.x_mean) @ self.beta + self.intercept


def ridge_fit(X, y, lambda_ridge=1.0) -> RidgeModel:
    """Closed-form ridge on column-centered data via Cholesky.

    beta = (Xc^T Xc + lambda I)^-1 Xc^T yc with the intercept restoring the
    means. With lambda_ridge = 0 a rank-deficient design raises
    SingularSystem.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or len(X) != len(y) or len(y) < 2:
        raise ValueError("need a 2-D X with one y per row and >= 2 rows")
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    xc = X - x_mean
    yc = y - y_mean
    gram = xc.T @ xc + lambda_ridge * np.eye(X.shape[1])
    try:
        factor = scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError as e:
        raise SingularSystem(f"normal equations not positive definite: {e}") from e
    except scipy.linalg.LinAlgError as e:  # pragma: no cover - alias varies
        raise SingularSystem(f"normal equations not positive definite: {e}") from e
    beta = scipy.linalg.cho_solve(factor, xc.T @ yc)
    return RidgeModel(beta, y_mean, x_mean, lambda_ridge)


def regression_metrics(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    err = y_pred - y_true
    mae = float(np.abs(err).mean())
    rmse = float(np.sqrt((err * err).mean()))
    ss_res = float((err * err).sum())
    ss_tot = float(((y_true - y_true.mean()) ** 2).sum())
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res == 0.0 else -np.inf
    else:
        r2 = 1.0 - ss_res / ss_tot
    return mae, rmse, r2


@dataclass
class EvalReport:
    task: str
    n_batches: int
    batch_size: int
    seed: int
    lambda_ridge: float
    per_batch: list = field(default_factory=list)
    boundary_hashes: list = field(default_factory=list)

    @property
    def mean_mae(self):
        return float(np.mean([b["mae"] for b in self.per_batch]))

    @property
    def mean_rmse(self):
        return float(np.mean([b["rmse"] for b in self.per_batch]))

    @property
    def mean_r2(self):
        return float(np.mean([b["r2"] for b in self.per_batch]))

    def to_json(self):
        return {
            "task": self.task,
            "n_batches": self.n_batches,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "lambda_ridge": self.lambda_ridge,
            "per_batch": self.per_batch,
            "mean": {"mae": self.mean_mae, "rmse": self.mean_rmse, "r2": self.mean_r2},
            "boundary_hashes": self.boundary_hashes,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")


def default_sampler(**kw) -> TrainingConfig:
    base = dict(batch_size=2, steps=0, s_min=0.10, s_max=0.30,
                m_min=5, max_retries=500)
    base.update(kw)
    return TrainingConfig(**base)


def evaluate(embedder, task: TaskDataset, n_batches=5, batch_size=40, seed=0,
             lambda_ridge=1.0, sampler: TrainingConfig | None = None,
             feature_fn=None, train_frac=0.7) -> EvalReport:
    """Sample fresh region batches, embed, fit ridge per batch, average.

    ``feature_fn(boundaries, X)`` may replace the embedding matrix (noise
    controls, oracle features); it sees the standardized protocol otherwise.
    """
    sampler = sampler or default_sampler()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE7A1]))
    xs = np.concatenate([embedder.graph.coords[t][0] for t in embedder.graph.spatial_type_ids])
    ys = np.concatenate([embedder.graph.coords[t][1] for t in embedder.graph.spatial_type_ids])
    bbox = (xs.min(), ys.min(), xs.max(), ys.max())
    report = EvalReport(task.name, n_batches, batch_size, seed, lambda_ridge)
    for b in range(n_batches):
        boundaries = [sample_region_boundary(rng, bbox, sampler, embedder.gir)
                      for _ in range(batch_size)]
        report.boundary_hashes.extend(boundary_hash(x) for x in boundaries)
        X, errors, _ = embedder.embed(boundaries)
        kept = [bd for bd, e in zip(boundaries, errors) if e is None]
        if feature_fn is not None:
            X = feature_fn(kept, X)
        y = aggregate_labels(task, kept)
        z, stats = standardize(y)
        n_train = int(round(train_frac * len(kept)))
        perm = rng.permutation(len(kept))
        tr_idx, te_idx = perm[:n_train], perm[n_train:]
        model = ridge_fit(X[tr_idx], z[tr_idx], lambda_ridge)
        mae, rmse, r2 = regression_metrics(z[te_idx], model.predict(X[te_idx]))
        report.per_batch.append({
            "batch": b, "mae": mae, "rmse": rmse, "r2": r2,
            "n_train": int(len(tr_idx)), "n_test": int(len(te_idx)),
            "degenerate_labels": stats.degenerate,
        })
    return report
