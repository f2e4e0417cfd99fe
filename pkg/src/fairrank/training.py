"""Pointwise squared-loss training of linear scorers with a fairness penalty.

The objective on a batch is ``mean((s - r)^2) + alpha * Gamma(s)`` with
raw linear scores ``s = X @ theta``. Gamma is one of the empirical fairness
violations from :mod:`fairrank.metrics`, computed either on the pooled batch
("amortized") or per query and averaged ("per_query").
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .data import Dataset, ItemRecord, QueryGroup
from .metrics import FairnessKind, group_fairness

log = logging.getLogger(__name__)

SCOPES = ("amortized", "per_query")
OPTIMIZERS = ("gd", "sgd")
MODEL_HEADER = "fairrank-linear-model v1"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearModel:
    theta: np.ndarray
    intercept: bool = False

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        if not np.isfinite(theta).all():
            raise ValueError("model weights must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @property
    def n_features(self) -> int:
        return len(self.theta) - int(self.intercept)

    def design(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"feature dimension {X.shape[1]} does not match model ({self.n_features})")
        if self.intercept:
            X = np.hstack([X, np.ones((X.shape[0], 1))])
        return X

    def predict(self, X) -> np.ndarray:
        return self.design(X) @ self.theta

    @classmethod
    def zeros(cls, n_features: int, intercept: bool = False) -> "LinearModel":
        return cls(np.zeros(n_features + int(intercept)), intercept)


def save_model(model: LinearModel, path) -> None:
    lines = [f"{MODEL_HEADER} dim={len(model.theta)} intercept={int(model.intercept)}"]
    lines += [repr(float(w)) for w in model.theta]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path) -> LinearModel:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    header = lines[0].split()
    if " ".join(header[:2]) != MODEL_HEADER:
        raise ValueError(f"{path}: not a fairrank model file")
    meta = dict(tok.split("=", 1) for tok in header[2:])
    weights = [float(x) for x in lines[1:] if x.strip()]
    if len(weights) != int(meta["dim"]):
        raise ValueError(f"{path}: header declares {meta['dim']} weights, found {len(weights)}")
    return LinearModel(np.array(weights), bool(int(meta.get("intercept", "0"))))


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.0
    kind: FairnessKind = FairnessKind.EOP
    scope: str = "amortized"
    optimizer: str = "gd"
    learning_rate: float = 0.003
    steps: int = 1500
    epochs: int = 5
    queries_per_batch: int = 100
    docs_per_query_cap: int = 10
    seed: int = 0
    intercept: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", FairnessKind.parse(self.kind))
        object.__setattr__(self, "scope", self.scope.replace("-", "_"))
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise ValueError("alpha must be a finite value >= 0")
        if self.scope not in SCOPES:
            raise ValueError(f"scope must be one of {SCOPES}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.steps < 0 or self.epochs < 1:
            raise ValueError("steps must be >= 0 and epochs >= 1")
        if self.queries_per_batch < 1 or self.docs_per_query_cap < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class TrainTrace:
    step: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    degenerate_batches: int = 0
    batch_orders: list = field(default_factory=list)

    def record(self, step, loss, gamma, objective):
        self.step.append(step)
        self.loss.append(loss)
        self.gamma.append(gamma)
        self.objective.append(objective)

    def __len__(self):
        return len(self.step)

    def to_csv(self, path) -> None:
        rows = ["step,loss,gamma,objective"]
        rows += [f"{s},{l!r},{g!r},{o!r}" for s, l, g, o in
                 zip(self.step, self.loss, self.gamma, self.objective)]
        Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# batch-level math


@dataclass(frozen=True)
class Batch:
    """Design matrix and labels of a set of queries; ``qid`` codes are 0-based."""

    X: np.ndarray
    y: np.ndarray
    protected: np.ndarray
    qid: np.ndarray
    n_queries: int


def as_batch(data: Union[Dataset, Sequence[QueryGroup]], intercept: bool = False) -> Batch:
    if not isinstance(data, Dataset):
        groups = tuple(data)
        if not groups:
            raise ValueError("batch must contain at least one query")
        data = Dataset(groups, len(groups[0].items[0].features))
    arr = data.arrays()
    X = arr.X
    if intercept:
        X = np.hstack([X, np.ones((X.shape[0], 1))])
    return Batch(X, arr.y, arr.protected, arr.qid, arr.n_queries)


@dataclass(frozen=True)
class Evaluation:
    loss: float
    gamma: float
    objective: float
    grad: np.ndarray
    degenerate: bool


def evaluate_objective(theta: np.ndarray, batch: Batch, alpha: float, kind, scope: str) -> Evaluation:
    """Value and (sub)gradient of the regularized objective on one batch."""
    X, y = batch.X, batch.y
    n = X.shape[0]
    s = X @ theta
    resid = s - y
    loss = float(resid @ resid) / n
    score_grad = (2.0 / n) * resid

    if scope == "amortized":
        fair = group_fairness(s, y, batch.protected, kind)
        gamma = float(fair.gamma[0])
        fair_grad = fair.item_grad
        degenerate = not fair.complete[0]
    else:
        fair = group_fairness(s, y, batch.protected, kind, group=batch.qid, n_groups=batch.n_queries)
        used = fair.complete
        n_used = int(used.sum())
        degenerate = n_used < batch.n_queries
        if n_used:
            gamma = float(fair.gamma[used].sum()) / n_used
            fair_grad = fair.item_grad * used[batch.qid] / n_used
        else:
            gamma = 0.0
            fair_grad = np.zeros(n)

    if alpha:
        score_grad = score_grad + alpha * fair_grad
    grad = X.T @ score_grad
    return Evaluation(loss, gamma, loss + alpha * gamma, grad, degenerate)


# ---------------------------------------------------------------------------
# public functional API


def score(model: LinearModel, item: ItemRecord) -> float:
    """Inner product of the model weights with the item's features."""
    return float(model.predict(np.asarray(item.features, dtype=float))[0])


def squared_loss(model: LinearModel, data) -> float:
    b = as_batch(data, model.intercept)
    if b.X.shape[0] == 0:
        raise ValueError("empty data")
    r = b.X @ model.theta - b.y
    return float(r @ r) / len(r)


def regularizer(model: LinearModel, batch, kind, scope: str = "amortized") -> float:
    b = as_batch(batch, model.intercept)
    return evaluate_objective(model.theta, b, 0.0, FairnessKind.parse(kind), scope.replace("-", "_")).gamma


def objective(model: LinearModel, batch, config: TrainConfig) -> float:
    b = as_batch(batch, model.intercept)
    return evaluate_objective(model.theta, b, config.alpha, config.kind, config.scope).objective


def gradient(model: LinearModel, batch, config: TrainConfig) -> np.ndarray:
    b = as_batch(batch, model.intercept)
    return evaluate_objective(model.theta, b, config.alpha, config.kind, config.scope).grad


def _step(theta, batch, config, trace, step):
    ev = evaluate_objective(theta, batch, config.alpha, config.kind, config.scope)
    if not (math.isfinite(ev.objective) and np.isfinite(ev.grad).all()):
        raise TrainingError(
            f"non-finite objective at step {step} (loss={ev.loss}, gamma={ev.gamma}); "
            f"try a smaller learning rate than {config.learning_rate}"
        )
    if ev.degenerate:
        trace.degenerate_batches += 1
    trace.record(step, ev.loss, ev.gamma, ev.objective)
    return theta - config.learning_rate * ev.grad


def train_gd(data: Dataset, config: TrainConfig) -> tuple[LinearModel, TrainTrace]:
    """Full-batch gradient descent from the zero vector."""
    batch = as_batch(data, config.intercept)
    theta = np.zeros(batch.X.shape[1])
    trace = TrainTrace()
    for step in range(config.steps):
        theta = _step(theta, batch, config, trace, step)
    if trace.degenerate_batches:
        log.warning("fairness term had empty subgroups in %d of %d steps",
                    trace.degenerate_batches, config.steps)
    return LinearModel(theta, config.intercept), trace


def train_sgd(data: Dataset, config: TrainConfig) -> tuple[LinearModel, TrainTrace]:
    """Mini-batch SGD over shuffled queries with a per-query document cap.

    Each batch keeps its queries and documents in dataset order, so a single
    batch covering everything reproduces a full gradient step exactly.
    """
    full = as_batch(data, config.intercept)
    starts = np.searchsorted(full.qid, np.arange(full.n_queries))
    sizes = np.diff(np.append(starts, len(full.qid)))
    rng = np.random.default_rng(config.seed)
    theta = np.zeros(full.X.shape[1])
    trace = TrainTrace()
    query_ids = data.query_ids
    step = 0
    for _ in range(config.epochs):
        perm = rng.permutation(full.n_queries)
        trace.batch_orders.append([query_ids[i] for i in perm])
        for lo in range(0, full.n_queries, config.queries_per_batch):
            chosen = np.sort(perm[lo:lo + config.queries_per_batch])
            idx, codes = [], []
            for code, q in enumerate(chosen):
                m = sizes[q]
                if m > config.docs_per_query_cap:
                    local = np.sort(rng.choice(m, config.docs_per_query_cap, replace=False))
                else:
                    local = np.arange(m)
                idx.append(starts[q] + local)
                codes.append(np.full(len(local), code))
            idx = np.concatenate(idx)
            batch = Batch(full.X[idx], full.y[idx], full.protected[idx],
                          np.concatenate(codes), len(chosen))
            theta = _step(theta, batch, config, trace, step)
            step += 1
    if trace.degenerate_batches:
        log.warning("fairness term had empty subgroups in %d of %d batches",
                    trace.degenerate_batches, step)
    return LinearModel(theta, config.intercept), trace


def train(data: Dataset, config: TrainConfig) -> tuple[LinearModel, TrainTrace]:
    return train_gd(data, config) if config.optimizer == "gd" else train_sgd(data, config)
