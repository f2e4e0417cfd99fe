"""Ranking datasets: in-memory representation, file I/O, standardization,
query-level fold splitting and a seeded synthetic generator with
within-query item dependence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features


class DatasetError(ValueError):
    """Raised when a dataset file or object violates the format contract."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class ItemRecord:
    query_id: str
    doc_id: str
    features: tuple[float, ...]
    relevance: int
    protected: int

    def __post_init__(self):
        if self.relevance not in (0, 1):
            raise DatasetError(f"non-binary relevance {self.relevance!r}")
        if self.protected not in (0, 1):
            raise DatasetError(f"non-binary protected flag {self.protected!r}")
        if not all(math.isfinite(v) for v in self.features):
            raise DatasetError(f"non-finite feature in item {self.doc_id!r}")


@dataclass(frozen=True)
class QueryGroup:
    query_id: str
    items: tuple[ItemRecord, ...]

    def __post_init__(self):
        if not self.items:
            raise DatasetError(f"query {self.query_id!r} has no items")
        seen = set()
        for item in self.items:
            if item.query_id != self.query_id:
                raise DatasetError(
                    f"item {item.doc_id!r} has query_id {item.query_id!r}, "
                    f"expected {self.query_id!r}"
                )
            if item.doc_id in seen:
                raise DatasetError(
                    f"duplicate (query_id, doc_id) = ({self.query_id!r}, {item.doc_id!r})"
                )
            seen.add(item.doc_id)

    def __len__(self):
        return len(self.items)

    @property
    def doc_ids(self) -> list[str]:
        return [it.doc_id for it in self.items]

    @property
    def features(self) -> np.ndarray:
        return np.array([it.features for it in self.items], dtype=float)

    @property
    def relevance(self) -> np.ndarray:
        return np.array([it.relevance for it in self.items], dtype=int)

    @property
    def protected(self) -> np.ndarray:
        return np.array([it.protected for it in self.items], dtype=int)


@dataclass(frozen=True)
class RankingArrays:
    """Flat array view of a dataset; rows are items in dataset order.

    ``qid`` holds the position of each item's query in ``query_ids``.
    """

    X: np.ndarray
    y: np.ndarray
    protected: np.ndarray
    qid: np.ndarray
    query_ids: tuple[str, ...]
    doc_ids: tuple[str, ...]

    @property
    def n_queries(self) -> int:
        return len(self.query_ids)


@dataclass(frozen=True)
class Dataset:
    queries: tuple[QueryGroup, ...]
    feature_dim: int
    _arrays: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "queries", tuple(self.queries))
        for group in self.queries:
            for item in group.items:
                if len(item.features) != self.feature_dim:
                    raise DatasetError(
                        f"item ({group.query_id!r}, {item.doc_id!r}) has "
                        f"{len(item.features)} features, expected {self.feature_dim}"
                    )

    def __len__(self):
        return len(self.queries)

    @property
    def n_queries(self) -> int:
        return len(self.queries)

    @property
    def n_items(self) -> int:
        return sum(len(g) for g in self.queries)

    @property
    def query_ids(self) -> list[str]:
        return [g.query_id for g in self.queries]

    def arrays(self) -> RankingArrays:
        """Flat arrays for vectorized computation (cached; datasets are immutable)."""
        if not self._arrays:
            rows = [it for g in self.queries for it in g.items]
            X = np.array([it.features for it in rows], dtype=float).reshape(len(rows), self.feature_dim)
            arr = RankingArrays(
                X=X,
                y=np.array([it.relevance for it in rows], dtype=float),
                protected=np.array([it.protected for it in rows], dtype=int),
                qid=np.repeat(np.arange(self.n_queries), [len(g) for g in self.queries]),
                query_ids=tuple(self.query_ids),
                doc_ids=tuple(it.doc_id for it in rows),
            )
            for a in (arr.X, arr.y, arr.protected, arr.qid):
                a.setflags(write=False)
            self._arrays.append(arr)
        return self._arrays[0]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.queries[i] for i in indices), self.feature_dim)

    def with_features(self, X: np.ndarray) -> "Dataset":
        """Copy of the dataset with the feature matrix replaced (rows in item order)."""
        X = np.asarray(X, dtype=float)
        if X.shape[0] != self.n_items:
            raise DatasetError(f"expected {self.n_items} feature rows, got {X.shape[0]}")
        groups = []
        row = 0
        for g in self.queries:
            items = []
            for it in g.items:
                items.append(ItemRecord(it.query_id, it.doc_id, tuple(X[row].tolist()),
                                        it.relevance, it.protected))
                row += 1
            groups.append(QueryGroup(g.query_id, tuple(items)))
        return Dataset(tuple(groups), X.shape[1])


def from_arrays(X, y, protected, qid, doc_ids=None, query_ids=None) -> Dataset:
    """Build a Dataset from flat arrays; items with equal ``qid`` must be contiguous."""
    X = check_features(X)
    y = np.asarray(y)
    protected = np.asarray(protected)
    qid = np.asarray(qid)
    n = X.shape[0]
    if not (len(y) == len(protected) == len(qid) == n):
        raise DatasetError("X, y, protected and qid must have the same length")
    groups: list[QueryGroup] = []
    start = 0
    seen: set = set()
    while start < n:
        stop = start
        while stop < n and qid[stop] == qid[start]:
            stop += 1
        key = qid[start]
        if key in seen:
            raise DatasetError(f"items of query {key!r} are not contiguous")
        seen.add(key)
        q = str(key) if query_ids is None else str(query_ids[len(groups)])
        items = tuple(
            ItemRecord(q, str(j - start) if doc_ids is None else str(doc_ids[j]),
                       tuple(X[j].tolist()), int(y[j]), int(protected[j]))
            for j in range(start, stop)
        )
        groups.append(QueryGroup(q, items))
        start = stop
    return Dataset(tuple(groups), X.shape[1])


# ---------------------------------------------------------------------------
# file I/O


def _parse_binary(token, what: str, line: int) -> int:
    if isinstance(token, bool):
        raise DatasetError(f"non-binary {what} value {token!r}", line)
    if isinstance(token, (int, float)):
        value = token
    else:
        try:
            value = int(str(token).strip())
        except ValueError:
            raise DatasetError(f"non-binary {what} value {token!r}", line) from None
    if value not in (0, 1):
        raise DatasetError(f"non-binary {what} value {token!r}", line)
    return int(value)


def _parse_features(values, line: int) -> tuple[float, ...]:
    try:
        feats = tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise DatasetError(f"unparseable feature vector {values!r}", line) from None
    if not feats:
        raise DatasetError("empty feature vector", line)
    if not all(math.isfinite(v) for v in feats):
        raise DatasetError("non-finite feature value", line)
    return feats


def _records_tsv(lines: Iterable[str]):
    for lineno, raw in enumerate(lines, start=1):
        text = raw.rstrip("\r\n")
        if not text.strip() or text.lstrip().startswith("#"):
            continue
        parts = text.split("\t")
        if len(parts) != 5:
            raise DatasetError(f"expected 5 tab-separated fields, got {len(parts)}", lineno)
        qid, did, rel, prot, feats = parts
        yield lineno, qid, did, rel, prot, feats.split(",")


def _records_jsonl(lines: Iterable[str]):
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"invalid JSON: {exc.msg}", lineno) from None
        try:
            yield (lineno, str(obj["query_id"]), str(obj["doc_id"]), obj["relevance"],
                   obj["protected"], obj["features"])
        except (KeyError, TypeError):
            raise DatasetError(
                "object must have keys query_id, doc_id, relevance, protected, features",
                lineno,
            ) from None


def _infer_format(path: Path) -> str:
    return "jsonl" if path.suffix.lower() in (".jsonl", ".json") else "tsv"


def load_dataset(path, format: str | None = None) -> Dataset:
    """Read a TSV or JSONL ranking file.

    Queries keep first-appearance order and items keep file order within a
    query. Errors carry the offending line number.
    """
    path = Path(path)
    fmt = format or _infer_format(path)
    if fmt not in ("tsv", "jsonl"):
        raise ValueError(f"unknown dataset format {fmt!r}")
    records = _records_tsv if fmt == "tsv" else _records_jsonl

    dim = None
    order: list[str] = []
    by_query: dict[str, list[ItemRecord]] = {}
    seen: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, qid, did, rel, prot, feats in records(fh):
            features = _parse_features(feats, lineno)
            if dim is None:
                dim = len(features)
            elif len(features) != dim:
                raise DatasetError(
                    f"dimension mismatch: {len(features)} features, expected {dim}", lineno
                )
            if (qid, did) in seen:
                raise DatasetError(f"duplicate (query_id, doc_id) = ({qid!r}, {did!r})", lineno)
            seen.add((qid, did))
            item = ItemRecord(qid, did, features, _parse_binary(rel, "relevance", lineno),
                              _parse_binary(prot, "protected", lineno))
            if qid not in by_query:
                by_query[qid] = []
                order.append(qid)
            by_query[qid].append(item)
    if dim is None:
        raise DatasetError(f"{path}: no items found")
    return Dataset(tuple(QueryGroup(q, tuple(by_query[q])) for q in order), dim)


def save_dataset(dataset: Dataset, path, format: str | None = None) -> None:
    """Write a dataset; floats use ``repr`` so a reload is bit-exact."""
    path = Path(path)
    fmt = format or _infer_format(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if fmt == "tsv":
            fh.write("# query_id\tdoc_id\trelevance\tprotected\tfeatures\n")
            for g in dataset.queries:
                for it in g.items:
                    feats = ",".join(repr(float(v)) for v in it.features)
                    fh.write(f"{it.query_id}\t{it.doc_id}\t{it.relevance}\t{it.protected}\t{feats}\n")
        elif fmt == "jsonl":
            for g in dataset.queries:
                for it in g.items:
                    fh.write(json.dumps({
                        "query_id": it.query_id, "doc_id": it.doc_id,
                        "relevance": it.relevance, "protected": it.protected,
                        "features": list(it.features),
                    }) + "\n")
        else:
            raise ValueError(f"unknown dataset format {fmt!r}")


# ---------------------------------------------------------------------------
# standardization


@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray


class Standardizer(TransformerMixin, BaseEstimator):
    """Per-feature z-scoring with population standard deviation.

    Constant columns get a recorded deviation of 1, so they map to 0 and the
    transform stays invertible.
    """

    def fit(self, X, y=None):
        X = check_features(X)
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        X = check_features(X, n_features=self.n_features_in_)
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, "scale_")
        X = check_features(X, n_features=self.n_features_in_)
        return X * self.scale_ + self.mean_

    @property
    def stats_(self) -> StandardizationStats:
        check_is_fitted(self, "scale_")
        return StandardizationStats(self.mean_.copy(), self.scale_.copy())

    @classmethod
    def from_stats(cls, stats: StandardizationStats) -> "Standardizer":
        obj = cls()
        obj.mean_ = np.asarray(stats.mean, dtype=float)
        obj.scale_ = np.asarray(stats.std, dtype=float)
        obj.n_features_in_ = len(obj.mean_)
        return obj


def standardize(dataset: Dataset) -> tuple[Dataset, StandardizationStats]:
    """Standardize every feature over all items of all queries."""
    scaler = Standardizer().fit(dataset.arrays().X)
    return apply_standardization(dataset, scaler.stats_), scaler.stats_


def apply_standardization(dataset: Dataset, stats: StandardizationStats) -> Dataset:
    scaler = Standardizer.from_stats(stats)
    return dataset.with_features(scaler.transform(dataset.arrays().X))


def invert_standardization(dataset: Dataset, stats: StandardizationStats) -> Dataset:
    scaler = Standardizer.from_stats(stats)
    return dataset.with_features(scaler.inverse_transform(dataset.arrays().X))


# ---------------------------------------------------------------------------
# splitting


def split_folds(dataset: Dataset, k_folds: int, seed: int) -> list[tuple[Dataset, Dataset]]:
    """Partition queries (never items) into ``k_folds`` near-equal test blocks.

    Block sizes differ by at most one. Query order inside each split follows
    the original dataset order.
    """
    if k_folds < 2:
        raise ValueError("k_folds must be >= 2")
    n = dataset.n_queries
    if n < k_folds:
        raise ValueError(f"cannot split {n} queries into {k_folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    blocks = np.array_split(perm, k_folds)
    splits = []
    for block in blocks:
        test = np.zeros(n, dtype=bool)
        test[block] = True
        splits.append((dataset.subset(np.flatnonzero(~test)), dataset.subset(np.flatnonzero(test))))
    return splits


def split_holdout(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Random query-level train/test split used by multi-seed evaluation."""
    n = dataset.n_queries
    n_test = int(round(test_fraction * n))
    if not 0 < n_test < n:
        raise ValueError(f"test_fraction={test_fraction} leaves an empty split for {n} queries")
    perm = np.random.default_rng(seed).permutation(n)
    test = np.zeros(n, dtype=bool)
    test[perm[:n_test]] = True
    return dataset.subset(np.flatnonzero(~test)), dataset.subset(np.flatnonzero(test))


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticConfig:
    n_queries: int = 100
    items_per_query: int = 10
    latent_dim: int = 4
    duplicate_prob: float = 0.0
    protected_rate: float = 0.3
    group_bias: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_queries < 1 or self.items_per_query < 1 or self.latent_dim < 1:
            raise ValueError("n_queries, items_per_query and latent_dim must be >= 1")
        if not 0.0 <= self.duplicate_prob < 1.0:
            raise ValueError("duplicate_prob must lie in [0, 1)")
        if not 0.0 < self.protected_rate < 1.0:
            raise ValueError("protected_rate must lie in (0, 1)")
        if not math.isfinite(self.group_bias):
            raise ValueError("group_bias must be finite")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def feature_dim(self) -> int:
        return 3 * self.latent_dim


def true_weights(config: SyntheticConfig) -> np.ndarray:
    """Unit-norm relevance direction, fixed by ``config.seed`` alone."""
    rng = np.random.default_rng([config.seed, 0])
    w = rng.standard_normal(config.feature_dim)
    return w / np.linalg.norm(w)


def sample_arrays(config: SyntheticConfig, rng: np.random.Generator,
                  n_queries: int | None = None):
    """Vectorized draw of ``n_queries`` queries from the generating process.

    Returns ``(X, y, protected, qid, source)`` where ``source[j]`` is the
    within-query slot index whose latent vector item ``j`` copies (its own
    slot for fresh items).
    """
    N = config.n_queries if n_queries is None else n_queries
    m, L = config.items_per_query, config.latent_dim
    w = true_weights(config)

    query_latent = rng.standard_normal((N, L))
    fresh_latent = rng.standard_normal((N, m, L))
    fresh_protected = (rng.random((N, m)) < config.protected_rate).astype(int)
    dup_draw = rng.random((N, m))
    pick_draw = rng.random((N, m))

    # slot 0 is always fresh; later slots copy a uniformly chosen earlier slot
    source = np.empty((N, m), dtype=int)
    for j in range(m):
        dup = dup_draw[:, j] < config.duplicate_prob if j > 0 else np.zeros(N, dtype=bool)
        chosen = np.minimum((pick_draw[:, j] * j).astype(int), max(j - 1, 0))
        prev = source[np.arange(N), chosen] if j > 0 else np.zeros(N, dtype=int)
        source[:, j] = np.where(dup, prev, j)

    rows = np.arange(N)[:, None]
    item_latent = fresh_latent[rows, source]
    protected = fresh_protected[rows, source]
    q = np.broadcast_to(query_latent[:, None, :], (N, m, L))
    X = np.concatenate([q, item_latent, q * item_latent], axis=2).reshape(N * m, 3 * L)
    protected = protected.reshape(-1)
    logits = X @ w + config.group_bias * protected
    y = (rng.random(N * m) < 1.0 / (1.0 + np.exp(-logits))).astype(int)
    qid = np.repeat(np.arange(N), m)
    return X, y, protected, qid, source.reshape(-1)


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Draw a dataset whose items within a query may be exact duplicates.

    Duplicated items reuse the latent vector and protected flag of an earlier
    slot and carry a ``#k`` doc_id suffix; relevance is redrawn per pair.
    """
    rng = np.random.default_rng([config.seed, 1])
    X, y, protected, qid, source = sample_arrays(config, rng)
    m = config.items_per_query
    dup_count: dict[tuple[int, int], int] = {}
    doc_ids = []
    for j in range(len(qid)):
        slot = j % m
        src = source[j]
        if src == slot:
            doc_ids.append(f"d{slot}")
        else:
            key = (qid[j], src)
            dup_count[key] = dup_count.get(key, 0) + 1
            doc_ids.append(f"d{src}#{dup_count[key]}")
    width = len(str(config.n_queries - 1))
    query_ids = [f"q{i:0{width}d}" for i in range(config.n_queries)]
    return from_arrays(X, y, protected, qid, doc_ids=doc_ids, query_ids=query_ids)


def concat_datasets(parts: Sequence[Dataset]) -> Dataset:
    return Dataset(tuple(g for d in parts for g in d.queries), parts[0].feature_dim)
