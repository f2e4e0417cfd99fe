"""Ranking quality (P@k, NDCG@k) and group-fairness violation measures."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import QueryGroup


class FairnessKind(str, enum.Enum):
    EOP = "eop"
    DP = "dp"
    EOD = "eod"

    @classmethod
    def parse(cls, value) -> "FairnessKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("-", ""))
        except ValueError:
            raise ValueError(f"unknown fairness kind {value!r}; use eop, dp or eod") from None


# (cell of group 0, cell of group 1, weight) per absolute-value term.
# Cells index (protected, relevance) as 2*a + r, or just a for DP.
_COMPARISONS = {
    FairnessKind.EOP: ((1, 3, 1.0),),
    FairnessKind.DP: ((0, 1, 1.0),),
    FairnessKind.EOD: ((0, 2, 0.5), (1, 3, 0.5)),
}


def _cell_labels(kind: FairnessKind) -> dict[int, tuple[int, Optional[int]]]:
    if kind is FairnessKind.DP:
        return {0: (0, None), 1: (1, None)}
    return {2 * a + r: (a, r) for a in (0, 1) for r in (0, 1)}


class EmptySubgroupError(ValueError):
    def __init__(self, kind: FairnessKind, protected: int, relevance: Optional[int]):
        cell = f"(a={protected})" if relevance is None else f"(a={protected}, r={relevance})"
        super().__init__(f"{kind.value}: subgroup {cell} is empty")
        self.cell = (protected, relevance)


@dataclass(frozen=True)
class GroupFairness:
    """Fairness violation of several independent item groups at once.

    ``gamma[g]`` sums only the terms whose two subgroups are non-empty in
    group ``g``; ``complete[g]`` says whether all of them were. ``item_grad``
    is the derivative of each item's own group gamma w.r.t. its value, using
    sign(0) = 0 at the kink.
    """

    gamma: np.ndarray
    complete: np.ndarray
    delta: np.ndarray
    valid: np.ndarray
    item_grad: np.ndarray


def group_fairness(values, relevance, protected, kind, group=None, n_groups: int = 1) -> GroupFairness:
    kind = FairnessKind.parse(kind)
    values = np.asarray(values, dtype=float)
    relevance = np.asarray(relevance).astype(int)
    protected = np.asarray(protected).astype(int)
    group = np.zeros(len(values), dtype=int) if group is None else np.asarray(group)

    n_cells = 2 if kind is FairnessKind.DP else 4
    cell = protected if kind is FairnessKind.DP else 2 * protected + relevance
    key = group * n_cells + cell
    size = n_groups * n_cells
    counts = np.bincount(key, minlength=size).reshape(n_groups, n_cells)
    # center on a shared value: the offset cancels in every difference, and
    # cells holding the same constant get exactly equal means
    ref = values[0] if len(values) else 0.0
    sums = np.bincount(key, weights=values - ref, minlength=size).reshape(n_groups, n_cells)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
        inv_counts = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0)

    comps = _COMPARISONS[kind]
    gamma = np.zeros(n_groups)
    delta = np.zeros((n_groups, len(comps)))
    valid = np.zeros((n_groups, len(comps)), dtype=bool)
    cell_coef = np.zeros((n_groups, n_cells))
    for t, (c0, c1, w) in enumerate(comps):
        ok = (counts[:, c0] > 0) & (counts[:, c1] > 0)
        d = np.where(ok, means[:, c0] - means[:, c1], 0.0)
        gamma += w * np.abs(d)
        delta[:, t] = d
        valid[:, t] = ok
        s = w * np.sign(d)
        cell_coef[:, c0] += s * inv_counts[:, c0]
        cell_coef[:, c1] -= s * inv_counts[:, c1]
    item_grad = cell_coef.reshape(-1)[key]
    return GroupFairness(gamma, valid.all(axis=1), delta, valid, item_grad)


@dataclass(frozen=True)
class ItemValueTable:
    protected: np.ndarray
    relevance: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        for name in ("protected", "relevance", "values"):
            object.__setattr__(self, name, np.asarray(getattr(self, name)))
        n = len(self.values)
        if len(self.protected) != n or len(self.relevance) != n:
            raise ValueError("protected, relevance and values must be aligned")
        if not np.isfinite(self.values.astype(float)).all():
            raise ValueError("values must be finite")


def empirical_fairness(table: ItemValueTable, kind) -> float:
    """Absolute difference of group-conditional mean values.

    EOp compares relevant items of the two groups, DP all items of the two
    groups, and EOd averages the relevant and irrelevant comparisons.
    Raises :class:`EmptySubgroupError` if a needed subgroup has no rows.
    """
    kind = FairnessKind.parse(kind)
    res = group_fairness(table.values, table.relevance, table.protected, kind)
    if not res.complete[0]:
        labels = _cell_labels(kind)
        present = set(int(c) for c in np.unique(
            table.protected if kind is FairnessKind.DP
            else 2 * table.protected.astype(int) + table.relevance.astype(int)))
        for c0, c1, _ in _COMPARISONS[kind]:
            for c in (c0, c1):
                if c not in present:
                    raise EmptySubgroupError(kind, *labels[c])
    return float(res.gamma[0])


# ---------------------------------------------------------------------------
# rankings and quality


@dataclass(frozen=True)
class RankedQuery:
    query_id: str
    doc_ids: tuple
    relevances: np.ndarray
    protected: np.ndarray
    scores: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "doc_ids", tuple(self.doc_ids))
        object.__setattr__(self, "relevances", np.asarray(self.relevances, dtype=int))
        object.__setattr__(self, "protected", np.asarray(self.protected, dtype=int))
        if self.scores is not None:
            object.__setattr__(self, "scores", np.asarray(self.scores, dtype=float))
        lengths = {len(self.doc_ids), len(self.relevances), len(self.protected)}
        if self.scores is not None:
            lengths.add(len(self.scores))
        if len(lengths) != 1:
            raise ValueError("RankedQuery lists must have equal length")

    def __len__(self):
        return len(self.doc_ids)

    def take(self, order) -> "RankedQuery":
        order = list(order)
        return RankedQuery(
            self.query_id,
            tuple(self.doc_ids[i] for i in order),
            self.relevances[order],
            self.protected[order],
            None if self.scores is None else self.scores[order],
        )


def rank_by_score(group: QueryGroup, scores) -> RankedQuery:
    """Sort a query's items by descending score, ties by ascending doc_id."""
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (len(group),):
        raise ValueError(f"expected {len(group)} scores, got shape {scores.shape}")
    if not np.isfinite(scores).all():
        raise ValueError(f"non-finite score in query {group.query_id!r}")
    doc_ids = group.doc_ids
    order = sorted(range(len(doc_ids)), key=lambda i: (-scores[i], doc_ids[i]))
    return RankedQuery(
        group.query_id,
        tuple(doc_ids[i] for i in order),
        group.relevance[order],
        group.protected[order],
        scores[order],
    )


def _check_k(k: int) -> None:
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")


def precision_at_k(ranked: RankedQuery, k: int) -> float:
    """Fraction of relevant items among the top k; missing positions count as 0."""
    _check_k(k)
    return float(np.sum(ranked.relevances[:k])) / k


def _discounts(n: int) -> np.ndarray:
    return 1.0 / (np.log(np.arange(2, n + 2)) / math.log(2.0))


def ndcg_at_k(ranked: RankedQuery, k: int) -> Optional[float]:
    """Binary-gain NDCG@k, or ``None`` when the query has no relevant item."""
    _check_k(k)
    n_rel = int(np.sum(ranked.relevances))
    if n_rel == 0:
        return None
    top = ranked.relevances[:k].astype(float)
    dcg = float(np.sum(top * _discounts(len(top))))
    ideal = float(np.sum(_discounts(min(k, n_rel))))
    return dcg / ideal


def mean_metric(per_query: Sequence[Optional[float]]) -> float:
    present = [v for v in per_query if v is not None]
    if not present:
        raise ValueError("no query contributed a value to the mean")
    return math.fsum(present) / len(present)


def topk_indicator(ranked: RankedQuery, k: int) -> np.ndarray:
    """1 for the first ``k`` positions of the ranking, else 0."""
    _check_k(k)
    ind = np.zeros(len(ranked), dtype=int)
    ind[:k] = 1
    return ind


def topk_table(rankings: Sequence[RankedQuery], k: int) -> ItemValueTable:
    """Pool top-k selections of several queries into one value table."""
    return ItemValueTable(
        protected=np.concatenate([r.protected for r in rankings]),
        relevance=np.concatenate([r.relevances for r in rankings]),
        values=np.concatenate([topk_indicator(r, k) for r in rankings]).astype(float),
    )


def evaluate_rankings(rankings: Sequence[RankedQuery], k: int, strict=None) -> dict:
    """Mean NDCG@k and P@k plus amortized top-k fairness of all three kinds.

    A fairness kind whose subgroups are missing yields NaN, unless it is the
    ``strict`` kind, in which case the error propagates.
    """
    strict = None if strict is None else FairnessKind.parse(strict)
    table = topk_table(rankings, k)
    record = {
        "k": k,
        "ndcg": mean_metric([ndcg_at_k(r, k) for r in rankings]),
        "precision": mean_metric([precision_at_k(r, k) for r in rankings]),
    }
    for kind in FairnessKind:
        try:
            record[f"gamma_{kind.value}"] = empirical_fairness(table, kind)
        except EmptySubgroupError:
            if kind is strict:
                raise
            record[f"gamma_{kind.value}"] = float("nan")
    return record
