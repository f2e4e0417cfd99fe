"""FA*IR-style re-ranking under binomial-quantile prefix constraints."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .data import Dataset
from .metrics import RankedQuery, evaluate_rankings, rank_by_score
from .training import LinearModel

# binomial_cdf is accurate to about 1e-15; a CDF this close to alpha_q is a
# tie in exact arithmetic (e.g. Bin(1, 0.9) at t=0 against alpha_q=0.1)
_TIE_TOL = 1e-12


def binomial_cdf(t: int, n: int, p: float) -> float:
    """P(X <= t) for X ~ Bin(n, p), summed from log-space terms."""
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    if int(t) != t or not 0 <= t <= n:
        raise ValueError(f"t must be an integer in [0, n], got {t!r}")
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p!r}")
    t, n = int(t), int(n)
    if t == n:
        return 1.0
    lp, lq = math.log(p), math.log1p(-p)
    logs = [math.lgamma(n + 1) - math.lgamma(j + 1) - math.lgamma(n - j + 1) + j * lp + (n - j) * lq
            for j in range(t + 1)]
    top = max(logs)
    total = math.exp(top) * math.fsum(math.exp(v - top) for v in logs)
    return min(total, 1.0)


@dataclass(frozen=True)
class QuantileTable:
    """Minimum protected count for every prefix length ``1..k_max``.

    ``min_protected[i - 1]`` belongs to prefix length ``i``.
    """

    k_max: int
    p: float
    alpha_q: float
    min_protected: tuple[int, ...]

    def at(self, i: int) -> int:
        return self.min_protected[i - 1]


def min_protected_table(k_max: int, p: float, alpha_q: float) -> QuantileTable:
    """Lower alpha_q-quantile of Bin(i, p) for each prefix length i."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if not 0.0 < p < 1.0 or not 0.0 < alpha_q < 1.0:
        raise ValueError("p and alpha_q must lie in (0, 1)")
    mins = []
    t = 0
    for i in range(1, k_max + 1):
        # the quantile never decreases with i, so resume the search at t
        while binomial_cdf(t, i, p) < alpha_q - _TIE_TOL:
            t += 1
        mins.append(t)
    return QuantileTable(int(k_max), float(p), float(alpha_q), tuple(mins))


def zero_table(k_max: int) -> QuantileTable:
    return QuantileTable(int(k_max), float("nan"), float("nan"), (0,) * int(k_max))


@dataclass(frozen=True)
class RerankResult:
    ranked: RankedQuery
    infeasible: bool


def fair_rerank(ranked: RankedQuery, table: QuantileTable) -> RerankResult:
    """Greedy merge of the protected and unprotected sublists.

    At each position the next protected item is forced in when the prefix
    would otherwise fall below its minimum; otherwise the better of the two
    sublist heads (earlier in the input ranking) is taken.
    """
    n = len(ranked)
    if table.k_max < n:
        raise ValueError(f"quantile table covers {table.k_max} positions, ranking has {n}")
    prot = [i for i in range(n) if ranked.protected[i] == 1]
    unprot = [i for i in range(n) if ranked.protected[i] == 0]
    pi = ui = 0
    order = []
    infeasible = False
    for pos in range(1, n + 1):
        need = pi < table.at(pos)
        if need and pi < len(prot):
            order.append(prot[pi])
            pi += 1
            continue
        if need:
            infeasible = True
        if pi < len(prot) and (ui >= len(unprot) or prot[pi] < unprot[ui]):
            order.append(prot[pi])
            pi += 1
        else:
            order.append(unprot[ui])
            ui += 1
    return RerankResult(ranked.take(order), infeasible)


@dataclass(frozen=True)
class PipelineResult:
    rankings: list
    metrics: dict
    infeasible_queries: int


def rerank_pipeline(model: LinearModel, data: Dataset, table: QuantileTable, k: int) -> PipelineResult:
    """Rank each query by model score, re-rank it, and evaluate at ``k``.

    The model's ordering stands in for unknown test relevance when applying
    the constraints; quality is measured against the true labels.
    """
    arr = data.arrays()
    scores = model.predict(arr.X)
    out: list[RankedQuery] = []
    infeasible = 0
    for qi, group in enumerate(data.queries):
        ranked = rank_by_score(group, scores[arr.qid == qi])
        res = fair_rerank(ranked, table)
        out.append(res.ranked)
        infeasible += res.infeasible
    metrics = evaluate_rankings(out, k)
    metrics["infeasible_queries"] = infeasible
    return PipelineResult(out, metrics, infeasible)


def max_list_length(data: Dataset) -> int:
    return max(len(g) for g in data.queries)
