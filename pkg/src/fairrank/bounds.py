"""Generalization-bound complexity terms, chromatic Hoeffding inequalities,
and Monte-Carlo checks of the fairness generalization gap.

All logarithms are natural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .data import SyntheticConfig, sample_arrays
from .metrics import FairnessKind, group_fairness

# log(c / delta) constants per kind for the uniform bound; EOp and DP use 24,
# EOd 48 (the union bound runs over both relevance classes).
DEFAULT_LOG_CONSTANTS = {FairnessKind.EOP: 24.0, FairnessKind.DP: 24.0, FairnessKind.EOD: 48.0}


@dataclass(frozen=True)
class BoundInputs:
    n_queries: int
    items_per_query: int
    vc_dim: int
    p_min: float
    q_min: float
    delta: float

    def __post_init__(self):
        if self.n_queries < 1 or self.items_per_query < 1 or self.vc_dim < 1:
            raise ValueError("n_queries, items_per_query and vc_dim must be positive")
        if not 0.0 < self.p_min <= 1.0 or not 0.0 < self.q_min <= 1.0:
            raise ValueError("p_min and q_min must lie in (0, 1]")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if not 2 * self.n_queries * self.items_per_query > self.vc_dim:
            raise ValueError("bound requires 2 * n_queries * items_per_query > vc_dim")


def _vc_term(inputs: BoundInputs, log_constant: float, mass: float) -> float:
    N, m, v = inputs.n_queries, inputs.items_per_query, inputs.vc_dim
    capacity = v * math.log(2.0 * math.e * N * m / v) + math.log(log_constant / inputs.delta)
    return 8.0 * math.sqrt(2.0 * capacity / (N * mass ** 2))


def complexity_eop_eod(inputs: BoundInputs, log_constant: float = 48.0) -> float:
    """Complexity term for equality of opportunity / equalized odds.

    ``log_constant=48`` gives the shared constant for both kinds; pass 24 for
    the sharper equality-of-opportunity variant.
    """
    return _vc_term(inputs, log_constant, inputs.p_min)


def complexity_dp(inputs: BoundInputs, log_constant: float = 24.0) -> float:
    return _vc_term(inputs, log_constant, inputs.q_min)


def complexity_term(inputs: BoundInputs, kind, log_constant: Optional[float] = None) -> float:
    kind = FairnessKind.parse(kind)
    c = DEFAULT_LOG_CONSTANTS[kind] if log_constant is None else log_constant
    if kind is FairnessKind.DP:
        return complexity_dp(inputs, c)
    return complexity_eop_eod(inputs, c)


def chromatic_sum_bound(t: float, widths, chi: int) -> float:
    """Tail bound for a sum of dependent bounded variables.

    ``widths`` are the ranges ``b - a`` of the summands and ``chi`` the size
    of the smallest cover of the index set by independent subsets.
    """
    if t <= 0:
        raise ValueError("t must be > 0")
    widths = np.asarray(widths, dtype=float)
    return math.exp(-2.0 * t * t / (chi * float(np.sum(widths ** 2))))


def chromatic_mean_bound(t: float, widths, chi: int) -> float:
    if t <= 0:
        raise ValueError("t must be > 0")
    widths = np.asarray(widths, dtype=float)
    n = len(widths)
    return math.exp(-2.0 * t * t * n * n / (chi * float(np.sum(widths ** 2))))


def janson_mean_bound(t: float, n_vars: int, chi: int) -> float:
    """Tail bound for the mean of ``n_vars`` dependent Bernoulli variables."""
    if t <= 0:
        raise ValueError("t must be > 0")
    if n_vars < 1 or chi < 1:
        raise ValueError("n_vars and chi must be positive")
    return math.exp(-2.0 * t * t * n_vars / chi)


# ---------------------------------------------------------------------------
# Monte-Carlo gap experiment


@dataclass(frozen=True)
class ThresholdSelector:
    """Selects items whose feature ``feature`` exceeds ``threshold``."""

    feature: int = 0
    threshold: float = 0.0

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return (X[:, self.feature] > self.threshold).astype(float)


@dataclass(frozen=True)
class ConstantSelector:
    value: int = 1

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return np.full(X.shape[0], float(self.value))


@dataclass(frozen=True)
class PopulationEstimate:
    gamma: dict
    p_min: float
    q_min: float
    n_items: int


def estimate_population(config: SyntheticConfig, selector: Callable, n_items: int = 10 ** 6,
                        chunk_queries: int = 50_000) -> PopulationEstimate:
    """Population fairness of a fixed selector from one large reference draw."""
    rng = np.random.default_rng([config.seed, 3])
    n_queries = -(-n_items // config.items_per_query)
    counts = np.zeros(4)
    sums = np.zeros(4)
    done = 0
    while done < n_queries:
        size = min(chunk_queries, n_queries - done)
        X, y, a, _, _ = sample_arrays(config, rng, n_queries=size)
        cell = 2 * a + y
        counts += np.bincount(cell, minlength=4)
        sums += np.bincount(cell, weights=selector(X), minlength=4)
        done += size
    total = counts.sum()
    if (counts == 0).any():
        raise ValueError("reference sample has an empty (group, relevance) cell")
    rate = sums / counts
    group_rate = [(sums[0] + sums[1]) / (counts[0] + counts[1]),
                  (sums[2] + sums[3]) / (counts[2] + counts[3])]
    gamma = {
        FairnessKind.EOP: abs(rate[1] - rate[3]),
        FairnessKind.DP: abs(group_rate[0] - group_rate[1]),
        FairnessKind.EOD: 0.5 * (abs(rate[0] - rate[2]) + abs(rate[1] - rate[3])),
    }
    p_min = float(counts.min() / total)
    q_min = float(min(counts[0] + counts[1], counts[2] + counts[3]) / total)
    return PopulationEstimate(gamma, p_min, q_min, int(total))


@dataclass
class GapReport:
    kind: FairnessKind
    delta: float
    population_gamma: float
    gaps: np.ndarray
    n_degenerate: int
    gap_quantile: float
    bound: float
    p_min: float
    q_min: float
    vc_dim: int

    @property
    def n_trials(self) -> int:
        return len(self.gaps) + self.n_degenerate


def gap_experiment(gen_config: SyntheticConfig, selector: Callable, kind, trials: int,
                   delta: float, vc_dim: Optional[int] = None, reference_items: int = 10 ** 6,
                   population: Optional[PopulationEstimate] = None) -> GapReport:
    """Distribution of ``Gamma(f) - Gamma(f, S)`` over independent datasets ``S``.

    Each trial seeds its own generator from ``(gen_config.seed, trial)`` so
    results do not depend on execution order. Trials with an empty subgroup
    are dropped and counted.
    """
    kind = FairnessKind.parse(kind)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if population is None:
        population = estimate_population(gen_config, selector, reference_items)
    v = gen_config.feature_dim + 1 if vc_dim is None else vc_dim
    pop = population.gamma[kind]

    gaps = []
    degenerate = 0
    for trial in range(trials):
        rng = np.random.default_rng([gen_config.seed, 2, trial])
        X, y, a, _, _ = sample_arrays(gen_config, rng)
        fair = group_fairness(selector(X), y, a, kind)
        if not fair.complete[0]:
            degenerate += 1
            continue
        gaps.append(pop - float(fair.gamma[0]))
    gaps = np.asarray(gaps)
    quantile = float(np.quantile(gaps, 1.0 - delta)) if len(gaps) else float("nan")
    inputs = BoundInputs(gen_config.n_queries, gen_config.items_per_query, v,
                         population.p_min, population.q_min, delta)
    return GapReport(kind, delta, pop, gaps, degenerate, quantile,
                     complexity_term(inputs, kind), population.p_min, population.q_min, v)


def write_gap_csv(report: GapReport, path) -> None:
    """Per-trial gaps followed by one ``summary`` row."""
    header = "row,kind,gap,gap_quantile,bound,population_gamma,p_min,q_min,vc_dim,trials,degenerate"
    lines = [header]
    kind = report.kind.value
    lines += [f"{i},{kind},{g!r},,,,,,,," for i, g in enumerate(report.gaps)]
    lines.append(
        f"summary,{kind},,{report.gap_quantile!r},{report.bound!r},{report.population_gamma!r},"
        f"{report.p_min!r},{report.q_min!r},{report.vc_dim},{report.n_trials},{report.n_degenerate}"
    )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
