"""Regularization-strength sweeps, significance filtering and summaries."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import (Dataset, apply_standardization, split_folds, split_holdout,
                   standardize)
from .metrics import FairnessKind, evaluate_rankings, rank_by_score
from .training import TrainConfig, train

EVAL_MODES = ("folds", "seeds")
SUMMARY_MODES = ("per_k", "pooled")


class ConfigError(ValueError):
    pass


class SweepError(RuntimeError):
    pass


@dataclass(frozen=True)
class SweepConfig:
    alpha_grid: tuple = (0.0,)
    kind: FairnessKind = FairnessKind.EOP
    eval_mode: str = "folds"
    k_folds: int = 5
    n_seeds: int = 10
    test_fraction: float = 0.2
    k_list: tuple = (1, 2, 3, 4, 5)
    train: TrainConfig = field(default_factory=TrainConfig)
    standardize: str = "train"
    seed: int = 0
    summary_mode: str = "per_k"
    out_dir: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "alpha_grid", tuple(float(a) for a in self.alpha_grid))
        object.__setattr__(self, "k_list", tuple(int(k) for k in self.k_list))
        object.__setattr__(self, "kind", FairnessKind.parse(self.kind))
        if not self.alpha_grid:
            raise ConfigError("alpha grid is empty")
        if len(set(self.alpha_grid)) != len(self.alpha_grid):
            raise ConfigError(f"duplicate values in alpha grid {list(self.alpha_grid)}")
        if 0.0 not in self.alpha_grid:
            raise ConfigError("alpha grid must contain 0 (the unregularized reference)")
        if any(a < 0 or not math.isfinite(a) for a in self.alpha_grid):
            raise ConfigError("alphas must be finite and >= 0")
        if not self.k_list or any(k < 1 for k in self.k_list):
            raise ConfigError("k_list must be a non-empty list of positive integers")
        if self.eval_mode not in EVAL_MODES:
            raise ConfigError(f"eval_mode must be one of {EVAL_MODES}")
        if self.eval_mode == "folds" and self.k_folds < 2:
            raise ConfigError("k_folds must be >= 2")
        if self.eval_mode == "seeds" and self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if self.standardize not in ("train", "global", "none"):
            raise ConfigError("standardize must be train, global or none")
        if self.summary_mode not in SUMMARY_MODES:
            raise ConfigError(f"summary_mode must be one of {SUMMARY_MODES}")


@dataclass(frozen=True)
class RunRecord:
    alpha: float
    split: int
    k: int
    ndcg: float
    precision: float
    gamma_eop: float
    gamma_dp: float
    gamma_eod: float


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    k: int
    quality_mean: float
    quality_disp: float
    gamma_mean: float
    gamma_disp: float
    n_runs: int


@dataclass(frozen=True)
class SweepTable:
    rows: tuple
    kind: FairnessKind
    eval_mode: str

    def row(self, alpha: float, k: int) -> SweepRow:
        for r in self.rows:
            if r.alpha == alpha and r.k == k:
                return r
        raise KeyError((alpha, k))

    def at_k(self, k: int) -> list[SweepRow]:
        return [r for r in self.rows if r.k == k]

    @property
    def alphas(self) -> list[float]:
        return sorted({r.alpha for r in self.rows})

    @property
    def k_values(self) -> list[int]:
        return sorted({r.k for r in self.rows})


@dataclass(frozen=True)
class SweepResult:
    table: SweepTable
    runs: tuple


def _splits(dataset: Dataset, config: SweepConfig):
    if config.eval_mode == "folds":
        return split_folds(dataset, config.k_folds, config.seed)
    return [split_holdout(dataset, config.test_fraction, config.seed + 1000 * (s + 1))
            for s in range(config.n_seeds)]


def evaluate_model(model, test: Dataset, k: int, strict=None) -> dict:
    arr = test.arrays()
    scores = model.predict(arr.X)
    rankings = [rank_by_score(g, scores[arr.qid == i]) for i, g in enumerate(test.queries)]
    return evaluate_rankings(rankings, k, strict=strict)


def dispersion(values: Sequence[float], eval_mode: str) -> float:
    """Standard error over folds, standard deviation over seeds (ddof=1)."""
    if len(values) < 2:
        return 0.0
    sd = statistics.stdev(values)
    return sd / math.sqrt(len(values)) if eval_mode == "folds" else sd


def aggregate(runs: Sequence[RunRecord], kind, eval_mode: str) -> SweepTable:
    kind = FairnessKind.parse(kind)
    keys = sorted({(r.alpha, r.k) for r in runs})
    rows = []
    for alpha, k in keys:
        sel = sorted((r for r in runs if r.alpha == alpha and r.k == k), key=lambda r: r.split)
        quality = [r.ndcg for r in sel]
        gamma = [getattr(r, f"gamma_{kind.value}") for r in sel]
        rows.append(SweepRow(alpha, k, math.fsum(quality) / len(sel), dispersion(quality, eval_mode),
                             math.fsum(gamma) / len(sel), dispersion(gamma, eval_mode), len(sel)))
    return SweepTable(tuple(rows), kind, eval_mode)


def run_sweep(dataset: Dataset, config: SweepConfig) -> SweepResult:
    """Train one model per (alpha, split) and evaluate it at every k.

    All alphas share the same splits. The test-time fairness of the swept
    kind is computed on pooled top-k selections of the test queries.
    """
    if config.standardize == "global":
        dataset, _ = standardize(dataset)
    splits = _splits(dataset, config)
    runs = []
    for split_idx, (train_set, test_set) in enumerate(splits):
        if config.standardize == "train":
            train_set, stats = standardize(train_set)
            test_set = apply_standardization(test_set, stats)
        for alpha in config.alpha_grid:
            tc = replace(config.train, alpha=alpha, kind=config.kind,
                         seed=config.train.seed + split_idx)
            try:
                model, _ = train(train_set, tc)
                for k in config.k_list:
                    rec = evaluate_model(model, test_set, k, strict=config.kind)
                    runs.append(RunRecord(alpha, split_idx, k, rec["ndcg"], rec["precision"],
                                          rec["gamma_eop"], rec["gamma_dp"], rec["gamma_eod"]))
            except Exception as exc:
                raise SweepError(f"run failed at alpha={alpha}, split={split_idx}: {exc}") from exc
    return SweepResult(aggregate(runs, config.kind, config.eval_mode), tuple(runs))


# ---------------------------------------------------------------------------
# summaries


def significance_filter(table: SweepTable, k: int) -> set[float]:
    """Alphas whose quality error bar still overlaps the alpha=0 error bar."""
    try:
        ref = table.row(0.0, k)
    except KeyError:
        raise ValueError(f"table has no alpha=0 reference at k={k}") from None
    return {
        r.alpha for r in table.at_k(k)
        if r.quality_mean >= ref.quality_mean - (r.quality_disp + ref.quality_disp)
    }


@dataclass(frozen=True)
class SummaryRecord:
    kind: FairnessKind
    k: int
    max_rel_reduction: Optional[float]
    mean_rel_reduction: Optional[float]
    admissible: tuple
    undefined: int = 0


def relative_reduction(gamma_ref: float, gamma: float) -> Optional[float]:
    """``(ref - gamma) / ref``; 0 when both vanish, None if only the reference does."""
    if gamma_ref == 0:
        return 0.0 if gamma == 0 else None
    return (gamma_ref - gamma) / gamma_ref


def _summarize_rows(rows: dict, kind, k) -> SummaryRecord:
    admissible = sorted(rows)
    ref = rows[0.0]
    red = [relative_reduction(ref, rows[a]) for a in admissible]
    defined = [r for r in red if r is not None]
    return SummaryRecord(
        FairnessKind.parse(kind), k,
        max(defined) if defined else None,
        math.fsum(defined) / len(defined) if defined else None,
        tuple(admissible), len(red) - len(defined),
    )


def summarize(table: SweepTable, k: int) -> SummaryRecord:
    """Max and mean relative fairness reduction over the admissible alphas."""
    admissible = significance_filter(table, k)
    rows = {a: table.row(a, k).gamma_mean for a in admissible}
    return _summarize_rows(rows, table.kind, k)


def summarize_over_k(table: SweepTable, k_list: Sequence[int], mode: str = "per_k") -> SummaryRecord:
    """Average summary over several cutoffs.

    ``per_k`` filters and summarizes each k and averages the results;
    ``pooled`` first averages quality and fairness over k, then filters once.
    """
    if mode == "per_k":
        recs = [summarize(table, k) for k in k_list]
        mx = [r.max_rel_reduction for r in recs if r.max_rel_reduction is not None]
        mn = [r.mean_rel_reduction for r in recs if r.mean_rel_reduction is not None]
        common = set.intersection(*(set(r.admissible) for r in recs))
        return SummaryRecord(table.kind, 0, math.fsum(mx) / len(mx) if mx else None,
                             math.fsum(mn) / len(mn) if mn else None, tuple(sorted(common)),
                             sum(r.undefined for r in recs))
    if mode != "pooled":
        raise ValueError(f"unknown summary mode {mode!r}")
    pooled = []
    for alpha in table.alphas:
        rs = [table.row(alpha, k) for k in k_list]
        n = len(rs)
        pooled.append(SweepRow(alpha, 0, sum(r.quality_mean for r in rs) / n,
                               sum(r.quality_disp for r in rs) / n,
                               sum(r.gamma_mean for r in rs) / n,
                               sum(r.gamma_disp for r in rs) / n, rs[0].n_runs))
    return summarize(SweepTable(tuple(pooled), table.kind, table.eval_mode), 0)


# ---------------------------------------------------------------------------
# output files


def _fmt(x) -> str:
    if x is None:
        return "n/a"
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.9g}"


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) if not isinstance(v, str) else v for v in row) for row in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def emit_outputs(table: SweepTable, summaries: Sequence[SummaryRecord], out_dir,
                 runs: Sequence[RunRecord] = ()) -> list[Path]:
    """Write sweep.csv, summary.csv, runs.csv and one plotdata_k{K}.csv per k."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "sweep.csv"
    _write_csv(path, ["alpha", "k", "quality_mean", "quality_disp", "gamma_mean", "gamma_disp", "n_runs"],
               [(r.alpha, r.k, r.quality_mean, r.quality_disp, r.gamma_mean, r.gamma_disp, r.n_runs)
                for r in table.rows])
    written.append(path)

    path = out / "summary.csv"
    _write_csv(path, ["kind", "k", "max_rel_reduction", "mean_rel_reduction", "admissible_alphas"],
               [(s.kind.value, s.k if s.k else "all", s.max_rel_reduction, s.mean_rel_reduction,
                 " ".join(_fmt(a) for a in s.admissible)) for s in summaries])
    written.append(path)

    path = out / "runs.csv"
    _write_csv(path, ["alpha", "split", "k", "ndcg", "precision", "gamma_eop", "gamma_dp", "gamma_eod"],
               [(r.alpha, r.split, r.k, r.ndcg, r.precision, r.gamma_eop, r.gamma_dp, r.gamma_eod)
                for r in runs])
    written.append(path)

    for k in table.k_values:
        path = out / f"plotdata_k{k}.csv"
        _write_csv(path, ["alpha", "gamma_mean", "gamma_disp", "quality_mean", "quality_disp"],
                   [(r.alpha, r.gamma_mean, r.gamma_disp, r.quality_mean, r.quality_disp)
                    for r in sorted(table.at_k(k), key=lambda r: r.alpha)])
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# config files

_INT_KEYS = {"k_folds", "n_seeds", "steps", "epochs", "batch_queries", "batch_docs", "seed"}
_KNOWN_KEYS = _INT_KEYS | {
    "data", "alphas", "fairness", "scope", "eval_mode", "k_list", "optimizer", "lr",
    "out_dir", "standardize", "intercept", "summary_mode", "test_fraction",
}


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def load_sweep_config(path) -> tuple[str, SweepConfig]:
    """Read a sweep config file; returns the data path and the config."""
    path = Path(path)
    try:
        values = parse_config_text(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    unknown = sorted(set(values) - _KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for key in ("data", "alphas", "fairness"):
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
    try:
        ints = {k: int(values[k]) for k in _INT_KEYS if k in values}
        data = values["data"]
        if not Path(data).is_absolute():
            data = str(path.parent / data)
        train_kw = dict(
            scope=values.get("scope", "amortized"),
            optimizer=values.get("optimizer", "gd"),
            intercept=values.get("intercept", "false").lower() in ("1", "true", "yes"),
            seed=ints.get("seed", 0),
        )
        if "lr" in values:
            train_kw["learning_rate"] = float(values["lr"])
        elif train_kw["optimizer"] == "sgd":
            train_kw["learning_rate"] = 1e-4
        for src, dst in (("steps", "steps"), ("epochs", "epochs"),
                         ("batch_queries", "queries_per_batch"), ("batch_docs", "docs_per_query_cap")):
            if src in ints:
                train_kw[dst] = ints[src]
        kw = dict(
            alpha_grid=[float(a) for a in values["alphas"].split(",") if a.strip()],
            kind=values["fairness"],
            eval_mode=values.get("eval_mode", "folds"),
            k_list=[int(k) for k in values.get("k_list", "1,2,3,4,5").split(",") if k.strip()],
            train=TrainConfig(**train_kw),
            standardize=values.get("standardize", "train"),
            seed=ints.get("seed", 0),
            summary_mode=values.get("summary_mode", "per_k"),
            out_dir=values.get("out_dir"),
        )
        for key in ("k_folds", "n_seeds"):
            if key in ints:
                kw[key] = ints[key]
        if "test_fraction" in values:
            kw["test_fraction"] = float(values["test_fraction"])
        return data, SweepConfig(**kw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def sweep_summaries(table: SweepTable, config: SweepConfig) -> list[SummaryRecord]:
    """One record per k, then the over-k average (written with k="all")."""
    per_k = [summarize(table, k) for k in config.k_list]
    return per_k + [summarize_over_k(table, config.k_list, config.summary_mode)]
