"""Fairness-regularized learning to rank with linear scorers."""

from .data import (Dataset, ItemRecord, QueryGroup, StandardizationStats, Standardizer,
                   SyntheticConfig, generate_synthetic, load_dataset, save_dataset,
                   split_folds, standardize)
from .estimator import FairLinearRanker
from .metrics import (FairnessKind, ItemValueTable, RankedQuery, empirical_fairness,
                      mean_metric, ndcg_at_k, precision_at_k, rank_by_score, topk_indicator)
from .rerank import binomial_cdf, fair_rerank, min_protected_table, rerank_pipeline
from .training import LinearModel, TrainConfig, TrainTrace, train, train_gd, train_sgd

__version__ = "0.1.0"

__all__ = [
    "Dataset", "ItemRecord", "QueryGroup", "StandardizationStats", "Standardizer",
    "SyntheticConfig", "generate_synthetic", "load_dataset", "save_dataset", "split_folds",
    "standardize", "FairLinearRanker", "FairnessKind", "ItemValueTable", "RankedQuery",
    "empirical_fairness", "mean_metric", "ndcg_at_k", "precision_at_k", "rank_by_score",
    "topk_indicator", "binomial_cdf", "fair_rerank", "min_protected_table", "rerank_pipeline",
    "LinearModel", "TrainConfig", "TrainTrace", "train", "train_gd", "train_sgd",
]
