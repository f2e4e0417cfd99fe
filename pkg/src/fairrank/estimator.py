"""scikit-learn style front end for the fairness-regularized linear ranker."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_qid, check_ranking_input
from .data import from_arrays
from .metrics import FairnessKind, mean_metric, ndcg_at_k, rank_by_score
from .training import LinearModel, TrainConfig, train


class FairLinearRanker(RegressorMixin, BaseEstimator):
    """Linear pointwise ranker trained with a group-fairness penalty.

    Parameters
    ----------
    alpha : float, default=0.0
        Weight of the fairness violation in the training objective.
    fairness : {"eop", "dp", "eod"}, default="eop"
        Fairness violation used as penalty.
    scope : {"amortized", "per_query"}, default="amortized"
        Pool all items of a batch, or average per-query violations.
    optimizer : {"gd", "sgd"}, default="gd"
    learning_rate : float, default=0.003
    steps : int, default=1500
        Full-batch steps (``optimizer="gd"``).
    epochs : int, default=5
        Passes over the queries (``optimizer="sgd"``).
    queries_per_batch : int, default=100
    docs_per_query_cap : int, default=10
    fit_intercept : bool, default=False
        Append a constant feature.
    random_state : int, default=0
        Seed for SGD batch order and document subsampling.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
    intercept_ : float
    model_ : LinearModel
    trace_ : TrainTrace
    """

    def __init__(self, alpha=0.0, fairness="eop", scope="amortized", optimizer="gd",
                 learning_rate=0.003, steps=1500, epochs=5, queries_per_batch=100,
                 docs_per_query_cap=10, fit_intercept=False, random_state=0):
        self.alpha = alpha
        self.fairness = fairness
        self.scope = scope
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.steps = steps
        self.epochs = epochs
        self.queries_per_batch = queries_per_batch
        self.docs_per_query_cap = docs_per_query_cap
        self.fit_intercept = fit_intercept
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            alpha=float(self.alpha), kind=FairnessKind.parse(self.fairness), scope=self.scope,
            optimizer=self.optimizer, learning_rate=self.learning_rate, steps=self.steps,
            epochs=self.epochs, queries_per_batch=self.queries_per_batch,
            docs_per_query_cap=self.docs_per_query_cap, seed=int(self.random_state),
            intercept=bool(self.fit_intercept),
        )

    def fit(self, X, y, *, qid, protected):
        """Fit on items grouped by ``qid`` (contiguous per query)."""
        config = self._config()
        X, y, protected, codes, _ = check_ranking_input(X, y, qid, protected)
        dataset = from_arrays(X, y, protected, codes)
        self.model_, self.trace_ = train(dataset, config)
        theta = self.model_.theta
        self.coef_ = theta[:X.shape[1]].copy()
        self.intercept_ = float(theta[-1]) if self.fit_intercept else 0.0
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        """Ranking scores."""
        check_is_fitted(self, "coef_")
        X = check_features(X, n_features=self.n_features_in_)
        return X @ self.coef_ + self.intercept_

    def score(self, X, y, *, qid, k=3):
        """Mean NDCG@k over queries with at least one relevant item."""
        X = check_features(X, n_features=getattr(self, "n_features_in_", None))
        codes, _ = check_qid(qid, X.shape[0])
        dataset = from_arrays(X, y, np.zeros(len(y), dtype=int), codes)
        scores = self.predict(X)
        offset, values = 0, []
        for group in dataset.queries:
            s = scores[offset:offset + len(group)]
            values.append(ndcg_at_k(rank_by_score(group, s), k))
            offset += len(group)
        return mean_metric(values)
