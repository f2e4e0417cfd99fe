"""Input checks shared by the estimators and the functional API."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_features(X, n_features: int | None = None) -> np.ndarray:
    """2-d finite float array, optionally with a fixed column count."""
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, expected {n_features}")
    return X


def check_binary(values, name: str, n: int | None = None) -> np.ndarray:
    values = np.asarray(values)
    if values.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional")
    if n is not None and len(values) != n:
        raise ValueError(f"{name} has length {len(values)}, expected {n}")
    if not np.isin(values, (0, 1)).all():
        raise ValueError(f"{name} must be binary (0/1)")
    return values.astype(int)


def check_qid(qid, n: int) -> tuple[np.ndarray, int]:
    """Map query identifiers to contiguous codes ``0..n_queries-1``.

    Codes follow first appearance; items of one query must be contiguous.
    """
    qid = np.asarray(qid)
    if qid.ndim != 1 or len(qid) != n:
        raise ValueError(f"qid must be 1-dimensional with length {n}")
    if n == 0:
        return np.zeros(0, dtype=int), 0
    boundary = np.ones(n, dtype=bool)
    boundary[1:] = qid[1:] != qid[:-1]
    codes = np.cumsum(boundary) - 1
    n_queries = int(codes[-1]) + 1
    if len(np.unique(qid)) != n_queries:
        raise ValueError("items of each query must be contiguous in qid")
    return codes, n_queries


def check_ranking_input(X, y, qid, protected):
    """Validate a flat ranking sample; returns ``(X, y, protected, codes, n_queries)``."""
    X = check_features(X)
    n = X.shape[0]
    y = check_binary(y, "y", n).astype(float)
    protected = check_binary(protected, "protected", n)
    codes, n_queries = check_qid(qid, n)
    return X, y, protected, codes, n_queries
