"""Quantile scoring of continuous exposures."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class QuantizedMatrix:
    scores: np.ndarray
    cutpoints: tuple
    q: int
    column_names: tuple

    def apply(self, X) -> np.ndarray:
        """Score new data with the stored cut points."""
        X = np.asarray(X, dtype=float)
        return np.column_stack([np.searchsorted(c, X[:, j], side="left")
                                for j, c in enumerate(self.cutpoints)])


def _is_score_column(x: np.ndarray, q: int) -> bool:
    return bool(np.all((x == np.round(x)) & (x >= 0) & (x <= q - 1)))


def quantize_column(x, q: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Score ``x`` into ``q`` levels at its empirical k/q quantiles.

    A value's score is the number of cut points strictly below it, so ties at
    a cut point fall to the lower bin. Columns with at most ``q`` distinct
    values are mapped by rank of distinct value instead; columns that already
    hold integer scores in ``0..q-1`` are returned unchanged.

    Returns
    -------
    scores : int array, shape (n,)
    cutpoints : float array, shape (q - 1,)
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("quantize_column expects a 1-d vector")
    if q < 2:
        raise ValueError(f"q must be >= 2, got {q}")
    if x.size < q:
        raise ValueError(f"need at least q={q} observations, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("exposure values must be finite")

    distinct = np.unique(x)
    if distinct.size <= q:
        if _is_score_column(x, q):
            return x.astype(int), np.arange(q - 1, dtype=float)
        pad = np.full(q - distinct.size, distinct[-1])
        cuts = np.concatenate([distinct[:-1], pad])
        return np.searchsorted(distinct, x).astype(int), cuts

    cuts = np.quantile(x, np.arange(1, q) / q, method="linear")
    return np.searchsorted(cuts, x, side="left").astype(int), cuts


def quantize_matrix(X, q: int = 4, column_names: Sequence[str] | None = None) -> QuantizedMatrix:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("quantize_matrix expects a 2-d array")
    names = tuple(column_names) if column_names is not None else tuple(f"X{j + 1}" for j in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise ValueError("column_names length does not match the number of columns")
    scores = np.empty(X.shape, dtype=int)
    cuts = []
    for j in range(X.shape[1]):
        try:
            scores[:, j], c = quantize_column(X[:, j], q)
        except ValueError as exc:
            raise ValueError(f"column {names[j]!r}: {exc}") from exc
        cuts.append(c)
    return QuantizedMatrix(scores, tuple(cuts), q, names)
