"""Exact Local Outlier Factor and per-class outlier removal.

Distances are Euclidean. The k-neighbourhood of a point contains every other
point whose distance does not exceed its k-distance, so ties can make it
larger than k. When a point sits in a group of at least k+1 exact
duplicates its local reachability density is infinite; the ratio of two
infinite densities is taken as 1, so duplicates score as inliers. A point
with finite density whose neighbours all have infinite density scores +inf.

Accumulations run sequentially over neighbour index in ascending order, so
results are reproducible bit for bit by a plain loop implementation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import CalibrationConfig, LabeledEmbeddings

__all__ = ["LofResult", "FilterResult", "lof_scores", "filter_classes"]


@dataclass(frozen=True, eq=False)
class LofResult:
    scores: np.ndarray
    neighbors_used: int


@dataclass(frozen=True, eq=False)
class FilterResult:
    """Outcome of :func:`filter_classes`.

    ``preserved[k]`` holds the dataset indices kept for class k. ``skipped``
    lists classes too small to filter (passed through unchanged). ``scores``
    has one LOF score per row of the input, NaN for rows in skipped classes.
    """

    preserved: list[np.ndarray]
    skipped: list[int]
    scores: np.ndarray
    rescued: list[int] = field(default_factory=list)


def _pairwise_distances(X: np.ndarray) -> np.ndarray:
    n, m = X.shape
    d2 = np.zeros((n, n))
    for t in range(m):
        diff = X[:, t][:, None] - X[:, t][None, :]
        d2 += diff * diff
    return np.sqrt(d2)


def _ordered_row_sums(mask: np.ndarray, values: np.ndarray) -> np.ndarray:
    # values is (n, n) or (n,) broadcast over rows; summed j = 0..n-1 in order
    n = mask.shape[0]
    acc = np.zeros(n)
    for j in range(n):
        col = values[:, j] if values.ndim == 2 else np.full(n, values[j])
        acc += np.where(mask[:, j], col, 0.0)
    return acc


def lof_scores(points, k: int) -> LofResult:
    """LOF score of every point with neighbourhood size ``k``.

    Scores near 1 mean the point is as dense as its neighbours; larger
    values mean it is sparser than them.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("points must be a 2-D array")
    n = X.shape[0]
    k = int(k)
    if k < 1:
        raise ValueError("k must be positive")
    if k >= n:
        raise ValueError(f"k={k} requires at least {k + 1} points, got {n}")

    dist = _pairwise_distances(X)
    others = dist.copy()
    np.fill_diagonal(others, np.inf)
    kdist = np.partition(others, k - 1, axis=1)[:, k - 1]
    neigh = others <= kdist[:, None]
    count = neigh.sum(axis=1).astype(np.float64)

    reach = np.maximum(dist, kdist[None, :])
    reach_sum = _ordered_row_sums(neigh, reach)
    with np.errstate(divide="ignore"):
        lrd = 1.0 / (reach_sum / count)

    lrd_sum = _ordered_row_sums(neigh, lrd)
    mean_lrd = lrd_sum / count
    both_inf = np.isinf(mean_lrd) & np.isinf(lrd)
    with np.errstate(invalid="ignore"):
        scores = np.where(both_inf, 1.0, mean_lrd / lrd)
    return LofResult(scores=scores, neighbors_used=k)


def filter_classes(data: LabeledEmbeddings, cfg: CalibrationConfig) -> FilterResult:
    """Drop points whose within-class LOF score exceeds ``cfg.lof_threshold``.

    Classes with at most ``lof_neighbors`` members pass through unfiltered
    (with a warning). A class is never emptied: if every score is above the
    threshold the lowest-scoring point is kept.
    """
    k = cfg.lof_neighbors
    scores = np.full(len(data), np.nan)
    preserved, skipped, rescued = [], [], []
    for c in range(data.num_classes):
        idx = data.class_indices(c)
        if len(idx) <= k:
            skipped.append(c)
            preserved.append(idx)
            continue
        s = lof_scores(data.vectors[idx], k).scores
        scores[idx] = s
        keep = s <= cfg.lof_threshold
        if not keep.any():
            keep[np.argmin(s)] = True
            rescued.append(c)
        preserved.append(idx[keep])
    if skipped:
        warnings.warn(
            f"classes {skipped} have <= {k} members; LOF filtering skipped",
            RuntimeWarning,
            stacklevel=2,
        )
    return FilterResult(preserved, skipped, scores, rescued)
