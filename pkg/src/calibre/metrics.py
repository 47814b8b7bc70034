"""Accuracy overall and on Many / Medium / Few class splits."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import LabeledEmbeddings

__all__ = ["class_splits", "evaluate", "accuracy_report"]


def class_splits(
    train_counts: Sequence[int], thresholds: tuple[int, int] | None = None
) -> dict[str, list[int]]:
    """Assign classes to ``many``, ``medium`` and ``few`` by training count.

    By default classes are ranked by count (descending, ties by id) and the
    top and bottom ``K // 3`` form ``many`` and ``few``; the rest, including
    any remainder, is ``medium``. With ``thresholds=(hi, lo)`` a class is
    ``many`` when its count exceeds ``hi`` and ``few`` when below ``lo``.
    """
    counts = [int(c) for c in train_counts]
    K = len(counts)
    if thresholds is not None:
        hi, lo = thresholds
        many = [k for k in range(K) if counts[k] > hi]
        few = [k for k in range(K) if counts[k] < lo]
    else:
        order = sorted(range(K), key=lambda k: (-counts[k], k))
        third = K // 3
        many = sorted(order[:third])
        few = sorted(order[K - third :]) if third else []
    medium = [k for k in range(K) if k not in many and k not in few]
    return {"many": many, "medium": medium, "few": few}


def accuracy_report(
    predictions: np.ndarray,
    labels: np.ndarray,
    train_counts: Sequence[int],
    thresholds: tuple[int, int] | None = None,
) -> dict:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("empty test set")
    K = len(train_counts)
    correct = predictions == labels
    per_class = []
    for k in range(K):
        sel = labels == k
        per_class.append(float(correct[sel].mean()) if sel.any() else None)
    report = {"overall": float(correct.mean())}
    for name, members in class_splits(train_counts, thresholds).items():
        sel = np.isin(labels, members)
        report[name] = float(correct[sel].mean()) if sel.any() else None
    report["per_class"] = per_class
    return report


def evaluate(
    model,
    test: LabeledEmbeddings,
    train_counts: Sequence[int],
    thresholds: tuple[int, int] | None = None,
) -> dict:
    """Score ``model.predict`` on clean-labelled ``test`` data.

    Returns ``{"overall", "many", "medium", "few", "per_class"}``; a split
    with no test examples is ``None``.
    """
    if len(train_counts) != test.num_classes:
        raise ValueError("train_counts must have one entry per class")
    return accuracy_report(model.predict(test.vectors), test.labels, train_counts, thresholds)
