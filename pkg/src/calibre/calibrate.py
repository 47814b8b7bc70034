"""Robust per-class Gaussian estimates and head-to-tail calibration."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CalibrationConfig, ClassStats, LabeledEmbeddings

__all__ = [
    "ClassPartition",
    "CalibratedStats",
    "robust_class_stats",
    "split_head_tail",
    "topq_heads",
    "donor_weights",
    "calibrate_tail",
    "uniform_calibrated_mean",
    "uniform_coefficients",
]


@dataclass(frozen=True)
class ClassPartition:
    head: frozenset
    tail: frozenset
    counts: tuple

    @property
    def head_sorted(self) -> list[int]:
        return sorted(self.head)

    @property
    def tail_sorted(self) -> list[int]:
        return sorted(self.tail)


@dataclass(frozen=True, eq=False)
class CalibratedStats:
    """Base estimates plus the (possibly) calibrated Gaussian for one class.

    For head classes the calibrated fields are the base fields and the donor
    list is empty.
    """

    base: ClassStats
    calibrated_mean: np.ndarray
    calibrated_cov: np.ndarray
    donor_set: tuple = ()
    weights: tuple = ()
    weights_degenerate: bool = False

    @property
    def class_id(self) -> int:
        return self.base.class_id


def robust_class_stats(
    data: LabeledEmbeddings, preserved: Sequence[np.ndarray]
) -> list[ClassStats]:
    """Sample mean and unbiased covariance over each class's preserved rows.

    A preserved set with a single member yields a zero covariance flagged as
    degenerate.
    """
    if len(preserved) != data.num_classes:
        raise ValueError("need one preserved index set per class")
    out = []
    m = data.dim
    for k, idx in enumerate(preserved):
        idx = np.asarray(idx, dtype=np.int64)
        if len(idx) == 0:
            raise ValueError(f"class {k} has no preserved members")
        Z = data.vectors[idx]
        mean = Z.mean(axis=0)
        if len(idx) >= 2:
            centered = Z - mean
            cov = centered.T @ centered / (len(idx) - 1)
            cov = 0.5 * (cov + cov.T)
            degenerate = False
        else:
            cov = np.zeros((m, m))
            degenerate = True
            warnings.warn(
                f"class {k} has one preserved member; covariance set to zero",
                RuntimeWarning,
                stacklevel=2,
            )
        out.append(ClassStats(k, len(idx), mean, cov, degenerate))
    return out


def split_head_tail(counts: Sequence[int], head_mass: float = 0.5) -> ClassPartition:
    """Head classes: the shortest prefix, by descending count, holding
    at least ``head_mass`` of all instances. Equal counts order by class id.
    """
    counts = [int(c) for c in counts]
    if not counts:
        raise ValueError("counts must be nonempty")
    total = sum(counts)
    order = sorted(range(len(counts)), key=lambda k: (-counts[k], k))
    head, acc = [], 0
    for k in order:
        head.append(k)
        acc += counts[k]
        if acc >= head_mass * total:
            break
    tail = [k for k in range(len(counts)) if k not in head]
    return ClassPartition(frozenset(head), frozenset(tail), tuple(counts))


def topq_heads(
    stats: Sequence[ClassStats], partition: ClassPartition, k: int, q: int
) -> list[int]:
    """The ``q`` head classes whose means are nearest to class ``k``'s mean."""
    heads = partition.head_sorted
    if q > len(heads):
        raise ValueError(f"q={q} exceeds the number of head classes ({len(heads)})")
    mu_k = stats[k].mean
    d2 = {i: float(np.sum((stats[i].mean - mu_k) ** 2)) for i in heads}
    return sorted(heads, key=lambda i: (d2[i], i))[:q]


def donor_weights(
    stats: Sequence[ClassStats],
    counts: Sequence[int],
    donor_set: Sequence[int],
    k: int,
    invert: bool = False,
) -> tuple[np.ndarray, bool]:
    """Weights ``n_c * d_c / sum_j n_j * d_j`` with ``d`` the squared mean distance.

    Returns ``(weights, degenerate)``; ``degenerate`` is True when every
    donor sits at zero distance and uniform weights were used instead.
    With ``invert`` the weights are proportional to ``n_c / d_c``, and any
    zero-distance donors share all the mass in proportion to their counts.
    """
    donors = list(donor_set)
    if not donors:
        raise ValueError("donor set is empty")
    n = np.array([counts[c] for c in donors], dtype=np.float64)
    if np.any(n < 1):
        raise ValueError("donor counts must be at least 1")
    mu_k = stats[k].mean
    d2 = np.array([np.sum((stats[c].mean - mu_k) ** 2) for c in donors])
    if invert:
        zero = d2 == 0
        raw = n * zero if zero.any() else n / d2
        return raw / raw.sum(), False
    raw = n * d2
    total = raw.sum()
    if total == 0:
        warnings.warn(
            f"class {k}: all donors at zero distance; using uniform weights",
            RuntimeWarning,
            stacklevel=2,
        )
        return np.full(len(donors), 1.0 / len(donors)), True
    return raw / total, False


def calibrate_tail(
    stats: Sequence[ClassStats],
    counts: Sequence[int],
    partition: ClassPartition,
    cfg: CalibrationConfig,
) -> list[CalibratedStats]:
    """Blend each tail class's Gaussian with its nearest head classes.

    For a tail class k with donors C and weights w::

        mean' = gamma * sum_c w_c mean_c + (1 - gamma) * mean_k
        cov'  = gamma * sum_c w_c cov_c  + (1 - gamma) * cov_k + alpha * D

    where D is the all-ones matrix (or the identity when
    ``cfg.disturbance == "identity"``). Head classes are returned unchanged.
    """
    m = stats[0].mean.shape[0]
    D = np.ones((m, m)) if cfg.disturbance == "ones" else np.eye(m)
    out = []
    for st in stats:
        k = st.class_id
        if k in partition.head:
            out.append(CalibratedStats(st, st.mean, st.covariance))
            continue
        donors = topq_heads(stats, partition, k, cfg.q)
        w, degenerate = donor_weights(stats, counts, donors, k, cfg.invert_weights)
        mix_mean = sum(wc * stats[c].mean for wc, c in zip(w, donors))
        mix_cov = sum(wc * stats[c].covariance for wc, c in zip(w, donors))
        mean = cfg.gamma * mix_mean + (1.0 - cfg.gamma) * st.mean
        cov = cfg.gamma * mix_cov + (1.0 - cfg.gamma) * st.covariance + cfg.alpha * D
        out.append(
            CalibratedStats(
                st,
                mean,
                0.5 * (cov + cov.T),
                tuple(donors),
                tuple(float(x) for x in w),
                degenerate,
            )
        )
    return out


def uniform_coefficients(num_donors: int, tau: float) -> tuple[float, float]:
    """Per-donor and self coefficients of the uniform-weight calibrated mean.

    The donor set together with the class itself has ``q = num_donors + 1``
    members; donors get ``tau / (1 + (q - 1) tau)`` each and the class
    ``1 / (1 + (q - 1) tau)``.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    q = num_donors + 1
    denom = 1.0 + (q - 1) * tau
    return tau / denom, 1.0 / denom


def uniform_calibrated_mean(
    stats: Sequence, donor_set: Sequence[int], k: int, tau: float
) -> np.ndarray:
    """Uniform-weight calibrated mean of class ``k``.

    ``stats`` may be ClassStats objects or raw mean vectors. ``k`` is
    excluded from ``donor_set`` if present.
    """
    means = [
        np.asarray(s.mean if isinstance(s, ClassStats) else s, dtype=np.float64)
        for s in stats
    ]
    donors = [j for j in donor_set if j != k]
    c_donor, c_self = uniform_coefficients(len(donors), tau)
    out = c_self * means[k]
    for j in donors:
        out = out + c_donor * means[j]
    return out
