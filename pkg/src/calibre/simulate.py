"""Long-tailed subsampling, label-noise injection and synthetic Gaussian data."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CorruptionSpec, GroundTruthModel, LabeledEmbeddings
from .sample import mvn_transform

__all__ = [
    "TransitionMatrix",
    "longtail_counts",
    "subsample_longtail",
    "build_transition",
    "assumption_transition",
    "flip_labels",
    "inject_noise",
    "synth_gaussian",
]


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic label-flip matrix; ``entries[i, j] = P(noisy=j | true=i)``."""

    entries: np.ndarray
    counts: np.ndarray
    noise_rate: float

    @property
    def num_classes(self) -> int:
        return self.entries.shape[0]


def longtail_counts(spec: CorruptionSpec) -> list[int]:
    """Per-class sizes ``round(base * rho ** (-k / (K - 1)))``, at least 1.

    Rounding is half-to-even (Python's ``round``).
    """
    K, base, rho = spec.num_classes, spec.base_count, spec.imbalance_ratio
    return [max(1, round(base * rho ** (-k / (K - 1)))) for k in range(K)]


def subsample_longtail(
    data: LabeledEmbeddings, counts: Sequence[int], rng: np.random.Generator
) -> LabeledEmbeddings:
    """Keep ``counts[k]`` uniformly chosen members of each class, shuffled."""
    if len(counts) != data.num_classes:
        raise ValueError("counts must have one entry per class")
    chosen = []
    for k, c in enumerate(counts):
        idx = data.class_indices(k)
        if c > len(idx):
            raise ValueError(f"class {k}: requested {c} but only {len(idx)} available")
        if c < 0:
            raise ValueError("counts must be nonnegative")
        chosen.append(rng.choice(idx, size=int(c), replace=False))
    order = rng.permutation(np.concatenate(chosen))
    return data.take(order)


def build_transition(counts: Sequence[int], eta: float) -> TransitionMatrix:
    """Size-proportional flip matrix used for the experimental corruption.

    The diagonal is ``1 - eta`` and off-diagonal entries are
    ``eta * n_j / (n - n_i)``, so every row sums to one.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.ndim != 1 or len(counts) < 2:
        raise ValueError("need at least two classes")
    if np.any(counts < 1):
        raise ValueError("all counts must be at least 1")
    if not 0.0 <= eta < 1.0:
        raise ValueError("eta must lie in [0, 1)")
    n = counts.sum()
    nf = counts.astype(np.float64)
    T = eta * nf[None, :] / (n - nf)[:, None]
    np.fill_diagonal(T, 1.0 - eta)
    return TransitionMatrix(T, counts, float(eta))


def assumption_transition(counts: Sequence[int], eta: float) -> np.ndarray:
    """Flip law of the theory model: ``P(noisy=j | true=k) = eta * n_j / n``.

    The diagonal absorbs the rest, ``1 - eta + eta * n_k / n``. This law is
    distinct from :func:`build_transition` and is only used by the theory
    harness.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    n = counts.sum()
    T = np.tile(eta * counts / n, (len(counts), 1))
    np.fill_diagonal(T, 1.0 - eta + eta * counts / n)
    return T


def flip_labels(
    labels: np.ndarray, T: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Resample each label independently from its row of ``T``."""
    labels = np.asarray(labels, dtype=np.int64)
    cum = np.cumsum(T, axis=1)
    cum[:, -1] = 1.0
    u = rng.random(len(labels))
    return (u[:, None] >= cum[labels]).sum(axis=1).astype(np.int64)


def inject_noise(
    data: LabeledEmbeddings, T: TransitionMatrix, rng: np.random.Generator
) -> tuple[LabeledEmbeddings, np.ndarray]:
    """Corrupt labels with ``T``; returns the noisy data and the clean labels."""
    if T.num_classes != data.num_classes:
        raise ValueError(
            f"transition has {T.num_classes} classes, data has {data.num_classes}"
        )
    noisy = flip_labels(data.labels, T.entries, rng)
    return data.with_labels(noisy), np.array(data.labels)


def synth_gaussian(model: GroundTruthModel, rng: np.random.Generator) -> LabeledEmbeddings:
    """Draw ``counts[k]`` points from N(means[k], shared_covariance) per class."""
    transform = mvn_transform(model.shared_covariance)
    n = int(model.counts.sum())
    labels = np.repeat(np.arange(model.num_classes), model.counts)
    u = rng.standard_normal((n, model.dim))
    vectors = model.means[labels] + u @ transform.T
    return LabeledEmbeddings(vectors, labels, model.num_classes)
