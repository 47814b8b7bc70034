"""Gaussian sampling and class rebalancing with synthetic points."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import LabeledEmbeddings

__all__ = ["sample_mvn", "mvn_transform", "balance_dataset"]


def mvn_transform(cov: np.ndarray) -> np.ndarray:
    """Return ``E @ diag(sqrt(clamp(lam)))`` for a symmetric PSD ``cov``.

    Eigenvalues down to ``-1e-8 * trace / m`` are clamped to zero; anything
    more negative is rejected.
    """
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"covariance must be square, got {cov.shape}")
    m = cov.shape[0]
    scale = max(1.0, float(np.abs(cov).max(initial=0.0)))
    if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-9 * scale):
        raise ValueError("covariance is not symmetric")
    lam, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    floor = -1e-8 * max(float(np.trace(cov)), 0.0) / m
    if lam.min() < floor:
        raise ValueError(
            f"covariance is indefinite (min eigenvalue {lam.min():.3g} < {floor:.3g})"
        )
    return vecs * np.sqrt(np.clip(lam, 0.0, None))


def sample_mvn(
    mean: np.ndarray, cov: np.ndarray, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw ``count`` rows from N(mean, cov) via eigendecomposition."""
    mean = np.asarray(mean, dtype=np.float64)
    transform = mvn_transform(cov)
    if transform.shape[0] != mean.shape[0]:
        raise ValueError("mean and covariance dimensions differ")
    if count < 0:
        raise ValueError("count must be nonnegative")
    u = rng.standard_normal((int(count), mean.shape[0]))
    return mean + u @ transform.T


def balance_dataset(
    data: LabeledEmbeddings,
    stats: Sequence,
    target_per_class: int | str = "max",
    rng: np.random.Generator | None = None,
) -> tuple[LabeledEmbeddings, np.ndarray]:
    """Top every class up to ``target_per_class`` with synthetic draws.

    ``stats[k]`` must expose ``calibrated_mean`` and ``calibrated_cov``.
    Original rows come first, unchanged and in order; synthetic rows follow
    grouped by class. Returns the balanced data and a boolean mask that is
    True for synthetic rows. Each class draws from its own child stream of
    ``rng`` so the result does not depend on how many points other classes
    need.
    """
    if rng is None:
        raise ValueError("an explicit random stream is required")
    K = data.num_classes
    if len(stats) != K:
        raise ValueError(f"expected {K} class statistics, got {len(stats)}")
    counts = data.class_counts()
    if target_per_class == "max":
        target = int(counts.max())
    else:
        target = int(target_per_class)
        if target < counts.max():
            raise ValueError(
                f"target {target} is below the largest class size {counts.max()}"
            )
    children = rng.spawn(K)
    new_vectors = [data.vectors]
    new_labels = [data.labels]
    for k in range(K):
        deficit = target - int(counts[k])
        if deficit == 0:
            continue
        st = stats[k]
        draws = sample_mvn(st.calibrated_mean, st.calibrated_cov, deficit, children[k])
        new_vectors.append(draws)
        new_labels.append(np.full(deficit, k, dtype=np.int64))
    n_syn = sum(len(v) for v in new_labels[1:])
    mask = np.zeros(len(data) + n_syn, dtype=bool)
    mask[len(data) :] = True
    balanced = LabeledEmbeddings(
        np.concatenate(new_vectors), np.concatenate(new_labels), K
    )
    return balanced, mask
