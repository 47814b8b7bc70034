"""Domain types, embedding file I/O, configuration and seeded random streams."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

__all__ = [
    "LabeledEmbeddings",
    "ClassStats",
    "CorruptionSpec",
    "CalibrationConfig",
    "GroundTruthModel",
    "EmbeddingFormatError",
    "load_embeddings",
    "save_embeddings",
    "seeded_rng",
    "load_json_config",
    "config_from_dict",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _psd_floor(matrix: np.ndarray) -> float:
    m = matrix.shape[0]
    return -1e-8 * max(float(np.trace(matrix)), 0.0) / m


@dataclass(frozen=True, eq=False)
class LabeledEmbeddings:
    """Embedding vectors with (possibly noisy) integer class labels.

    ``vectors`` has shape ``(n, dim)`` and ``labels`` shape ``(n,)``. Both are
    stored as read-only copies.
    """

    vectors: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        vectors = np.asarray(self.vectors, dtype=np.float64)
        labels = np.asarray(self.labels)
        if vectors.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {vectors.shape}")
        n, dim = vectors.shape
        if n < 1:
            raise ValueError("at least one vector is required")
        if dim < 1:
            raise ValueError("dim must be positive")
        if labels.shape != (n,):
            raise ValueError(f"labels shape {labels.shape} does not match n={n}")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("vectors contain non-finite values")
        object.__setattr__(self, "vectors", _frozen(vectors))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "num_classes", int(self.num_classes))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def class_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)

    def with_labels(self, labels: np.ndarray) -> "LabeledEmbeddings":
        return LabeledEmbeddings(self.vectors, labels, self.num_classes)

    def take(self, indices: np.ndarray) -> "LabeledEmbeddings":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledEmbeddings(
            self.vectors[indices], self.labels[indices], self.num_classes
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LabeledEmbeddings):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.vectors, other.vectors)
        )


@dataclass(frozen=True, eq=False)
class ClassStats:
    """Per-class sample mean and Bessel-corrected covariance.

    ``degenerate`` is set when the covariance could not be estimated (fewer
    than two members) and was replaced by zeros.
    """

    class_id: int
    count: int
    mean: np.ndarray
    covariance: np.ndarray
    degenerate: bool = False

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        m = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (m, m):
            raise ValueError("mean must be (m,) and covariance (m, m)")
        if self.count < 1:
            raise ValueError("count must be at least 1")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-9):
            raise ValueError("covariance is not symmetric")
        if m and np.linalg.eigvalsh(cov).min() < _psd_floor(cov) - 1e-300:
            raise ValueError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "covariance", _frozen(cov))


@dataclass(frozen=True)
class CorruptionSpec:
    """Long-tail subsampling and label-noise parameters."""

    imbalance_ratio: float
    noise_rate: float
    num_classes: int
    base_count: int

    def __post_init__(self) -> None:
        if not self.imbalance_ratio > 1.0:
            raise ValueError("imbalance_ratio must be > 1")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ValueError("noise_rate must lie in [0, 1)")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.base_count < self.num_classes:
            raise ValueError("base_count must be at least num_classes")

    @property
    def decay(self) -> float:
        return self.imbalance_ratio ** (-1.0 / (self.num_classes - 1))


@dataclass(frozen=True)
class CalibrationConfig:
    """Hyperparameters for outlier filtering and tail calibration.

    ``disturbance`` selects the matrix added with weight ``alpha``: ``"ones"``
    is the all-ones matrix, ``"identity"`` the identity. ``invert_weights``
    swaps the donor weighting to favour closer heads.
    """

    q: int = 3
    gamma: float = 0.5
    alpha: float = 0.01
    lof_neighbors: int = 20
    lof_threshold: float = 1.5
    head_mass: float = 0.5
    disturbance: str = "ones"
    invert_weights: bool = False

    def __post_init__(self) -> None:
        if self.q < 1:
            raise ValueError("q must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.lof_neighbors < 1:
            raise ValueError("lof_neighbors must be positive")
        if not self.lof_threshold > 0:
            raise ValueError("lof_threshold must be positive")
        if not 0.0 < self.head_mass <= 1.0:
            raise ValueError("head_mass must lie in (0, 1]")
        if self.disturbance not in ("ones", "identity"):
            raise ValueError("disturbance must be 'ones' or 'identity'")


@dataclass(frozen=True, eq=False)
class GroundTruthModel:
    """Class-conditional Gaussians with a shared covariance."""

    means: np.ndarray
    shared_covariance: np.ndarray
    counts: np.ndarray

    def __post_init__(self) -> None:
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        cov = np.asarray(self.shared_covariance, dtype=np.float64)
        counts = np.asarray(self.counts, dtype=np.int64)
        K, m = means.shape
        if cov.shape != (m, m):
            raise ValueError(f"shared_covariance must be ({m}, {m})")
        if counts.shape != (K,) or np.any(counts < 1):
            raise ValueError("counts must be K positive integers")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-9):
            raise ValueError("shared_covariance is not symmetric")
        if np.linalg.eigvalsh(cov).min() < _psd_floor(cov) - 1e-300:
            raise ValueError("shared_covariance is not positive semidefinite")
        object.__setattr__(self, "means", _frozen(means))
        object.__setattr__(self, "shared_covariance", _frozen(cov))
        object.__setattr__(self, "counts", _frozen(counts))

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


class EmbeddingFormatError(ValueError):
    """Raised for malformed embedding files; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _parse_header(text: str) -> tuple[int, int]:
    fields = {}
    for part in text.strip().split(","):
        key, sep, value = part.partition("=")
        if not sep:
            raise EmbeddingFormatError(f"malformed header {text.strip()!r}", 1)
        fields[key.strip()] = value.strip()
    if set(fields) != {"m", "K"}:
        raise EmbeddingFormatError("header must be 'm=<dim>,K=<classes>'", 1)
    try:
        m, K = int(fields["m"]), int(fields["K"])
    except ValueError:
        raise EmbeddingFormatError(f"malformed header {text.strip()!r}", 1) from None
    if m < 1 or K < 1:
        raise EmbeddingFormatError("m and K must be positive", 1)
    return m, K


def load_embeddings(path: str | Path) -> LabeledEmbeddings:
    """Read a ``m=<dim>,K=<classes>`` headed CSV of ``label,v0,...`` rows."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise EmbeddingFormatError("empty file", 1)
    m, K = _parse_header(lines[0])
    labels: list[int] = []
    rows: list[list[float]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != m + 1:
            raise EmbeddingFormatError(
                f"expected {m + 1} fields, found {len(parts)}", lineno
            )
        try:
            label = int(parts[0])
        except ValueError:
            raise EmbeddingFormatError(f"bad label {parts[0]!r}", lineno) from None
        if not 0 <= label < K:
            raise EmbeddingFormatError(f"label {label} out of range [0, {K})", lineno)
        try:
            values = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise EmbeddingFormatError(str(exc), lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise EmbeddingFormatError("non-finite value", lineno)
        labels.append(label)
        rows.append(values)
    if not rows:
        raise EmbeddingFormatError("no data rows", len(lines))
    return LabeledEmbeddings(np.array(rows), np.array(labels), K)


def save_embeddings(data: LabeledEmbeddings, path: str | Path) -> None:
    """Write ``data`` in the format read by :func:`load_embeddings`.

    Values use 17 significant digits so that a reload is exact.
    """
    if len(data) < 1:
        raise ValueError("cannot save an empty dataset")
    out = [f"m={data.dim},K={data.num_classes}"]
    for label, vec in zip(data.labels.tolist(), data.vectors.tolist()):
        out.append(",".join([str(label)] + [format(v, ".17g") for v in vec]))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def seeded_rng(seed: int, stream: str) -> np.random.Generator:
    """Deterministic generator for the named substream of ``seed``.

    The stream label is hashed with SHA-256 into the seed sequence's spawn
    key, so the mapping does not depend on Python's string hashing.
    """
    digest = hashlib.sha256(stream.encode("utf-8")).digest()
    key = tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 32, 4))
    ss = np.random.SeedSequence(entropy=int(seed) % 2**64, spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def config_from_dict(cls: type, values: dict[str, Any] | None):
    """Build a dataclass config, rejecting unknown field names."""
    values = dict(values or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**values)


def load_json_config(path: str | Path) -> dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: top-level JSON value must be an object")
    return cfg


def as_index_list(values: Sequence[int] | np.ndarray) -> list[int]:
    return [int(v) for v in values]
