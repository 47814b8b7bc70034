"""Recover clean class-conditional Gaussians from noisy, long-tailed embeddings."""

from .core import (
    CalibrationConfig,
    ClassStats,
    CorruptionSpec,
    GroundTruthModel,
    LabeledEmbeddings,
    load_embeddings,
    save_embeddings,
    seeded_rng,
)

__version__ = "0.1.0"

__all__ = [
    "CalibrationConfig",
    "ClassStats",
    "CorruptionSpec",
    "GroundTruthModel",
    "LabeledEmbeddings",
    "load_embeddings",
    "save_embeddings",
    "seeded_rng",
]
