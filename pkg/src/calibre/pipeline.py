"""End-to-end run: corrupt, filter, estimate, calibrate, resample, train, evaluate."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .calibrate import (
    CalibratedStats,
    ClassPartition,
    calibrate_tail,
    robust_class_stats,
    split_head_tail,
)
from .core import (
    CalibrationConfig,
    ClassStats,
    CorruptionSpec,
    GroundTruthModel,
    LabeledEmbeddings,
    config_from_dict,
    load_embeddings,
    load_json_config,
    save_embeddings,
    seeded_rng,
)
from .lof import filter_classes
from .metrics import evaluate
from .sample import balance_dataset
from .simulate import (
    build_transition,
    inject_noise,
    longtail_counts,
    subsample_longtail,
    synth_gaussian,
)
from .train import ProbeModel, TrainConfig, train_probe

__all__ = [
    "ABLATIONS",
    "StageError",
    "run_pipeline",
    "synthetic_benchmark",
    "stats_to_json",
    "stats_from_json",
    "dump_json",
]

log = logging.getLogger(__name__)

ABLATIONS = ("cl-anchor", "dc", "mixup", "reg")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {cause}")


def dump_json(obj: Any, path: str | Path | None = None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def stats_to_json(stats: list[CalibratedStats], partition: ClassPartition) -> dict:
    classes = []
    for st in stats:
        b = st.base
        classes.append(
            {
                "class_id": b.class_id,
                "count": b.count,
                "degenerate": b.degenerate,
                "mean": b.mean.tolist(),
                "covariance": b.covariance.ravel().tolist(),
                "calibrated_mean": np.asarray(st.calibrated_mean).tolist(),
                "calibrated_cov": np.asarray(st.calibrated_cov).ravel().tolist(),
                "donors": list(st.donor_set),
                "weights": list(st.weights),
            }
        )
    return {
        "dim": int(stats[0].base.mean.shape[0]),
        "head": partition.head_sorted,
        "tail": partition.tail_sorted,
        "counts": list(partition.counts),
        "classes": classes,
    }


def stats_from_json(obj: dict) -> tuple[list[CalibratedStats], ClassPartition]:
    m = int(obj["dim"])
    stats = []
    for c in obj["classes"]:
        base = ClassStats(
            c["class_id"],
            c["count"],
            np.asarray(c["mean"]),
            np.asarray(c["covariance"]).reshape(m, m),
            c.get("degenerate", False),
        )
        stats.append(
            CalibratedStats(
                base,
                np.asarray(c["calibrated_mean"]),
                np.asarray(c["calibrated_cov"]).reshape(m, m),
                tuple(c.get("donors", ())),
                tuple(c.get("weights", ())),
            )
        )
    part = ClassPartition(frozenset(obj["head"]), frozenset(obj["tail"]), tuple(obj["counts"]))
    return stats, part


def synthetic_benchmark(
    seed: int,
    dim: int = 16,
    num_classes: int = 10,
    base_count: int = 1000,
    test_per_class: int = 500,
    separation: float = 3.0,
    sigma: float = 1.0,
) -> tuple[LabeledEmbeddings, LabeledEmbeddings, GroundTruthModel]:
    """Balanced clean train/test sets from random class means.

    Means are drawn from N(0, separation^2 / (2 dim) I), so two class means
    are about ``separation`` apart.
    """
    rng = seeded_rng(seed, "data/means")
    means = rng.normal(0.0, separation / np.sqrt(2 * dim), size=(num_classes, dim))
    cov = sigma**2 * np.eye(dim)
    train_model = GroundTruthModel(means, cov, [base_count] * num_classes)
    test_model = GroundTruthModel(means, cov, [test_per_class] * num_classes)
    train = synth_gaussian(train_model, seeded_rng(seed, "data/train"))
    test = synth_gaussian(test_model, seeded_rng(seed, "data/test"))
    return train, test, train_model


def _stage(name: str):
    class _Ctx:
        def __enter__(self):
            log.info("stage %s", name)

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, StageError):
                raise StageError(name, exc) from exc
            return False

    return _Ctx()


def _as_path(base: Path | None, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() or base is None else base / p


def run_pipeline(
    config: dict | str | Path,
    *,
    seed: int | None = None,
    out_dir: str | Path | None = None,
    ablate: Iterable[str] = (),
    dump_lof: str | Path | None = None,
) -> dict:
    """Execute every stage and return the metrics dictionary.

    ``config`` is a dict or a JSON file with optional sections ``data``,
    ``simulate``, ``calibrate``, ``sample`` and ``train`` plus top-level
    ``seed`` and ``ablate``; keyword arguments override them. Ablations
    each remove one component: ``mixup``, ``reg`` (beta = 0), ``dc`` (no
    filtering, calibration or resampling) and ``cl-anchor`` (no adapter;
    the head is fit on the ingested embeddings directly). When ``out_dir``
    is given every intermediate artifact and ``metrics.json`` are written
    there.
    """
    base_dir = None
    if not isinstance(config, dict):
        base_dir = Path(config).resolve().parent
        config = load_json_config(config)
    cfg = dict(config)
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    ablations = sorted(set(cfg.get("ablate", [])) | set(ablate))
    if "all" in ablations:
        ablations = sorted(ABLATIONS)
    unknown = set(ablations) - set(ABLATIONS)
    if unknown:
        raise ValueError(f"unknown ablations {sorted(unknown)}; choose from {ABLATIONS}")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def artifact(name: str) -> Path | None:
        return None if out is None else out / name

    with _stage("data"):
        data_cfg = dict(cfg.get("data", {}))
        if "synthetic" in data_cfg:
            train, test, _ = synthetic_benchmark(seed, **data_cfg["synthetic"])
        else:
            train = load_embeddings(_as_path(base_dir, data_cfg["train"]))
            test = load_embeddings(_as_path(base_dir, data_cfg["test"]))

    with _stage("simulate"):
        sim = dict(cfg.get("simulate", {}))
        rho = float(sim.get("imbalance_ratio", 1.0))
        eta = float(sim.get("noise_rate", 0.0))
        K = train.num_classes
        if rho > 1.0:
            spec = CorruptionSpec(rho, eta, K, int(train.class_counts().max()))
            counts = longtail_counts(spec)
            train = subsample_longtail(train, counts, seeded_rng(seed, "subsample"))
        clean_labels = np.array(train.labels)
        if eta > 0.0:
            T = build_transition(train.class_counts(), eta)
            train, clean_labels = inject_noise(train, T, seeded_rng(seed, "noise"))
        noise_rate = float(np.mean(train.labels != clean_labels))
        noisy_counts = train.class_counts()
        if artifact("train.csv"):
            save_embeddings(train, artifact("train.csv"))
            np.savetxt(artifact("clean_labels.csv"), clean_labels, fmt="%d")

    calib = config_from_dict(CalibrationConfig, cfg.get("calibrate"))
    sample_cfg = dict(cfg.get("sample", {}))
    extra: dict[str, Any] = {}
    if "dc" in ablations:
        balanced, mask = train, np.zeros(len(train), dtype=bool)
    else:
        with _stage("lof"):
            filt = filter_classes(train, calib)
            if dump_lof is not None:
                np.savetxt(dump_lof, np.column_stack([train.labels, filt.scores]),
                           fmt=["%d", "%.17g"], delimiter=",", header="label,lof",
                           comments="")
            extra["preserved_fraction"] = float(
                sum(len(p) for p in filt.preserved) / len(train)
            )
        with _stage("calibrate"):
            stats = robust_class_stats(train, filt.preserved)
            partition = split_head_tail(noisy_counts, calib.head_mass)
            if calib.q > len(partition.head):
                log.warning("q=%d exceeds %d head classes; clamping", calib.q, len(partition.head))
                calib = CalibrationConfig(**{**asdict(calib), "q": len(partition.head)})
            cstats = calibrate_tail(stats, noisy_counts, partition, calib)
            if artifact("stats.json"):
                dump_json(stats_to_json(cstats, partition), artifact("stats.json"))
        with _stage("sample"):
            balanced, mask = balance_dataset(
                train, cstats, sample_cfg.get("target", "max"), seeded_rng(seed, "sampling")
            )
            if artifact("balanced.csv"):
                save_embeddings(balanced, artifact("balanced.csv"))
                np.savetxt(artifact("balanced_mask.csv"), mask.astype(int), fmt="%d")

    with _stage("train"):
        tcfg = dict(cfg.get("train", {}))
        if "mixup_synthetic" in sample_cfg:
            tcfg.setdefault("mixup_synthetic", sample_cfg["mixup_synthetic"])
        if "mixup" in ablations:
            tcfg["mixup"] = False
        if "reg" in ablations:
            tcfg["beta"] = 0.0
        if "cl-anchor" in ablations:
            tcfg["use_adapter"] = False
        tconf = config_from_dict(TrainConfig, tcfg)
        model, history = train_probe(balanced, tconf, seeded_rng(seed, "mixup"), mask)
        if artifact("model.json"):
            mdict = model.to_dict()
            mdict["train_counts"] = noisy_counts.tolist()
            dump_json(mdict, artifact("model.json"))

    with _stage("evaluate"):
        metrics = evaluate(model, test, noisy_counts)
        metrics.update(
            {
                "seed": seed,
                "ablate": ablations,
                "train_counts": noisy_counts.tolist(),
                "realized_noise_rate": noise_rate,
                "synthetic_points": int(mask.sum()),
                "final_train_loss": history[-1],
                **extra,
            }
        )
        if artifact("metrics.json"):
            dump_json(metrics, artifact("metrics.json"))
    return metrics


def load_model(path: str | Path) -> tuple[ProbeModel, list[int] | None]:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return ProbeModel.from_dict(d), d.get("train_counts")
