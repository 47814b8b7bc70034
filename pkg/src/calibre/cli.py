"""Command-line front end: ``calibre <subcommand> ...``."""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .calibrate import calibrate_tail, robust_class_stats, split_head_tail
from .core import (
    CalibrationConfig,
    CorruptionSpec,
    GroundTruthModel,
    config_from_dict,
    load_embeddings,
    load_json_config,
    save_embeddings,
    seeded_rng,
)
from .lof import filter_classes
from .metrics import evaluate
from .pipeline import (
    ABLATIONS,
    dump_json,
    load_model,
    run_pipeline,
    stats_from_json,
    stats_to_json,
)
from .sample import balance_dataset
from .simulate import (
    build_transition,
    inject_noise,
    longtail_counts,
    subsample_longtail,
    synth_gaussian,
)
from .theory import verify_theory
from .train import TrainConfig, train_probe

def _section(cfg: dict, name: str, cls: type) -> dict:
    """Config values for ``cls``: a named section, or matching top-level keys."""
    if isinstance(cfg.get(name), dict):
        return dict(cfg[name])
    names = {f.name for f in dataclasses.fields(cls)}
    return {k: v for k, v in cfg.items() if k in names}


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def cmd_simulate(args) -> int:
    seed = args.seed
    if args.synthetic:
        m_s, K_s, counts_file = args.synthetic.split(",", 2)
        m, K = int(m_s), int(K_s)
        counts = json.loads(Path(counts_file).read_text())
        if len(counts) != K:
            raise ValueError(f"counts file lists {len(counts)} classes, expected {K}")
        means = seeded_rng(seed, "data/means").normal(
            0.0, args.separation / np.sqrt(2 * m), size=(K, m)
        )
        model = GroundTruthModel(means, args.sigma**2 * np.eye(m), counts)
        data = synth_gaussian(model, seeded_rng(seed, "data/train"))
    elif args.input:
        data = load_embeddings(args.input)
        if args.rho is not None and args.rho > 1:
            spec = CorruptionSpec(args.rho, args.eta, data.num_classes, int(data.class_counts().max()))
            data = subsample_longtail(data, longtail_counts(spec), seeded_rng(seed, "subsample"))
    else:
        raise ValueError("either --in or --synthetic is required")
    clean = np.array(data.labels)
    if args.eta > 0:
        T = build_transition(data.class_counts(), args.eta)
        data, clean = inject_noise(data, T, seeded_rng(seed, "noise"))
    out = Path(args.out)
    save_embeddings(data, out)
    clean_path = _sidecar(out, ".clean.csv")
    np.savetxt(clean_path, clean, fmt="%d")
    sidecar = {
        "seed": seed,
        "realized_counts": np.bincount(clean, minlength=data.num_classes).tolist(),
        "noisy_counts": data.class_counts().tolist(),
        "empirical_noise_rate": float(np.mean(clean != data.labels)),
        "clean_labels": clean_path.name,
    }
    dump_json(sidecar, _sidecar(out, ".json"))
    return 0


def cmd_calibrate(args) -> int:
    data = load_embeddings(args.input)
    cfg = load_json_config(args.config) if args.config else {}
    values = _section(cfg, "calibrate", CalibrationConfig)
    if args.lof_k is not None:
        values["lof_neighbors"] = args.lof_k
    if args.lof_threshold is not None:
        values["lof_threshold"] = args.lof_threshold
    calib = config_from_dict(CalibrationConfig, values)
    filt = filter_classes(data, calib)
    if args.dump_lof:
        np.savetxt(args.dump_lof, np.column_stack([data.labels, filt.scores]),
                   fmt=["%d", "%.17g"], delimiter=",", header="label,lof", comments="")
    counts = data.class_counts()
    stats = robust_class_stats(data, filt.preserved)
    partition = split_head_tail(counts, calib.head_mass)
    cstats = calibrate_tail(stats, counts, partition, calib)
    dump_json(stats_to_json(cstats, partition), args.out)
    return 0


def cmd_sample(args) -> int:
    data = load_embeddings(args.input)
    stats, _ = stats_from_json(json.loads(Path(args.stats).read_text()))
    target = args.target if args.target == "max" else int(args.target)
    balanced, mask = balance_dataset(data, stats, target, seeded_rng(args.seed, "sampling"))
    out = Path(args.out)
    save_embeddings(balanced, out)
    np.savetxt(_sidecar(out, ".mask.csv"), mask.astype(int), fmt="%d")
    return 0


def cmd_train(args) -> int:
    data = load_embeddings(args.input)
    cfg = load_json_config(args.config) if args.config else {}
    tconf = config_from_dict(TrainConfig, _section(cfg, "train", TrainConfig))
    if args.mask:
        mask = np.loadtxt(args.mask, dtype=int, ndmin=1).astype(bool)
    else:
        mask = np.zeros(len(data), dtype=bool)
        mask[len(load_embeddings(args.anchors)) if args.anchors else len(data) :] = True
    if args.anchors:
        anchors = load_embeddings(args.anchors)
        real = np.flatnonzero(~mask)
        if len(real) != len(anchors) or not np.array_equal(data.vectors[real], anchors.vectors):
            raise ValueError("anchor vectors do not match the real rows of the training data")
    train_counts = np.bincount(data.labels[~mask], minlength=data.num_classes)
    model, history = train_probe(data, tconf, seeded_rng(args.seed, "mixup"), mask)
    out = model.to_dict()
    out["train_counts"] = train_counts.tolist()
    out["loss_history"] = history
    dump_json(out, args.out)
    return 0


def cmd_evaluate(args) -> int:
    model, train_counts = load_model(args.model)
    test = load_embeddings(args.test)
    if train_counts is None:
        train_counts = [1] * test.num_classes
    text = dump_json(evaluate(model, test, train_counts), args.out)
    if not args.out:
        sys.stdout.write(text)
    return 0


def cmd_verify_theory(args) -> int:
    cfg = load_json_config(args.config) if args.config else {}
    report = verify_theory(cfg)
    text = dump_json(report, args.out)
    if not args.out:
        sys.stdout.write(text)
    return 0 if report["pass"] else 3


def cmd_run(args) -> int:
    ablate = []
    for item in args.ablate or []:
        ablate.extend(a for a in item.split(",") if a)
    metrics = run_pipeline(
        args.config, seed=args.seed, out_dir=args.out_dir, ablate=ablate, dump_lof=args.dump_lof
    )
    if not args.out_dir:
        sys.stdout.write(dump_json(metrics))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="calibre", description=__doc__)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="long-tail subsample and inject label noise")
    p.add_argument("--in", dest="input")
    p.add_argument("--out", required=True)
    p.add_argument("--rho", type=float)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--synthetic", metavar="m,K,counts-file")
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="LOF filter, robust stats and tail calibration")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--lof-k", type=int)
    p.add_argument("--lof-threshold", type=float)
    p.add_argument("--dump-lof")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sample", help="top classes up with calibrated Gaussian draws")
    p.add_argument("--stats", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", default="max")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="train the adapter and linear head")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--anchors")
    p.add_argument("--mask")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="accuracy on clean test embeddings")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify-theory", help="Monte-Carlo checks of the error bounds")
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_theory)

    p = sub.add_parser("run", help="full pipeline from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--ablate", action="append", help=f"comma list of {', '.join(ABLATIONS)} or all")
    p.add_argument("--dump-lof")
    p.set_defaults(func=cmd_run)
    return parser


def _thread_limit():
    value = os.environ.get("CALIBRE_THREADS")
    if not value:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(value))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"calibre {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
