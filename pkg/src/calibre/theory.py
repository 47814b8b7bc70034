"""Monte-Carlo checks of the noisy-mean closed form and the error bounds.

Labels here are corrupted with the size-proportional law
``P(noisy=j | true=k) = eta * n_j / n`` (:func:`assumption_transition`),
not the experimental law used by the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .calibrate import donor_weights, split_head_tail, uniform_calibrated_mean
from .core import ClassStats, GroundTruthModel, seeded_rng
from .simulate import assumption_transition, flip_labels, synth_gaussian

__all__ = [
    "TheoryExperiment",
    "MeanErrorResult",
    "ScalingGrid",
    "ScalingReport",
    "expected_noisy_mean",
    "mean_error_mc",
    "make_theory_model",
    "bound_scaling_check",
    "verify_theory",
]


def expected_noisy_mean(model: GroundTruthModel, eta: float, k: int) -> np.ndarray:
    """E[class-k mean under noisy labels]:
    ``(1 - eta + eta n_k / n) mu_k + sum_{j != k} (eta n_j / n) mu_j``.
    """
    counts = model.counts.astype(np.float64)
    w = eta * counts / counts.sum()
    w[k] = 1.0 - eta + eta * counts[k] / counts.sum()
    return w @ model.means


@dataclass(eq=False)
class TheoryExperiment:
    """One Monte-Carlo configuration.

    ``head_classes`` defaults to :func:`split_head_tail` at mass 0.5 on the
    model counts. Donors for each tail class are its ``q`` nearest heads by
    true mean. ``estimator`` is ``"uniform"`` (uniform-tau form) or
    ``"weighted"`` (count-and-distance weights with ``gamma``).
    """

    model: GroundTruthModel
    eta: float
    q: int = 3
    tau_calib: float = 1.0
    trials: int = 200
    head_classes: Sequence[int] | None = None
    estimator: str = "uniform"
    gamma: float = 0.5

    def __post_init__(self) -> None:
        if self.head_classes is None:
            self.head_classes = split_head_tail(self.model.counts.tolist(), 0.5).head_sorted
        self.head_classes = sorted(int(h) for h in self.head_classes)
        if self.q > len(self.head_classes):
            raise ValueError(f"q={self.q} exceeds {len(self.head_classes)} head classes")
        if self.estimator not in ("uniform", "weighted"):
            raise ValueError("estimator must be 'uniform' or 'weighted'")

    @property
    def tail_classes(self) -> list[int]:
        return [k for k in range(self.model.num_classes) if k not in self.head_classes]

    @property
    def donors(self) -> dict[int, list[int]]:
        mu = self.model.means
        out = {}
        for k in self.tail_classes:
            d2 = {h: float(np.sum((mu[h] - mu[k]) ** 2)) for h in self.head_classes}
            out[k] = sorted(self.head_classes, key=lambda h: (d2[h], h))[: self.q]
        return out

    @property
    def delta_q(self) -> float:
        mu = self.model.means
        dists = [
            np.linalg.norm(mu[j] - mu[k])
            for k, donors in self.donors.items()
            for j in donors
        ]
        return float(max(dists, default=0.0))


@dataclass(eq=False)
class MeanErrorResult:
    """Per-trial squared errors (trials x K) and mean estimates (trials x K x m).

    For head classes the calibrated error equals the vanilla error.
    """

    vanilla_sq: np.ndarray
    calibrated_sq: np.ndarray
    estimates: np.ndarray
    tail_classes: list[int] = field(default_factory=list)

    @property
    def trials(self) -> int:
        return self.vanilla_sq.shape[0]

    def _mse(self, sq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return sq.mean(axis=0), sq.std(axis=0, ddof=1) / np.sqrt(self.trials)

    def vanilla(self):
        return self._mse(self.vanilla_sq)

    def calibrated(self):
        return self._mse(self.calibrated_sq)

    def mean_estimate(self) -> tuple[np.ndarray, np.ndarray]:
        se = self.estimates.std(axis=0, ddof=1) / np.sqrt(self.trials)
        return self.estimates.mean(axis=0), se

    def summary(self) -> list[dict]:
        v, vse = self.vanilla()
        c, cse = self.calibrated()
        return [
            {
                "class": k,
                "tail": k in self.tail_classes,
                "vanilla_mse": float(v[k]),
                "vanilla_se": float(vse[k]),
                "calibrated_mse": float(c[k]),
                "calibrated_se": float(cse[k]),
            }
            for k in range(len(v))
        ]


def mean_error_mc(exp: TheoryExperiment, rng: np.random.Generator) -> MeanErrorResult:
    """Squared errors of the vanilla and calibrated noisy-label class means.

    Each trial draws fresh data, flips labels, and estimates every class
    mean from its noisy members. Trials use independent child streams.
    """
    if exp.trials < 2:
        raise ValueError("need at least two trials")
    model = exp.model
    K, m = model.num_classes, model.dim
    T = assumption_transition(model.counts, exp.eta)
    donors = exp.donors
    vanilla = np.empty((exp.trials, K))
    calibrated = np.empty((exp.trials, K))
    estimates = np.empty((exp.trials, K, m))
    for t, child in enumerate(rng.spawn(exp.trials)):
        data = synth_gaussian(model, child)
        noisy = flip_labels(data.labels, T, child)
        sizes = np.bincount(noisy, minlength=K)
        if np.any(sizes == 0):
            raise ValueError(f"trial {t}: a class has no noisy members")
        onehot = np.zeros((len(noisy), K))
        onehot[np.arange(len(noisy)), noisy] = 1.0
        means = (onehot.T @ data.vectors) / sizes[:, None]
        estimates[t] = means
        vanilla[t] = np.sum((means - model.means) ** 2, axis=1)
        calibrated[t] = vanilla[t]
        for k, ds in donors.items():
            if exp.estimator == "uniform":
                cal = uniform_calibrated_mean(means, ds, k, exp.tau_calib)
            else:
                stats = [
                    ClassStats(j, int(sizes[j]), means[j], np.zeros((m, m)))
                    for j in range(K)
                ]
                w, _ = donor_weights(stats, sizes, ds, k)
                cal = exp.gamma * (w @ means[ds]) + (1 - exp.gamma) * means[k]
            calibrated[t, k] = np.sum((cal - model.means[k]) ** 2)
    return MeanErrorResult(vanilla, calibrated, estimates, exp.tail_classes)


def make_theory_model(
    m: int,
    n_tail: int,
    n_head: int,
    n_head_classes: int = 2,
    n_tail_classes: int = 2,
    separation: float = 1.0,
    sigma: float = 1.0,
) -> GroundTruthModel:
    """Heads first, then tails; class i sits at ``separation * e_(i mod m)``,
    with the sign flipped for every wrap-around, and covariance ``sigma^2 I``.
    """
    K = n_head_classes + n_tail_classes
    means = np.zeros((K, m))
    for i in range(K):
        means[i, i % m] = separation * (-1.0) ** (i // m)
    counts = [n_head] * n_head_classes + [n_tail] * n_tail_classes
    return GroundTruthModel(means, sigma**2 * np.eye(m), counts)


@dataclass(frozen=True)
class ScalingGrid:
    etas: tuple = (0.0, 0.1, 0.2, 0.3)
    n_tails: tuple = (50, 100, 200, 400)
    ms: tuple = (8,)
    rho: float = 10.0
    n_head_classes: int = 2
    n_tail_classes: int = 2
    separation: float = 1.0
    sigma: float = 1.0
    trials: int = 200


@dataclass(eq=False)
class ScalingReport:
    cells: list[dict]
    coefficients: dict[str, float]
    r2: float

    @property
    def signs_ok(self) -> bool:
        return self.coefficients["eta2"] > 0 and self.coefficients["m_over_n"] > 0

    def to_dict(self) -> dict:
        return {
            "cells": self.cells,
            "coefficients": self.coefficients,
            "r2": self.r2,
            "signs_ok": self.signs_ok,
        }


def bound_scaling_check(grid: ScalingGrid, rng: np.random.Generator) -> ScalingReport:
    """Least-squares fit of tail-class vanilla MSE to ``a + b eta^2 + c m / n_tail``."""
    if len(grid.etas) < 4 or len(grid.n_tails) < 4:
        raise ValueError("need at least 4 grid points on the eta and n_tail axes")
    cells = []
    combos = [(m, n, e) for m in grid.ms for n in grid.n_tails for e in grid.etas]
    for (m, n_tail, eta), child in zip(combos, rng.spawn(len(combos))):
        model = make_theory_model(
            m,
            n_tail,
            int(round(grid.rho * n_tail)),
            grid.n_head_classes,
            grid.n_tail_classes,
            grid.separation,
            grid.sigma,
        )
        heads = list(range(grid.n_head_classes))
        exp = TheoryExperiment(model, eta, q=1, trials=grid.trials, head_classes=heads)
        res = mean_error_mc(exp, child)
        tails = exp.tail_classes
        per_trial = res.vanilla_sq[:, tails].mean(axis=1)
        cells.append(
            {
                "m": m,
                "n_tail": n_tail,
                "eta": eta,
                "vanilla_mse": float(per_trial.mean()),
                "vanilla_se": float(per_trial.std(ddof=1) / np.sqrt(len(per_trial))),
            }
        )
    y = np.array([c["vanilla_mse"] for c in cells])
    X = np.column_stack(
        [
            np.ones(len(cells)),
            [c["eta"] ** 2 for c in cells],
            [c["m"] / c["n_tail"] for c in cells],
        ]
    )
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    names = ("intercept", "eta2", "m_over_n")
    return ScalingReport(cells, {k: float(v) for k, v in zip(names, coef)}, r2)


def _closed_form_check(cfg: dict, seed: int) -> dict:
    model = GroundTruthModel(
        np.asarray(cfg["means"], dtype=np.float64),
        cfg.get("sigma", 1.0) ** 2 * np.eye(len(cfg["means"][0])),
        cfg["counts"],
    )
    rows = []
    for eta in cfg["etas"]:
        exp = TheoryExperiment(model, eta, q=1, trials=cfg["trials"], head_classes=[0])
        res = mean_error_mc(exp, seeded_rng(seed, f"theory/closed-form/{eta}"))
        est, se = res.mean_estimate()
        for k in range(model.num_classes):
            expected = expected_noisy_mean(model, eta, k)
            z = np.abs(est[k] - expected) / se[k]
            rows.append(
                {
                    "eta": eta,
                    "class": k,
                    "expected": expected.tolist(),
                    "mc_mean": est[k].tolist(),
                    "mc_se": se[k].tolist(),
                    "max_z": float(z.max()),
                    "pass": bool(np.all(z <= 3.0)),
                }
            )
    return {"rows": rows, "pass": all(r["pass"] for r in rows)}


def _regime_check(cfg: dict, seed: int) -> dict:
    m, q = cfg.get("m", 8), cfg.get("q", 5)
    K = q + 1
    means = np.zeros((K, m))
    counts = [cfg.get("n_head", 2000)] * q + [cfg.get("n_tail", 20)]
    model = GroundTruthModel(means, cfg.get("sigma", 1.0) ** 2 * np.eye(m), counts)
    exp = TheoryExperiment(
        model,
        cfg.get("eta", 0.2),
        q=q,
        tau_calib=cfg.get("tau", 1.0),
        trials=cfg.get("trials", 500),
        head_classes=list(range(q)),
    )
    res = mean_error_mc(exp, seeded_rng(seed, "theory/regime"))
    k = q
    wins = float(np.mean(res.calibrated_sq[:, k] < res.vanilla_sq[:, k]))
    v, vse = res.vanilla()
    c, cse = res.calibrated()
    return {
        "delta_q": exp.delta_q,
        "win_fraction": wins,
        "vanilla_mse": float(v[k]),
        "vanilla_se": float(vse[k]),
        "calibrated_mse": float(c[k]),
        "calibrated_se": float(cse[k]),
        "pass": wins >= cfg.get("min_win_fraction", 0.95),
    }


DEFAULT_THEORY_CONFIG = {
    "seed": 0,
    "closed_form": {
        "means": [[1.0, 0.0], [-0.5, 1.0], [0.0, -1.0]],
        "counts": [2000, 1000, 500],
        "etas": [0.1, 0.3],
        "trials": 2000,
    },
    "scaling": {},
    "regime": {"n_tail": 20, "n_head": 2000, "q": 5, "tau": 1.0, "trials": 500},
}


def verify_theory(config: dict | None = None) -> dict:
    """Run the closed-form, scaling and calibration-regime checks.

    ``config`` overrides sections of ``DEFAULT_THEORY_CONFIG``; the scaling
    section maps onto :class:`ScalingGrid` fields.
    """
    cfg = {k: (dict(v) if isinstance(v, dict) else v) for k, v in DEFAULT_THEORY_CONFIG.items()}
    for key, value in (config or {}).items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    seed = int(cfg["seed"])
    grid = ScalingGrid(**{k: tuple(v) if isinstance(v, list) else v for k, v in cfg["scaling"].items()})
    scaling = bound_scaling_check(grid, seeded_rng(seed, "theory/scaling"))
    scaling_out = scaling.to_dict()
    scaling_out["pass"] = bool(scaling.r2 >= 0.95 and scaling.signs_ok)
    report = {
        "seed": seed,
        "closed_form": _closed_form_check(cfg["closed_form"], seed),
        "scaling": scaling_out,
        "regime": _regime_check(cfg["regime"], seed),
    }
    report["pass"] = all(report[s]["pass"] for s in ("closed_form", "scaling", "regime"))
    return report
