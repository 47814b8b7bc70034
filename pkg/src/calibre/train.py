"""Linear probe training with manifold mixup and an anchoring regulariser.

The probe is an affine adapter ``g(z) = W z + b`` (identity at init) followed
by a linear head ``h(z) = V z + c``. Real embeddings go through ``g`` and are
anchored to their ingested values by ``beta * ||g(z0) - z0||^2``. Synthetic
points drawn from the calibrated Gaussians already live in representation
space, so they are fed to the head directly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .core import GroundTruthModel, LabeledEmbeddings

__all__ = [
    "ProbeModel",
    "TrainConfig",
    "mixup_pair",
    "loss_total",
    "train_probe",
    "fisher_scores",
    "fisher_classify",
    "contrastive_loss",
    "TrainingDiverged",
]

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(eq=False)
class ProbeModel:
    adapter_weight: np.ndarray
    adapter_bias: np.ndarray
    head_weight: np.ndarray
    head_bias: np.ndarray
    beta: float = 0.3
    mixup_alpha: float = 1.0
    use_adapter: bool = True

    @classmethod
    def initial(
        cls,
        dim: int,
        num_classes: int,
        beta: float = 0.3,
        mixup_alpha: float = 1.0,
        use_adapter: bool = True,
    ) -> "ProbeModel":
        return cls(
            np.eye(dim),
            np.zeros(dim),
            np.zeros((num_classes, dim)),
            np.zeros(num_classes),
            beta,
            mixup_alpha,
            use_adapter,
        )

    @property
    def dim(self) -> int:
        return self.adapter_weight.shape[0]

    @property
    def num_classes(self) -> int:
        return self.head_weight.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {
            "adapter_weight": self.adapter_weight,
            "adapter_bias": self.adapter_bias,
            "head_weight": self.head_weight,
            "head_bias": self.head_bias,
        }

    def copy(self) -> "ProbeModel":
        return replace(self, **{k: v.copy() for k, v in self.params().items()})

    def represent(self, z: np.ndarray) -> np.ndarray:
        if not self.use_adapter:
            return np.asarray(z, dtype=np.float64)
        return z @ self.adapter_weight.T + self.adapter_bias

    def logits(self, z: np.ndarray) -> np.ndarray:
        return self.represent(z) @ self.head_weight.T + self.head_bias

    def predict(self, z: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(np.atleast_2d(z)), axis=1)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "num_classes": self.num_classes,
            "beta": self.beta,
            "mixup_alpha": self.mixup_alpha,
            "use_adapter": self.use_adapter,
            **{k: v.tolist() for k, v in self.params().items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProbeModel":
        return cls(
            np.asarray(d["adapter_weight"], dtype=np.float64),
            np.asarray(d["adapter_bias"], dtype=np.float64),
            np.asarray(d["head_weight"], dtype=np.float64),
            np.asarray(d["head_bias"], dtype=np.float64),
            float(d.get("beta", 0.3)),
            float(d.get("mixup_alpha", 1.0)),
            bool(d.get("use_adapter", True)),
        )


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser and objective settings for :func:`train_probe`.

    ``lr`` is decayed by 10x at ``decay_at`` fractions of ``epochs``.
    ``train_adapter=False`` freezes the adapter at identity; ``use_adapter``
    False removes it altogether. ``anchor_step_cap`` limits the adapter's
    step size to ``1 / (2 beta L)``, with L the largest eigenvalue of the
    anchors' second-moment matrix, so that large ``beta`` stays stable.
    """

    epochs: int = 100
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 128
    beta: float = 0.3
    mixup: bool = True
    mixup_alpha: float = 1.0
    mixup_synthetic: bool = False
    use_adapter: bool = True
    train_adapter: bool = True
    decay_at: tuple = (0.5, 0.75)
    anchor_step_cap: bool = True
    adapter_lr: float | None = 0.001

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("need lr > 0 and momentum in [0, 1)")
        if self.beta < 0 or self.mixup_alpha <= 0:
            raise ValueError("need beta >= 0 and mixup_alpha > 0")
        object.__setattr__(self, "decay_at", tuple(self.decay_at))


def mixup_pair(x_i, y_i, x_j, y_j, lam: float):
    """Convex combination ``lam * (x_i, y_i) + (1 - lam) * (x_j, y_j)``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    x = lam * np.asarray(x_i, dtype=np.float64) + (1.0 - lam) * np.asarray(x_j, dtype=np.float64)
    y = lam * np.asarray(y_i, dtype=np.float64) + (1.0 - lam) * np.asarray(y_j, dtype=np.float64)
    return x, y


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_total(
    model: ProbeModel,
    inputs: np.ndarray,
    targets: np.ndarray,
    anchors: np.ndarray | None = None,
    direct: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Batch-mean of soft-target cross-entropy plus ``beta * ||g(a) - a||^2``.

    ``targets`` are rows on the probability simplex. ``anchors`` default to
    ``inputs``. Rows flagged in ``direct`` skip the adapter and carry no
    anchoring term. Returns the loss and gradients keyed like
    :meth:`ProbeModel.params`.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    B = x.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    a = x if anchors is None else np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    via = np.ones(B, dtype=bool) if direct is None else ~np.asarray(direct, dtype=bool)
    if not model.use_adapter:
        via = np.zeros(B, dtype=bool)

    W, b, V, c = model.adapter_weight, model.adapter_bias, model.head_weight, model.head_bias
    z = x.copy()
    z[via] = x[via] @ W.T + b
    logits = z @ V.T + c
    logp = _log_softmax(logits)
    ce = -(t * logp).sum(axis=1)

    r = np.zeros_like(a)
    r[via] = a[via] @ W.T + b - a[via]
    reg = (r * r).sum(axis=1)
    loss = float((ce + model.beta * reg).mean())
    if not math.isfinite(loss):
        raise TrainingDiverged("non-finite loss in forward pass")

    g_logits = (np.exp(logp) * t.sum(axis=1, keepdims=True) - t) / B
    grads = {
        "head_weight": g_logits.T @ z,
        "head_bias": g_logits.sum(axis=0),
    }
    g_z = g_logits @ V
    g_z[~via] = 0.0
    g_r = (2.0 * model.beta / B) * r
    grads["adapter_weight"] = g_z.T @ x + g_r.T @ a
    grads["adapter_bias"] = g_z.sum(axis=0) + g_r.sum(axis=0)
    if not model.use_adapter:
        grads["adapter_weight"][:] = 0.0
        grads["adapter_bias"][:] = 0.0
    return loss, grads


def _one_hot(labels: np.ndarray, K: int) -> np.ndarray:
    out = np.zeros((len(labels), K))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _mix(x, t, a, rows, lam, rng):
    if len(rows) < 2:
        return
    perm = rows[rng.permutation(len(rows))]
    x[rows], t[rows] = mixup_pair(x[rows], t[rows], x[perm], t[perm], lam)
    a[rows] = lam * a[rows] + (1.0 - lam) * a[perm]


def train_probe(
    data: LabeledEmbeddings,
    config: TrainConfig,
    rng: np.random.Generator,
    synthetic_mask: np.ndarray | None = None,
    anchors: np.ndarray | None = None,
    init: ProbeModel | None = None,
) -> tuple[ProbeModel, list[float]]:
    """Minibatch SGD with momentum on :func:`loss_total`.

    Rows with ``synthetic_mask`` True bypass the adapter. ``anchors`` gives
    the ingested representation of each row (defaults to the row itself).
    Mixup pairs real rows with real rows; synthetic rows are mixed among
    themselves only when ``config.mixup_synthetic`` is set. One Beta draw of
    lambda is shared per minibatch.

    Returns the trained model and the per-epoch mean training loss.
    """
    n, m, K = len(data), data.dim, data.num_classes
    syn = np.zeros(n, dtype=bool) if synthetic_mask is None else np.asarray(synthetic_mask, bool)
    if syn.shape != (n,):
        raise ValueError("synthetic_mask must have one entry per row")
    A = data.vectors if anchors is None else np.asarray(anchors, dtype=np.float64)
    X, T = data.vectors, _one_hot(data.labels, K)

    model = init.copy() if init is not None else ProbeModel.initial(m, K)
    model.beta = config.beta
    model.mixup_alpha = config.mixup_alpha
    model.use_adapter = config.use_adapter

    lr_adapter = config.lr if config.adapter_lr is None else config.adapter_lr
    if config.anchor_step_cap and config.beta > 0 and (~syn).any():
        real = np.hstack([A[~syn], np.ones((int((~syn).sum()), 1))])
        L = float(np.linalg.eigvalsh(real.T @ real / len(real)).max())
        lr_adapter = min(lr_adapter, 1.0 / (2.0 * config.beta * L))
    update_adapter = config.use_adapter and config.train_adapter

    velocity = {k: np.zeros_like(v) for k, v in model.params().items()}
    milestones = sorted({int(round(f * config.epochs)) for f in config.decay_at})
    history = []
    for epoch in range(config.epochs):
        scale = 0.1 ** sum(epoch >= ms for ms in milestones)
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            x, t, a, d = X[idx].copy(), T[idx].copy(), A[idx].copy(), syn[idx]
            if config.mixup:
                lam = float(rng.beta(config.mixup_alpha, config.mixup_alpha))
                _mix(x, t, a, np.flatnonzero(~d), lam, rng)
                if config.mixup_synthetic:
                    _mix(x, t, a, np.flatnonzero(d), lam, rng)
            try:
                loss, grads = loss_total(model, x, t, a, d)
            except TrainingDiverged as exc:
                raise TrainingDiverged(
                    f"loss diverged at epoch {epoch}, batch offset {start} "
                    f"(lr={config.lr * scale:g}, beta={config.beta:g})"
                ) from exc
            for name, param in model.params().items():
                if name.startswith("adapter"):
                    if not update_adapter:
                        continue
                    step = lr_adapter * scale
                else:
                    step = config.lr * scale
                v = velocity[name]
                v *= config.momentum
                v += grads[name]
                param -= step * v
            total += loss * len(idx)
            seen += len(idx)
        epoch_loss = total / seen
        if not math.isfinite(epoch_loss):
            raise TrainingDiverged(f"non-finite mean loss at epoch {epoch}")
        history.append(epoch_loss)
        log.debug("epoch %d loss %.6f", epoch, epoch_loss)
    return model, history


def fisher_scores(z: np.ndarray, model: GroundTruthModel) -> np.ndarray:
    """Discriminant ``log(n_k/n) + mu_k' S^-1 z - mu_k' S^-1 mu_k / 2`` per class."""
    S = model.shared_covariance
    m = S.shape[0]
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        S = S + 1e-8 * max(float(np.trace(S)), 1e-300) / m * np.eye(m)
    P = np.linalg.solve(S, model.means.T)  # (m, K) = S^-1 mu_k
    counts = model.counts.astype(np.float64)
    prior = np.log(counts / counts.sum())
    const = prior - 0.5 * np.einsum("km,mk->k", model.means, P)
    return np.atleast_2d(z) @ P + const


def fisher_classify(z: np.ndarray, model: GroundTruthModel):
    """Bayes-optimal class under the shared-covariance Gaussian model.

    Accepts one vector (returns an int) or a batch of rows (returns an
    array). Ties go to the lower class id.
    """
    z = np.asarray(z, dtype=np.float64)
    pred = np.argmax(fisher_scores(z, model), axis=1)
    return int(pred[0]) if z.ndim == 1 else pred


def contrastive_loss(query, positive_key, queue, tau: float) -> float:
    """InfoNCE score ``-log(exp(q.k+/tau) / sum_{k in queue} exp(q.k/tau))``.

    If ``positive_key`` is not a row of ``queue`` it is added to the
    denominator, so the denominator always includes the positive term.
    """
    if not tau > 0:
        raise ValueError("temperature must be positive")
    q = np.asarray(query, dtype=np.float64)
    pos = np.asarray(positive_key, dtype=np.float64)
    keys = np.atleast_2d(np.asarray(queue, dtype=np.float64))
    if keys.size == 0 or not np.any(np.all(keys == pos, axis=1)):
        keys = np.vstack([pos[None, :], keys]) if keys.size else pos[None, :]
    logits = keys @ q / tau
    top = logits.max()
    lse = top + math.log(float(np.exp(logits - top).sum()))
    return max(0.0, float(lse - pos @ q / tau))
