"""Losses, optimizers, and the deterministic mini-batch training loop.

All randomness (label noise, batch order) flows from ``TrainConfig.seed``
through dedicated streams, so a training run is a pure function of
(model, data, config) and repeats bit-for-bit.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .datagen import NUM_CLASSES, Dataset
from .errors import ConfigError, DataError
from .models import Model, apply_mask, forward, replace
from .rng import RngStream

# sub-stream ids hung off TrainConfig.seed
_NOISE_STREAM = 1
_EPOCH_STREAM_BASE = 1000


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 100
    max_steps: int = 12000
    eval_every: int = 200
    early_stop_patience: int = 10
    loss: str = "nll"
    label_noise_frac: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not (0 <= self.betas[0] < 1 and 0 <= self.betas[1] < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.loss not in ("nll", "mse"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if not 0 <= self.label_noise_frac <= 1:
            raise ConfigError("label_noise_frac must lie in [0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - fields
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


@dataclass
class EvalRecord:
    step: int
    train_loss: float
    train_acc: float
    val_acc: float
    test_acc: float


@dataclass
class TrainResult:
    best_model: Model
    curves: list[EvalRecord]
    stopped_at: int
    final_model: Model | None = None

    @property
    def final_test_acc(self) -> float:
        return self.curves[-1].test_acc

    @property
    def best_test_acc(self) -> float:
        """Test accuracy at the best-validation checkpoint."""
        best = max(range(len(self.curves)), key=lambda i: (self.curves[i].val_acc, -i))
        return self.curves[best].test_acc


def one_hot(labels: np.ndarray, num_classes: int = NUM_CLASSES) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"labels must lie in 0..{num_classes - 1}")
    return np.eye(num_classes)[labels]


def nll_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax logits."""
    hot = one_hot(labels, logits.shape[1])
    logp = ad.log_softmax(logits, axis=1)
    return ad.neg(ad.mean(ad.sum_(ad.mul(logp, Tensor(hot)), axis=1)))


def mse_loss(logits: Tensor, one_hot_labels: np.ndarray) -> Tensor:
    """Mean squared error against one-hot targets, averaged over batch and classes."""
    diff = ad.sub(logits, Tensor(one_hot_labels))
    return ad.mean(ad.mul(diff, diff))


def batch_loss(logits: Tensor, labels: np.ndarray, kind: str) -> Tensor:
    if kind == "nll":
        return nll_loss(logits, labels)
    return mse_loss(logits, one_hot(labels, logits.shape[1]))


# ----------------------------------------------------------------------------
# optimizers


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    masks: dict[str, np.ndarray] | None = None,
) -> AdamState:
    """Standard bias-corrected Adam update, applied in place."""
    b1, b2 = betas
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if weight_decay:
            g = g + weight_decay * p.data
        if masks is not None and name in masks:
            g = g * masks[name]
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m += (1 - b1) * (g - m)
        v += (1 - b2) * (g * g - v)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        if masks is not None and name in masks:
            p.data *= masks[name]
    return state


def sgd_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    lr: float,
    weight_decay: float = 0.0,
    masks: dict[str, np.ndarray] | None = None,
) -> None:
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if weight_decay:
            g = g + weight_decay * p.data
        if masks is not None and name in masks:
            g = g * masks[name]
        p.data -= lr * g
        if masks is not None and name in masks:
            p.data *= masks[name]


# ----------------------------------------------------------------------------
# label corruption and evaluation


def corrupt_labels(y: np.ndarray, frac: float, rng: RngStream) -> np.ndarray:
    """Replace an exact ``frac`` fraction of labels with uniformly different ones."""
    if not 0 <= frac <= 1:
        raise DataError(f"frac must lie in [0, 1], got {frac}")
    y = np.asarray(y, dtype=np.int64).copy()
    k = int(round(frac * len(y)))
    if k == 0:
        return y
    idx = np.sort(rng.choice(len(y), k, replace=False))
    offsets = rng.integers(1, NUM_CLASSES, size=k)
    y[idx] = (y[idx] + offsets) % NUM_CLASSES
    return y


def evaluate(model: Model, x: np.ndarray, y: np.ndarray, loss_kind: str = "nll") -> dict:
    """Mean loss and accuracy; argmax ties break toward the lower class index."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    total_loss = 0.0
    correct = 0
    with ad.no_grad():
        for start in range(0, len(x), 1000):
            xb, yb = x[start : start + 1000], y[start : start + 1000]
            logits = forward(model, Tensor(xb))
            total_loss += float(batch_loss(logits, yb, loss_kind).data) * len(xb)
            correct += int(np.sum(np.argmax(logits.data, axis=1) == yb))
    n = len(x)
    return {"loss": total_loss / n, "accuracy": correct / n}


# ----------------------------------------------------------------------------
# the training loop


def _attached_model(model: Model, tape: Tape) -> tuple[Model, dict[str, Tensor]]:
    attached = {k: v.watch(tape) for k, v in model.params.items()}
    return replace(model, params=attached), attached


def train(model: Model, data: Dataset, cfg: TrainConfig, val_count: int | None = None) -> TrainResult:
    """Train with shuffled mini-batches, evaluating every ``eval_every`` steps.

    The last ``val_count`` training rows are held out (label cycling keeps the
    holdout stratified) and the best-validation checkpoint is returned.  The
    default holds out 500 rows, shrinking to a fifth of small training sets;
    ``val_count=0`` means no holdout and no early stopping.
    """
    cfg.validate()
    if len(data.x_train) == 0:
        raise DataError("empty training set")
    if data.x_train.shape[1] != model.spec.input_len:
        raise DataError(
            f"model expects width {model.spec.input_len}, data rows have {data.x_train.shape[1]}"
        )
    if val_count is None:
        val_count = min(500, len(data.x_train) // 5)
    if val_count >= len(data.x_train):
        raise DataError(f"val_count {val_count} leaves no training rows")

    n_fit = len(data.x_train) - val_count
    x_fit, y_fit = data.x_train[:n_fit], data.y_train[:n_fit].copy()
    x_val, y_val = data.x_train[n_fit:], data.y_train[n_fit:]
    if cfg.label_noise_frac > 0:
        y_fit = corrupt_labels(y_fit, cfg.label_noise_frac, RngStream(cfg.seed, _NOISE_STREAM))

    model = apply_mask(model.clone())
    masks = model.masks
    state = AdamState()

    def record(step: int) -> EvalRecord:
        fit_metrics = evaluate(model, x_fit, y_fit, cfg.loss)
        val_acc = evaluate(model, x_val, y_val, cfg.loss)["accuracy"] if val_count else float("nan")
        test_acc = evaluate(model, data.x_test, data.y_test, cfg.loss)["accuracy"] if len(data.x_test) else float("nan")
        return EvalRecord(step, fit_metrics["loss"], fit_metrics["accuracy"], val_acc, test_acc)

    curves = [record(0)]
    best_val = curves[0].val_acc
    best_model = model.clone()
    evals_since_best = 0

    step = 0
    epoch = 0
    order = None
    cursor = 0
    while step < cfg.max_steps:
        if order is None or cursor >= n_fit:
            order = RngStream(cfg.seed, _EPOCH_STREAM_BASE + epoch).permutation(n_fit)
            epoch += 1
            cursor = 0
        batch_idx = order[cursor : cursor + cfg.batch_size]
        cursor += cfg.batch_size

        tape = Tape()
        step_model, attached = _attached_model(model, tape)
        logits = forward(step_model, Tensor(x_fit[batch_idx]))
        loss = batch_loss(logits, y_fit[batch_idx], cfg.loss)
        grads_list = ad.grad(loss, list(attached.values()))
        grads = {k: g.data for k, g in zip(attached, grads_list)}
        if cfg.optimizer == "adam":
            adam_step(model.params, grads, state, cfg.learning_rate, cfg.betas, cfg.eps, cfg.weight_decay, masks)
        else:
            sgd_step(model.params, grads, cfg.learning_rate, cfg.weight_decay, masks)
        step += 1

        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            curves.append(record(step))
            if val_count:
                if curves[-1].val_acc > best_val:
                    best_val = curves[-1].val_acc
                    best_model = model.clone()
                    evals_since_best = 0
                else:
                    evals_since_best += 1
                    if evals_since_best >= cfg.early_stop_patience:
                        break

    if not val_count:
        best_model = model.clone()
    return TrainResult(best_model=best_model, curves=curves, stopped_at=step, final_model=model)


def export_curves_csv(result: TrainResult, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "train_loss", "train_acc", "val_acc", "test_acc"])
        for rec in result.curves:
            writer.writerow([rec.step, rec.train_loss, rec.train_acc, rec.val_acc, rec.test_acc])
