"""Test-error peak versus model capacity on a small noisy-label training set.

Each width trains full-batch until it (near-)interpolates its noisy labels or
the step budget runs out; there is deliberately no early stopping, which would
erase the capacity-driven peak.  The detected peak is the interior width whose
mean test error exceeds both neighbors.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from ..autodiff import Tape, Tensor, grad
from ..datagen import Dataset
from ..errors import ConfigError
from ..models import ModelSpec, forward, init_model, param_count
from ..rng import RngStream
from ..training import AdamState, TrainConfig, adam_step, batch_loss, corrupt_labels, evaluate, sgd_step
from .common import ExperimentResult, parallel_map, timer, trial_seed

DEFAULT_WIDTHS = (2, 4, 6, 8, 10, 14, 20, 28, 40, 78, 120, 200, 400)

# interpolation is declared once classification error is zero and the loss is
# below these floors at two consecutive checks
_LOSS_FLOOR = {"nll": 1e-3, "mse": 2e-4}


def _train_to_interpolation(
    model, x: np.ndarray, y: np.ndarray, cfg: TrainConfig, check_every: int = 500
) -> dict:
    state = AdamState()
    n = len(x)
    floor = _LOSS_FLOOR[cfg.loss]
    consecutive = 0
    step = 0
    while step < cfg.max_steps:
        tape = Tape()
        attached = {k: v.watch(tape) for k, v in model.params.items()}
        step_model = dataclasses.replace(model, params=attached)
        loss = batch_loss(forward(step_model, Tensor(x)), y, cfg.loss)
        grads = {k: g.data for k, g in zip(attached, grad(loss, list(attached.values())))}
        if cfg.optimizer == "adam":
            adam_step(model.params, grads, state, cfg.learning_rate, cfg.betas, cfg.eps)
        else:
            sgd_step(model.params, grads, cfg.learning_rate)
        step += 1
        if step % check_every == 0 or step == cfg.max_steps:
            metrics = evaluate(model, x, y, cfg.loss)
            if metrics["accuracy"] == 1.0 and metrics["loss"] < floor:
                consecutive += 1
                if consecutive >= 2:
                    break
            else:
                consecutive = 0
    final = evaluate(model, x, y, cfg.loss)
    return {
        "steps_run": step,
        "train_loss": final["loss"],
        "train_error": 1.0 - final["accuracy"],
        "interpolated": bool(final["accuracy"] == 1.0 and final["loss"] < floor),
    }


def _run_trial(task: dict) -> dict:
    spec = ModelSpec.from_dict(task["spec"])
    cfg = TrainConfig.from_dict(task["train_cfg"])
    model = init_model(spec)
    stats = _train_to_interpolation(model, task["x"], task["y_noisy"], cfg)
    test = evaluate(model, task["x_test"], task["y_test"], cfg.loss)
    return {
        "width": task["width"],
        "seed": task["seed"],
        "params": param_count(spec),
        "test_error": 1.0 - test["accuracy"],
        "test_loss": test["loss"],
        **stats,
    }


def detect_peak(widths: list[int], mean_test_error: dict[int, float], params: dict[int, int]):
    """Most prominent interior local maximum of mean test error, if any.

    Prominence is the smaller rise over the two neighbors, so a genuine hump
    beats equal-height wiggles on a sloping plateau.
    """
    best, best_prominence = None, 0.0
    for i in range(1, len(widths) - 1):
        w_prev, w, w_next = widths[i - 1], widths[i], widths[i + 1]
        e = mean_test_error[w]
        prominence = min(e - mean_test_error[w_prev], e - mean_test_error[w_next])
        if prominence > 0 and (best is None or prominence > best_prominence):
            best, best_prominence = w, prominence
    if best is None:
        return None
    return {
        "width": best,
        "params": params[best],
        "test_error": mean_test_error[best],
        "prominence": best_prominence,
    }


def run_double_descent(
    dataset: Dataset,
    widths: tuple[int, ...] = DEFAULT_WIDTHS,
    loss: str = "nll",
    n_seeds: int = 3,
    n_train: int = 500,
    label_noise_frac: float = 0.15,
    max_steps: int = 50_000,
    learning_rate: float = 1e-2,
    seed: int = 0,
    jobs: int = 1,
) -> ExperimentResult:
    """Sweep one-hidden-layer widths on a label-noised subsample of the data."""
    if list(widths) != sorted(set(widths)):
        raise ConfigError("widths must be strictly increasing")
    if n_train > len(dataset.x_train):
        raise ConfigError(f"n_train {n_train} exceeds available {len(dataset.x_train)}")

    x = dataset.x_train[:n_train]
    y_clean = dataset.y_train[:n_train]
    input_len = x.shape[1]

    tasks = []
    for s in range(n_seeds):
        noise_stream = RngStream(trial_seed(seed, s), 99)
        y_noisy = corrupt_labels(y_clean, label_noise_frac, noise_stream)
        for j, width in enumerate(widths):
            root = trial_seed(seed, 1000 + s * len(widths) + j)
            tasks.append(
                {
                    "width": width,
                    "seed": root,
                    "x": x,
                    "y_noisy": y_noisy,
                    "x_test": dataset.x_test,
                    "y_test": dataset.y_test,
                    "spec": dataclasses.asdict(
                        ModelSpec("mlp", input_len, 10, (width,), init_seed=root)
                    ),
                    "train_cfg": TrainConfig(
                        learning_rate=learning_rate,
                        batch_size=n_train,
                        max_steps=max_steps,
                        loss=loss,
                        seed=root,
                    ).to_dict(),
                }
            )

    t0 = timer()
    trials = parallel_map(_run_trial, tasks, jobs)

    mean_test_error = {
        w: float(np.mean([t["test_error"] for t in trials if t["width"] == w])) for w in widths
    }
    mean_train_error = {
        w: float(np.mean([t["train_error"] for t in trials if t["width"] == w])) for w in widths
    }
    params = {w: param_count(ModelSpec("mlp", input_len, 10, (w,))) for w in widths}
    largest_interpolated = all(t["interpolated"] for t in trials if t["width"] == widths[-1])
    peak = detect_peak(list(widths), mean_test_error, params)

    return ExperimentResult(
        name=f"double_descent_{loss}",
        config={
            "widths": list(widths),
            "loss": loss,
            "n_seeds": n_seeds,
            "n_train": n_train,
            "label_noise_frac": label_noise_frac,
            "max_steps": max_steps,
            "learning_rate": learning_rate,
            "seed": seed,
        },
        trials=trials,
        aggregates={
            "mean_test_error": {str(w): mean_test_error[w] for w in widths},
            "mean_train_error": {str(w): mean_train_error[w] for w in widths},
            "params": {str(w): params[w] for w in widths},
            "peak": peak,
            "no_interpolation_warning": not largest_interpolated,
        },
        wall_time=timer() - t0,
    )
