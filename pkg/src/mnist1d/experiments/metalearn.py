"""Bilevel optimization: learn a learning rate or an activation function by
differentiating through unrolled inner SGD training.

Inner updates stay on-tape (no in-place mutation), so the outer gradient flows
through every inner step.  Fresh inner models are drawn each outer step to
decorrelate the meta-gradient from any single initialization.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tape, Tensor, grad, leaf
from ..datagen import Dataset
from ..errors import ConfigError, UsageError
from ..models import Model, ModelSpec, apply_scalar_net, forward, init_model
from ..rng import RngStream, derive
from ..training import AdamState, adam_step, nll_loss
from .common import ExperimentResult, timer

MAX_INNER_HIDDEN = 50


def _check_inner_spec(spec: ModelSpec) -> None:
    if spec.kind != "mlp" or any(h > MAX_INNER_HIDDEN for h in spec.hidden_sizes):
        raise UsageError(
            f"unrolled inner training is restricted to MLPs with <= {MAX_INNER_HIDDEN} hidden units"
        )


def _attach_phi(phi: Model, tape: Tape) -> tuple[Model, dict[str, Tensor]]:
    attached = {k: v.watch(tape) for k, v in phi.params.items()}
    return dataclasses.replace(phi, params=attached), attached


def unrolled_inner_run(
    spec: ModelSpec,
    x: np.ndarray,
    y: np.ndarray,
    batch_size: int,
    lr,
    unroll: int,
    stream: RngStream,
    tape: Tape,
    phi: Model | None = None,
) -> tuple[Tensor, Tensor, list[float]]:
    """Run ``unroll`` on-tape SGD steps from a fresh init.

    Returns (mean-of-step-losses, loss after the final update on a fresh
    batch, recorded per-step loss values).  ``lr`` may be an attached tensor.
    """
    params = {k: v.watch(tape) for k, v in init_model(spec).params.items()}
    step_losses: list[Tensor] = []
    recorded: list[float] = []
    for _ in range(unroll):
        idx = stream.choice(len(x), batch_size, replace=False)
        model_k = Model(spec=spec, params=params, phi=phi)
        loss_k = nll_loss(forward(model_k, Tensor(x[idx])), y[idx])
        step_losses.append(loss_k)
        recorded.append(float(loss_k.data))
        grads = grad(loss_k, list(params.values()), create_graph=True)
        params = {
            name: ad.sub(p, ad.mul(lr, g)) for (name, p), g in zip(params.items(), grads)
        }
    idx = stream.choice(len(x), batch_size, replace=False)
    final_model = Model(spec=spec, params=params, phi=phi)
    final_loss = nll_loss(forward(final_model, Tensor(x[idx])), y[idx])
    recorded.append(float(final_loss.data))
    mean_loss = ad.mul(
        ad.sum_(ad.concat([ad.reshape(l, (1,)) for l in step_losses])), 1.0 / unroll
    )
    return mean_loss, final_loss, recorded


# ----------------------------------------------------------------------------
# the closed-form probe problem


def quadratic_meta_gradient(lr_value: float, lam: float = 2.0, w0: float = 1.0, unroll: int = 20) -> float:
    """Meta-gradient of the final loss of unrolled GD on f(w) = lam/2 * w^2."""
    tape = Tape()
    lr = leaf(lr_value, tape)
    w = leaf(w0, tape)
    for _ in range(unroll):
        loss = ad.mul(ad.mul(w, w), 0.5 * lam)
        (gw,) = grad(loss, [w], create_graph=True)
        w = ad.sub(w, ad.mul(lr, gw))
    final_loss = ad.mul(ad.mul(w, w), 0.5 * lam)
    (g_lr,) = grad(final_loss, [lr])
    return float(g_lr.data)


def quadratic_meta_gradient_closed_form(
    lr_value: float, lam: float = 2.0, w0: float = 1.0, unroll: int = 20
) -> float:
    shrink = 1.0 - lr_value * lam
    return 0.5 * lam * w0**2 * 2 * unroll * shrink ** (2 * unroll - 1) * (-lam)


# ----------------------------------------------------------------------------
# learning-rate metalearning


def metalearn_lr(
    dataset: Dataset,
    spec: ModelSpec | None = None,
    init_lr: float = 0.05,
    inner_batch: int = 100,
    unroll: int = 100,
    outer_steps: int = 100,
    outer_lr: float = 0.05,
    n_eval_seeds: int = 3,
    seed: int = 0,
) -> ExperimentResult:
    """Optimize log-learning-rate by differentiating the unrolled inner loss."""
    spec = spec or ModelSpec("mlp", dataset.x_train.shape[1], 10, (25,))
    _check_inner_spec(spec)
    x, y = dataset.x_train, dataset.y_train

    log_lr = {"log_lr": Tensor(np.log(init_lr))}
    state = AdamState()
    trajectory = [init_lr]
    aborted = None

    t0 = timer()
    for t in range(outer_steps):
        tape = Tape()
        log_lr_leaf = log_lr["log_lr"].watch(tape)
        lr_tensor = ad.exp(log_lr_leaf)
        stream = RngStream(seed, 10_000 + t)
        spec_t = dataclasses.replace(spec, init_seed=derive(seed, t))
        _, final_loss, _ = unrolled_inner_run(
            spec_t, x, y, inner_batch, lr_tensor, unroll, stream, tape
        )
        (g,) = grad(final_loss, [log_lr_leaf])
        if not np.all(np.isfinite(g.data)):
            aborted = {"outer_step": t, "reason": "non-finite meta-gradient", "lr": trajectory[-1]}
            break
        adam_step(log_lr, {"log_lr": g.data}, state, outer_lr)
        trajectory.append(float(np.exp(log_lr["log_lr"].data)))

    lr_star = trajectory[-1]

    def eval_final_loss(lr_value: float, eval_seed: int) -> float:
        tape = Tape()
        stream = RngStream(seed, 5_000_000 + eval_seed)
        spec_e = dataclasses.replace(spec, init_seed=derive(seed, 6_000_000 + eval_seed))
        _, final_loss, _ = unrolled_inner_run(
            spec_e, x, y, inner_batch, lr_value, unroll, stream, tape
        )
        return float(final_loss.data)

    brackets = {}
    for label, value in (("lr_star", lr_star), ("lr_tenth", lr_star / 10), ("lr_tenfold", lr_star * 10)):
        losses = [eval_final_loss(value, s) for s in range(n_eval_seeds)]
        brackets[label] = {"lr": value, "losses": losses, "mean": float(np.mean(losses))}

    return ExperimentResult(
        name="metalearn_lr",
        config={
            "spec": dataclasses.asdict(spec),
            "init_lr": init_lr,
            "inner_batch": inner_batch,
            "unroll": unroll,
            "outer_steps": outer_steps,
            "outer_lr": outer_lr,
            "n_eval_seeds": n_eval_seeds,
            "seed": seed,
        },
        trials=[{"outer_step": i, "lr": v} for i, v in enumerate(trajectory)],
        aggregates={"lr_star": lr_star, "brackets": brackets, "aborted": aborted},
        wall_time=timer() - t0,
    )


# ----------------------------------------------------------------------------
# activation metalearning


def elu_reference(x: np.ndarray, alpha: float = 1.0) -> np.ndarray:
    return np.where(x > 0, x, alpha * np.expm1(x))


def pretrain_activation(
    phi_spec: ModelSpec,
    tol: float = 0.01,
    grid: tuple[float, float, int] = (-4.0, 4.0, 401),
    lr: float = 1e-2,
    max_steps: int = 20_000,
    seed: int = 0,
) -> tuple[Model, float]:
    """Fit the scalar net to the ELU shape on a dense grid; returns (phi, max_err)."""
    phi = init_model(dataclasses.replace(phi_spec, init_seed=derive(seed, 31)))
    xs = np.linspace(*grid).reshape(-1, 1)
    ys = elu_reference(xs)
    state = AdamState()
    max_err = math.inf
    for step in range(max_steps):
        tape = Tape()
        attached_phi, attached = _attach_phi(phi, tape)
        out = apply_scalar_net(attached_phi, Tensor(xs))
        diff = ad.sub(out, Tensor(ys))
        loss = ad.mean(ad.mul(diff, diff))
        grads = {k: g.data for k, g in zip(attached, grad(loss, list(attached.values())))}
        adam_step(phi.params, grads, state, lr)
        if step % 200 == 199:
            with ad.no_grad():
                err = np.max(np.abs(apply_scalar_net(phi, Tensor(xs)).data - ys))
            max_err = float(err)
            if max_err < tol:
                break
    return phi, max_err


def sample_activation(phi: Model, grid: tuple[float, float, int] = (-4.0, 4.0, 401)) -> dict:
    xs = np.linspace(*grid)
    with ad.no_grad():
        ys = apply_scalar_net(phi, Tensor(xs.reshape(-1, 1))).data.reshape(-1)
    return {"x": xs.tolist(), "y": ys.tolist()}


def metalearn_activation(
    dataset: Dataset,
    spec: ModelSpec | None = None,
    phi_spec: ModelSpec | None = None,
    inner_lr: float = 0.5,
    inner_batch: int = 100,
    unroll: int = 50,
    outer_steps: int = 300,
    outer_lr: float = 2e-2,
    pretrain_tol: float = 0.01,
    n_eval_seeds: int = 3,
    seed: int = 0,
) -> ExperimentResult:
    """Learn an elementwise activation by meta-gradients through inner training."""
    phi_spec = phi_spec or ModelSpec("scalar_net", 1, 1, (16,))
    base_spec = spec or ModelSpec("mlp", dataset.x_train.shape[1], 10, (50,))
    _check_inner_spec(base_spec)
    x, y = dataset.x_train, dataset.y_train

    t0 = timer()
    phi, pretrain_err = pretrain_activation(phi_spec, tol=pretrain_tol, seed=seed)
    if pretrain_err >= 0.05:
        raise ConfigError(f"activation pretraining stalled at max error {pretrain_err:.4f}")
    curve_initial = sample_activation(phi)

    def eval_runs(activation: str, phi_model: Model | None) -> list[list[float]]:
        curves = []
        for s in range(n_eval_seeds):
            tape = Tape()
            run_spec = dataclasses.replace(
                base_spec,
                activation=activation,
                phi=phi_spec if activation == "learned" else None,
                init_seed=derive(seed, 6_000_000 + s),
            )
            attached_phi = None
            if phi_model is not None:
                attached_phi, _ = _attach_phi(phi_model, tape)
            stream = RngStream(seed, 5_000_000 + s)
            _, _, losses = unrolled_inner_run(
                run_spec, x, y, inner_batch, inner_lr, unroll, stream, tape, phi=attached_phi
            )
            curves.append(losses)
        return curves

    baseline_curves = {
        act: eval_runs(act, None) for act in ("relu", "elu", "tanh", "swish")
    }
    pretrain_curves = eval_runs("learned", phi)

    state = AdamState()
    outer_losses = []
    aborted = None
    learned_spec = dataclasses.replace(base_spec, activation="learned", phi=phi_spec)
    for t in range(outer_steps):
        tape = Tape()
        attached_phi, attached = _attach_phi(phi, tape)
        stream = RngStream(seed, 10_000 + t)
        spec_t = dataclasses.replace(learned_spec, init_seed=derive(seed, t))
        mean_loss, _, _ = unrolled_inner_run(
            spec_t, x, y, inner_batch, inner_lr, unroll, stream, tape, phi=attached_phi
        )
        grads_list = grad(mean_loss, list(attached.values()))
        if not all(np.all(np.isfinite(g.data)) for g in grads_list):
            aborted = {"outer_step": t, "reason": "non-finite meta-gradient"}
            break
        grads = {k: g.data for k, g in zip(attached, grads_list)}
        adam_step(phi.params, grads, state, outer_lr)
        outer_losses.append(float(mean_loss.data))

    learned_curves = eval_runs("learned", phi)

    def horizon_mean(curves: list[list[float]]) -> float:
        return float(np.mean([c[-1] for c in curves]))

    horizon = {act: horizon_mean(c) for act, c in baseline_curves.items()}
    horizon["learned"] = horizon_mean(learned_curves)

    return ExperimentResult(
        name="metalearn_activation",
        config={
            "spec": dataclasses.asdict(base_spec),
            "phi_spec": dataclasses.asdict(phi_spec),
            "inner_lr": inner_lr,
            "inner_batch": inner_batch,
            "unroll": unroll,
            "outer_steps": outer_steps,
            "outer_lr": outer_lr,
            "pretrain_tol": pretrain_tol,
            "n_eval_seeds": n_eval_seeds,
            "seed": seed,
        },
        trials=[{"outer_step": i, "mean_inner_loss": v} for i, v in enumerate(outer_losses)],
        aggregates={
            "pretrain_max_err": pretrain_err,
            "horizon_losses": horizon,
            "baseline_curves": {k: v for k, v in baseline_curves.items()},
            "pretrain_curves": pretrain_curves,
            "learned_curves": learned_curves,
            "activation_initial": curve_initial,
            "activation_learned": sample_activation(phi),
            "aborted": aborted,
        },
        wall_time=timer() - t0,
    )
