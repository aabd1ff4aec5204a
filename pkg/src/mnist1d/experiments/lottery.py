"""Iterative magnitude pruning with rewind-to-init, plus mask ablations.

The search trains, prunes the smallest surviving weights per layer, rewinds
the survivors to their original initialization, and repeats.  Ablations
retrain the found mask against random masks on original, reversed, and
index-permuted data; the adjacency statistic quantifies how much more often
surviving first-layer weights sit next to each other than chance predicts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Tensor
from ..datagen import Dataset
from ..errors import ConfigError, UsageError
from ..models import Model, ModelSpec, init_model, set_mask
from ..rng import RngStream, derive
from ..training import TrainConfig, train
from .common import ExperimentResult, parallel_map, timer, trial_seed, write_csv_atomic

_WEIGHT_PREFIXES = ("w",)  # biases are never pruned


@dataclass
class LotteryTicket:
    spec: ModelSpec
    masks: dict[str, np.ndarray]
    init_params: dict[str, np.ndarray]
    round_accuracies: list[float] = field(default_factory=list)

    @property
    def weight_sparsity(self) -> float:
        total = sum(m.size for m in self.masks.values())
        kept = sum(int(m.sum()) for m in self.masks.values())
        return 1.0 - kept / total


@dataclass
class LotteryReport:
    sparsity_schedule: list[float]
    accuracy_curves: dict[str, list[dict]]
    ablations: dict[str, dict]
    adjacency: dict[str, float]
    trials: list[dict] = field(default_factory=list)


def weight_names(model: Model) -> list[str]:
    return [k for k in model.params if k.startswith(_WEIGHT_PREFIXES) and model.params[k].ndim == 2]


def _model_from(spec: ModelSpec, params: dict[str, np.ndarray]) -> Model:
    return Model(spec=spec, params={k: Tensor(v.copy()) for k, v in params.items()})


def prune_step(masks: dict[str, np.ndarray], trained: Model, frac: float) -> dict[str, np.ndarray]:
    """Zero the ``frac`` smallest-magnitude surviving weights in each layer.

    Survivor counts follow kept' = ceil(kept * (1 - frac)); ties broken by
    flat index so the result is deterministic.
    """
    new_masks = {}
    for name, mask in masks.items():
        flat_mask = mask.reshape(-1)
        weights = np.abs(trained.params[name].data.reshape(-1))
        remaining = np.flatnonzero(flat_mask)
        kept_next = int(np.ceil(len(remaining) * (1.0 - frac)))
        if kept_next < 1 or kept_next == len(remaining):
            raise ConfigError(
                f"round cannot prune layer {name!r} below its {len(remaining)} surviving weights"
            )
        order = remaining[np.argsort(weights[remaining], kind="stable")]
        out = flat_mask.copy()
        out[order[: len(remaining) - kept_next]] = 0.0
        new_masks[name] = out.reshape(mask.shape)
    return new_masks


def find_lottery_ticket(
    spec: ModelSpec,
    dataset: Dataset,
    train_cfg: TrainConfig,
    prune_frac_per_round: float = 0.2,
    rounds: int = 12,
) -> LotteryTicket:
    """Iterative magnitude pruning, rewinding survivors to their initial values."""
    if not 0 < prune_frac_per_round < 1:
        raise ConfigError("prune_frac_per_round must lie in (0, 1)")
    if spec.kind != "mlp":
        raise UsageError(f"ticket search expects an mlp spec, got {spec.kind!r}")

    base = init_model(spec)
    init_params = {k: v.data.copy() for k, v in base.params.items()}
    masks = {name: np.ones(base.params[name].shape) for name in weight_names(base)}
    ticket = LotteryTicket(spec=spec, masks=masks, init_params=init_params)

    for _ in range(rounds):
        model = set_mask(_model_from(spec, init_params), ticket.masks)
        result = train(model, dataset, train_cfg)
        ticket.round_accuracies.append(result.best_test_acc)
        # rank magnitudes of the fully trained net, not the early-stop checkpoint
        ticket.masks = prune_step(ticket.masks, result.final_model, prune_frac_per_round)
    return ticket


# ----------------------------------------------------------------------------
# mask statistics


def mask_adjacency(
    mask: np.ndarray, n_monte_carlo: int = 1000, seed: int = 0
) -> dict[str, float]:
    """Count input-adjacent surviving weight pairs vs a matched-density chance model.

    ``mask`` is the first-layer mask laid out (input_len, hidden); adjacency
    pairs are (i, h), (i+1, h).  Chance statistics come from masks with the
    same number of survivors placed uniformly at random.
    """
    mask = np.asarray(mask)
    count = int(np.sum(mask[:-1, :] * mask[1:, :]))
    ones = int(mask.sum())
    rng = RngStream(seed, 0)
    mc_counts = np.empty(n_monte_carlo)
    for i in range(n_monte_carlo):
        flat = np.zeros(mask.size)
        flat[rng.choice(mask.size, ones, replace=False)] = 1.0
        random_mask = flat.reshape(mask.shape)
        mc_counts[i] = np.sum(random_mask[:-1, :] * random_mask[1:, :])
    return {
        "count": count,
        "chance_mean": float(mc_counts.mean()),
        "chance_std": float(mc_counts.std()),
    }


def sort_mask_for_display(mask: np.ndarray) -> np.ndarray:
    """Reorder rows by descending within-row adjacency count (stable on ties)."""
    mask = np.asarray(mask)
    adjacency = (mask[:, :-1] * mask[:, 1:]).sum(axis=1)
    order = np.argsort(-adjacency, kind="stable")
    return mask[order]


def random_mask_like(masks: dict[str, np.ndarray], seed: int) -> dict[str, np.ndarray]:
    """Random masks with the same per-layer survivor counts."""
    out = {}
    for i, (name, mask) in enumerate(masks.items()):
        ones = int(mask.sum())
        flat = np.zeros(mask.size)
        flat[RngStream(seed, i).choice(mask.size, ones, replace=False)] = 1.0
        out[name] = flat.reshape(mask.shape)
    return out


# ----------------------------------------------------------------------------
# ablation grid


def _dataset_variant(dataset: Dataset, variant: str, seed: int) -> Dataset:
    if variant == "original":
        return dataset
    if variant == "reversed":
        return dataclasses.replace(
            dataset, x_train=dataset.x_train[:, ::-1].copy(), x_test=dataset.x_test[:, ::-1].copy()
        )
    if variant == "permuted":
        perm = RngStream(seed, 777).permutation(dataset.x_train.shape[1])
        return dataclasses.replace(
            dataset, x_train=dataset.x_train[:, perm].copy(), x_test=dataset.x_test[:, perm].copy()
        )
    raise ConfigError(f"unknown data variant {variant!r}")


def _run_ablation_trial(task: dict) -> dict:
    ticket: LotteryTicket = task["ticket"]
    dataset = _dataset_variant(task["dataset"], task["variant"], task["exp_seed"])
    cfg = dataclasses.replace(task["train_cfg"], seed=task["seed"])

    arm = task["arm"]
    if arm == "dense":
        model = _model_from(ticket.spec, ticket.init_params)
    elif arm == "ticket":
        model = set_mask(_model_from(ticket.spec, ticket.init_params), ticket.masks)
    elif arm == "random_mask":
        model = set_mask(
            _model_from(ticket.spec, ticket.init_params), random_mask_like(ticket.masks, task["seed"])
        )
    elif arm == "random_reinit":
        fresh = init_model(dataclasses.replace(ticket.spec, init_seed=task["seed"]))
        model = set_mask(fresh, ticket.masks)
    else:
        raise ConfigError(f"unknown arm {arm!r}")

    result = train(model, dataset, cfg)
    return {
        "variant": task["variant"],
        "arm": arm,
        "seed": task["seed"],
        "test_acc": result.best_test_acc,
        "curve": [{"step": r.step, "test_acc": r.test_acc} for r in result.curves],
    }


def lottery_ablations(
    ticket: LotteryTicket,
    dataset: Dataset,
    train_cfg: TrainConfig,
    n_seeds: int = 3,
    seed: int = 0,
    jobs: int = 1,
    prune_frac_per_round: float = 0.2,
) -> LotteryReport:
    """Retrain ticket vs baselines on original, reversed, and permuted data."""
    grid = [("original", arm) for arm in ("ticket", "random_mask", "random_reinit", "dense")]
    grid += [("reversed", arm) for arm in ("ticket", "random_mask")]
    grid += [("permuted", arm) for arm in ("ticket", "random_mask")]

    tasks = []
    for index, (variant, arm) in enumerate(
        (v, a) for v, a in grid for _ in range(n_seeds)
    ):
        tasks.append(
            {
                "variant": variant,
                "arm": arm,
                "seed": trial_seed(seed, index),
                "exp_seed": seed,
                "ticket": ticket,
                "dataset": dataset,
                "train_cfg": train_cfg,
            }
        )
    trials = parallel_map(_run_ablation_trial, tasks, jobs)

    def arm_mean(variant: str, arm: str) -> float:
        return float(
            np.mean([t["test_acc"] for t in trials if t["variant"] == variant and t["arm"] == arm])
        )

    margins = {
        variant: arm_mean(variant, "ticket") - arm_mean(variant, "random_mask")
        for variant in ("original", "reversed", "permuted")
    }
    ablations = {
        variant: {
            "ticket": arm_mean(variant, "ticket"),
            "random_mask": arm_mean(variant, "random_mask"),
            "margin": margins[variant],
        }
        for variant in ("original", "reversed", "permuted")
    }
    ablations["original"]["random_reinit"] = arm_mean("original", "random_reinit")
    ablations["original"]["dense"] = arm_mean("original", "dense")

    curves = {}
    for arm in ("ticket", "random_mask", "random_reinit", "dense"):
        per_trial = [t["curve"] for t in trials if t["variant"] == "original" and t["arm"] == arm]
        steps = sorted({pt["step"] for c in per_trial for pt in c})
        mean_curve = []
        for s in steps:
            vals = []
            for c in per_trial:
                past = [pt["test_acc"] for pt in c if pt["step"] <= s]
                vals.append(past[-1])
            mean_curve.append({"step": s, "test_acc": float(np.mean(vals))})
        curves[arm] = mean_curve

    rounds = len(ticket.round_accuracies)
    schedule = [1.0 - (1.0 - prune_frac_per_round) ** r for r in range(1, rounds + 1)]
    first_layer = next(iter(ticket.masks))
    return LotteryReport(
        sparsity_schedule=schedule,
        accuracy_curves=curves,
        ablations=ablations,
        adjacency=mask_adjacency(ticket.masks[first_layer], seed=seed),
        trials=trials,
    )


def run_lottery(
    dataset: Dataset,
    spec: ModelSpec | None = None,
    train_cfg: TrainConfig | None = None,
    prune_frac_per_round: float = 0.2,
    rounds: int = 12,
    n_seeds: int = 3,
    seed: int = 0,
    jobs: int = 1,
) -> tuple[ExperimentResult, LotteryTicket, LotteryReport]:
    """Full pipeline: ticket search, ablation grid, adjacency statistics.

    A single hidden layer concentrates representational pressure on the
    input-facing weights, which is where the local-connectivity signal lives;
    each round trains long enough for magnitudes to reflect learned structure
    rather than the initialization.
    """
    spec = spec or ModelSpec("mlp", dataset.x_train.shape[1], 10, (100,), init_seed=derive(seed, 0))
    train_cfg = train_cfg or TrainConfig(
        learning_rate=1e-2, max_steps=12000, eval_every=200, early_stop_patience=15, seed=derive(seed, 1)
    )

    t0 = timer()
    ticket = find_lottery_ticket(spec, dataset, train_cfg, prune_frac_per_round, rounds)
    report = lottery_ablations(
        ticket, dataset, train_cfg, n_seeds=n_seeds, seed=seed, jobs=jobs,
        prune_frac_per_round=prune_frac_per_round,
    )
    result = ExperimentResult(
        name="lottery",
        config={
            "spec": dataclasses.asdict(spec),
            "train": train_cfg.to_dict(),
            "prune_frac_per_round": prune_frac_per_round,
            "rounds": rounds,
            "n_seeds": n_seeds,
            "seed": seed,
        },
        trials=report.trials,
        aggregates={
            "weight_sparsity": {"mean": ticket.weight_sparsity, "std": 0.0},
            "round_accuracies": {"values": ticket.round_accuracies},
            "ablations": report.ablations,
            "adjacency": report.adjacency,
        },
        wall_time=timer() - t0,
    )
    return result, ticket, report


def write_mask_grids(ticket: LotteryTicket, out_dir) -> None:
    """Plot-ready 0/1 grids (hidden x input), rows sorted by adjacency."""
    for name, mask in ticket.masks.items():
        grid = sort_mask_for_display(mask.T)
        write_csv_atomic(
            f"{out_dir}/mask_{name}.csv",
            [f"i{c:02d}" for c in range(grid.shape[1])],
            grid.astype(int).tolist(),
        )
