"""Accuracy grid for the four reference models on plain and shuffled data."""

from __future__ import annotations

import dataclasses

from ..datagen import GeneratorConfig, generate_dataset
from ..models import ModelSpec, benchmark_specs, init_model
from ..training import TrainConfig, train
from .common import ExperimentResult, mean_std, parallel_map, timer, trial_seed, write_csv_atomic

MODEL_ORDER = ("logistic", "mlp", "cnn", "gru")


def benchmark_train_config(kind: str, seed: int = 0, **overrides) -> TrainConfig:
    """Per-architecture training defaults (slower kinds get a gentler step)."""
    lr = 1e-2 if kind in ("logistic", "mlp") else 5e-3
    base = dict(learning_rate=lr, max_steps=12000, eval_every=200, early_stop_patience=10, seed=seed)
    base.update(overrides)
    return TrainConfig(**base)


def _run_trial(task: dict) -> dict:
    dataset = generate_dataset(GeneratorConfig.from_dict(task["dataset_cfg"]))
    spec = ModelSpec.from_dict(task["spec"])
    cfg = TrainConfig.from_dict(task["train_cfg"])
    result = train(init_model(spec), dataset, cfg)
    return {
        "variant": task["variant"],
        "kind": task["kind"],
        "seed": task["seed"],
        "test_acc": result.best_test_acc,
        "stopped_at": result.stopped_at,
    }


def run_benchmark(
    dataset_cfg: GeneratorConfig | None = None,
    model_specs: dict[str, ModelSpec] | None = None,
    n_seeds: int = 3,
    seed: int = 0,
    jobs: int = 1,
    train_overrides: dict | None = None,
) -> ExperimentResult:
    """Train every spec on the plain and the shuffled dataset, n_seeds times each."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    dataset_cfg = dataset_cfg or GeneratorConfig()
    model_specs = model_specs or benchmark_specs()
    train_overrides = train_overrides or {}

    tasks = []
    index = 0
    for variant, shuffled in (("plain", False), ("shuffled", True)):
        data_cfg = dataclasses.replace(dataset_cfg, shuffle_seq=shuffled)
        for kind, spec in model_specs.items():
            for s in range(n_seeds):
                root = trial_seed(seed, index)
                tasks.append(
                    {
                        "variant": variant,
                        "kind": kind,
                        "seed": root,
                        "dataset_cfg": data_cfg.to_dict(),
                        "spec": dataclasses.asdict(dataclasses.replace(spec, init_seed=root)),
                        "train_cfg": benchmark_train_config(kind, seed=root, **train_overrides).to_dict(),
                    }
                )
                index += 1

    t0 = timer()
    trials = parallel_map(_run_trial, tasks, jobs)
    aggregates = {}
    for variant in ("plain", "shuffled"):
        for kind in model_specs:
            accs = [t["test_acc"] for t in trials if t["variant"] == variant and t["kind"] == kind]
            aggregates[f"{variant}/{kind}"] = mean_std(accs)

    return ExperimentResult(
        name="benchmark",
        config={
            "dataset": dataset_cfg.to_dict(),
            "models": {k: dataclasses.asdict(v) for k, v in model_specs.items()},
            "n_seeds": n_seeds,
            "seed": seed,
            "train_overrides": train_overrides,
        },
        trials=trials,
        aggregates=aggregates,
        wall_time=timer() - t0,
    )


def write_benchmark_table(result: ExperimentResult, path) -> None:
    """Accuracy grid CSV: one row per dataset variant, one column per model."""
    kinds = [k for k in MODEL_ORDER if any(f"plain/{k}" in key for key in result.aggregates)]
    header = ["dataset"] + [f"{k}_mean" for k in kinds] + [f"{k}_std" for k in kinds]
    rows = []
    for variant in ("plain", "shuffled"):
        agg = [result.aggregates[f"{variant}/{k}"] for k in kinds]
        rows.append([variant] + [f"{a['mean']:.4f}" for a in agg] + [f"{a['std']:.4f}" for a in agg])
    write_csv_atomic(path, header, rows)
