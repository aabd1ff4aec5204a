"""Pooling-method grid over training-set sizes.

All variants share stride-1 convolutions so that pooling (window 2, stride 2)
is the only downsampling mechanism being compared; "none" keeps the full
feature maps.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from ..datagen import Dataset
from ..errors import ConfigError
from ..models import ConvSpec, ModelSpec, init_model
from ..training import TrainConfig, train
from .common import ExperimentResult, mean_std, parallel_map, timer, trial_seed

DEFAULT_POOL_KINDS = ("none", "max", "mean", "l2")
DEFAULT_TRAIN_SIZES = (125, 250, 500, 1000, 2000, 4000)


def subset_dataset(dataset: Dataset, n_train: int) -> Dataset:
    """First ``n_train`` training rows; label cycling keeps the subset stratified."""
    if n_train > len(dataset.x_train):
        raise ConfigError(f"requested {n_train} training rows, have {len(dataset.x_train)}")
    return dataclasses.replace(
        dataset, x_train=dataset.x_train[:n_train], y_train=dataset.y_train[:n_train]
    )


def _run_trial(task: dict) -> dict:
    data = subset_dataset(task["dataset"], task["train_size"])
    spec = ModelSpec.from_dict(task["spec"])
    cfg = TrainConfig.from_dict(task["train_cfg"])
    val_count = min(500, task["train_size"] // 5)
    result = train(init_model(spec), data, cfg, val_count=val_count)
    return {
        "pooling": task["pooling"],
        "train_size": task["train_size"],
        "seed": task["seed"],
        "test_acc": result.best_test_acc,
        "stopped_at": result.stopped_at,
    }


def run_pooling_grid(
    dataset: Dataset,
    pool_kinds: tuple[str, ...] = DEFAULT_POOL_KINDS,
    train_sizes: tuple[int, ...] = DEFAULT_TRAIN_SIZES,
    n_seeds: int = 3,
    seed: int = 0,
    jobs: int = 1,
    max_steps: int = 12000,
    learning_rate: float = 5e-3,
) -> ExperimentResult:
    """Full pooling-kind x train-size x seed accuracy surface."""
    if "none" not in pool_kinds:
        raise ConfigError("pool_kinds must include 'none' as the unpooled reference")
    conv = ConvSpec(channels=(8, 16, 32), kernel_size=5, stride=1, padding=2)

    tasks = []
    index = 0
    for kind in pool_kinds:
        for size in train_sizes:
            for _ in range(n_seeds):
                root = trial_seed(seed, index)
                spec = ModelSpec(
                    "cnn", dataset.x_train.shape[1], 10, (), conv=conv,
                    pooling=kind, pool_window=2, pool_stride=2, init_seed=root,
                )
                tasks.append(
                    {
                        "pooling": kind,
                        "train_size": size,
                        "seed": root,
                        "dataset": dataset,
                        "spec": dataclasses.asdict(spec),
                        "train_cfg": TrainConfig(
                            learning_rate=learning_rate,
                            max_steps=max_steps,
                            eval_every=200,
                            early_stop_patience=10,
                            seed=root,
                        ).to_dict(),
                    }
                )
                index += 1

    t0 = timer()
    trials = parallel_map(_run_trial, tasks, jobs)

    surface = {}
    for kind in pool_kinds:
        for size in train_sizes:
            accs = [t["test_acc"] for t in trials if t["pooling"] == kind and t["train_size"] == size]
            surface[f"{kind}/{size}"] = mean_std(accs)

    pooled = [k for k in pool_kinds if k != "none"]
    smallest, largest = min(train_sizes), max(train_sizes)
    low_delta = max(surface[f"{k}/{smallest}"]["mean"] for k in pooled) - surface[f"none/{smallest}"]["mean"]
    high_delta = surface[f"none/{largest}"]["mean"] - min(surface[f"{k}/{largest}"]["mean"] for k in pooled)

    return ExperimentResult(
        name="pooling",
        config={
            "pool_kinds": list(pool_kinds),
            "train_sizes": list(train_sizes),
            "n_seeds": n_seeds,
            "seed": seed,
            "max_steps": max_steps,
            "learning_rate": learning_rate,
        },
        trials=trials,
        aggregates={
            "surface": surface,
            "low_data_delta_best_pooled_minus_unpooled": low_delta,
            "high_data_delta_unpooled_minus_worst_pooled": high_delta,
        },
        wall_time=timer() - t0,
    )
