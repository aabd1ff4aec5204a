"""Command-line entry point: dataset generation plus every experiment.

Every run writes a manifest first (resolved config, seed, output paths), then
the result files, all atomically; a finished manifest is enough to replay the
run bit-for-bit via ``--from-manifest``.  Exit codes: 0 success, 1 runtime
failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .datagen import GeneratorConfig, generate_dataset
from .errors import ConfigError, UsageError
from .experiments import (
    metalearn_activation,
    metalearn_lr,
    run_benchmark,
    run_double_descent,
    run_lottery,
    run_pooling_grid,
    write_benchmark_table,
    write_mask_grids,
)
from .experiments.common import write_csv_atomic, write_json_atomic
from .serialize import FORMAT_VERSION, export_csv, save_dataset
from .training import TrainConfig

SUBCOMMANDS = (
    "gen",
    "benchmark",
    "lottery",
    "double-descent",
    "metalearn-lr",
    "metalearn-act",
    "pooling",
)

# per-subcommand config-file schema: key -> type
_SCHEMAS: dict[str, dict[str, type]] = {
    "gen": {"data": dict, "shuffled": bool},
    "benchmark": {"data": dict, "train": dict, "n_seeds": int},
    "lottery": {
        "data": dict,
        "train": dict,
        "n_seeds": int,
        "rounds": int,
        "prune_frac_per_round": float,
    },
    "double-descent": {
        "data": dict,
        "widths": list,
        "loss": str,
        "n_seeds": int,
        "n_train": int,
        "label_noise_frac": float,
        "max_steps": int,
        "learning_rate": float,
    },
    "metalearn-lr": {
        "data": dict,
        "init_lr": float,
        "unroll": int,
        "outer_steps": int,
        "outer_lr": float,
    },
    "metalearn-act": {
        "data": dict,
        "inner_lr": float,
        "unroll": int,
        "outer_steps": int,
        "outer_lr": float,
    },
    "pooling": {"data": dict, "n_seeds": int, "train_sizes": list},
}


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int
    out_dir: str
    jobs: int
    artifact_version: str = __version__
    format_version: int = FORMAT_VERSION
    status: str = "running"
    outputs: list[str] = field(default_factory=list)
    started_at: str = ""
    finished_at: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(**d)


def _load_config_file(path: str, subcommand: str) -> dict:
    try:
        with open(path) as f:
            cfg = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config file {path}: {e}") from e
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    schema = _SCHEMAS[subcommand]
    unknown = set(cfg) - set(schema) - {"seed"}
    if unknown:
        raise UsageError(f"unknown config keys for {subcommand}: {sorted(unknown)}")
    for key, expected in schema.items():
        if key in cfg and not isinstance(cfg[key], expected):
            raise UsageError(f"config key {key!r} must be {expected.__name__}")
    if "data" in cfg:
        GeneratorConfig.from_dict(cfg["data"])  # validates field names
    if "train" in cfg:
        TrainConfig.from_dict(cfg["train"])
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mnist1d",
        description="Generate the 1-D digit benchmark and reproduce its experiment suite.",
    )
    parser.add_argument("--version", action="version", version=f"mnist1d {__version__} (format {FORMAT_VERSION})")
    parser.add_argument("--from-manifest", metavar="MANIFEST", help="replay a finished run from its manifest")

    sub = parser.add_subparsers(dest="subcommand")

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="root seed (overrides config file)")
        p.add_argument("--out", default=None, help="output directory (default $MNIST1D_OUT or ./out)")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--jobs", type=int, default=1, help="parallel trial workers")

    p = sub.add_parser("gen", help="generate the dataset")
    common(p)
    p.add_argument("--shuffled", action="store_true", help="apply a fixed index permutation to every row")

    p = sub.add_parser("benchmark", help="accuracy grid on plain and shuffled data")
    common(p)
    p.add_argument("--n-seeds", type=int, default=None)

    p = sub.add_parser("lottery", help="iterative magnitude pruning and mask ablations")
    common(p)
    p.add_argument("--n-seeds", type=int, default=None)
    p.add_argument("--rounds", type=int, default=None)

    p = sub.add_parser("double-descent", help="test-error peak vs model capacity")
    common(p)
    p.add_argument("--loss", choices=("nll", "mse"), default=None)
    p.add_argument("--n-seeds", type=int, default=None)

    p = sub.add_parser("metalearn-lr", help="learn a learning rate through unrolled training")
    common(p)
    p.add_argument("--outer-steps", type=int, default=None)

    p = sub.add_parser("metalearn-act", help="learn an activation function through unrolled training")
    common(p)
    p.add_argument("--outer-steps", type=int, default=None)

    p = sub.add_parser("pooling", help="pooling-method grid over training sizes")
    common(p)
    p.add_argument("--n-seeds", type=int, default=None)

    return parser


def parse_args(argv: list[str]) -> RunManifest:
    """Resolve argv + config file + defaults into a run manifest."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.from_manifest:
        try:
            with open(args.from_manifest) as f:
                manifest = RunManifest.from_dict(json.load(f))
        except (OSError, json.JSONDecodeError, TypeError) as e:
            raise UsageError(f"cannot replay manifest {args.from_manifest}: {e}") from e
        manifest.status = "running"
        manifest.outputs = []
        return manifest

    if not args.subcommand:
        parser.print_usage(sys.stderr)
        raise UsageError("a subcommand is required")

    config = _load_config_file(args.config, args.subcommand) if args.config else {}

    # precedence: defaults < config file < explicit flags
    seed = 42
    if "seed" in config:
        seed = int(config["seed"])
    if args.seed is not None:
        seed = args.seed

    for flag in ("n_seeds", "rounds", "loss", "outer_steps"):
        value = getattr(args, flag, None)
        if value is not None:
            config[flag] = value
    if args.subcommand == "gen" and args.shuffled:
        config["shuffled"] = True

    out_dir = args.out or os.environ.get("MNIST1D_OUT") or "out"
    return RunManifest(
        subcommand=args.subcommand,
        config=config,
        seed=seed,
        out_dir=str(Path(out_dir) / args.subcommand),
        jobs=args.jobs,
    )


def _dataset_from(config: dict, seed: int, shuffled: bool = False):
    data_cfg = GeneratorConfig.from_dict({**config.get("data", {}), "seed": seed, "shuffle_seq": shuffled})
    return data_cfg, generate_dataset(data_cfg)


def _write_result(result, manifest: RunManifest, out: Path) -> None:
    for path in result.write(out):
        manifest.outputs.append(str(path))


def run(manifest: RunManifest) -> int:
    """Execute a resolved manifest; returns the process exit code."""
    out = Path(manifest.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest.started_at = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        manifest_path = out / "manifest.json"
        write_json_atomic(manifest_path, manifest.to_dict())

        cmd = manifest.subcommand
        cfg = manifest.config
        seed, jobs = manifest.seed, manifest.jobs

        if cmd == "gen":
            data_cfg, dataset = _dataset_from(cfg, seed, cfg.get("shuffled", False))
            path = out / "dataset.m1d"
            save_dataset(dataset, path)
            manifest.outputs.append(str(path))
            for p in export_csv(dataset, out):
                manifest.outputs.append(str(p))
        elif cmd == "benchmark":
            _, dataset_cfg = cfg, GeneratorConfig.from_dict({**cfg.get("data", {}), "seed": seed})
            result = run_benchmark(
                dataset_cfg,
                n_seeds=cfg.get("n_seeds", 3),
                seed=seed,
                jobs=jobs,
                train_overrides=cfg.get("train", {}),
            )
            _write_result(result, manifest, out)
            table = out / "benchmark_table.csv"
            write_benchmark_table(result, table)
            manifest.outputs.append(str(table))
        elif cmd == "lottery":
            _, dataset = _dataset_from(cfg, seed)
            lottery_train = {
                "learning_rate": 1e-2,
                "max_steps": 12000,
                "early_stop_patience": 15,
                **cfg.get("train", {}),
                "seed": seed,
            }
            result, ticket, report = run_lottery(
                dataset,
                train_cfg=TrainConfig.from_dict(lottery_train),
                rounds=cfg.get("rounds", 12),
                prune_frac_per_round=cfg.get("prune_frac_per_round", 0.2),
                n_seeds=cfg.get("n_seeds", 3),
                seed=seed,
                jobs=jobs,
            )
            _write_result(result, manifest, out)
            write_mask_grids(ticket, out)
            for name in ticket.masks:
                manifest.outputs.append(str(out / f"mask_{name}.csv"))
        elif cmd == "double-descent":
            _, dataset = _dataset_from(cfg, seed)
            kwargs = dict(
                loss=cfg.get("loss", "nll"),
                n_seeds=cfg.get("n_seeds", 3),
                n_train=cfg.get("n_train", 500),
                label_noise_frac=cfg.get("label_noise_frac", 0.15),
                max_steps=cfg.get("max_steps", 50_000),
                learning_rate=cfg.get("learning_rate", 1e-2),
                seed=seed,
                jobs=jobs,
            )
            if cfg.get("widths"):
                kwargs["widths"] = tuple(cfg["widths"])
            result = run_double_descent(dataset, **kwargs)
            _write_result(result, manifest, out)
            curve = out / "test_error_vs_params.csv"
            write_csv_atomic(
                curve,
                ["width", "params", "mean_test_error", "mean_train_error"],
                [
                    [w, result.aggregates["params"][w], result.aggregates["mean_test_error"][w],
                     result.aggregates["mean_train_error"][w]]
                    for w in result.aggregates["params"]
                ],
            )
            manifest.outputs.append(str(curve))
        elif cmd == "metalearn-lr":
            _, dataset = _dataset_from(cfg, seed)
            result = metalearn_lr(
                dataset,
                init_lr=cfg.get("init_lr", 0.05),
                unroll=cfg.get("unroll", 100),
                outer_steps=cfg.get("outer_steps", 100),
                outer_lr=cfg.get("outer_lr", 0.05),
                seed=seed,
            )
            _write_result(result, manifest, out)
            curve = out / "lr_trajectory.csv"
            write_csv_atomic(curve, ["outer_step", "lr"], [[t["outer_step"], t["lr"]] for t in result.trials])
            manifest.outputs.append(str(curve))
        elif cmd == "metalearn-act":
            _, dataset = _dataset_from(cfg, seed)
            result = metalearn_activation(
                dataset,
                inner_lr=cfg.get("inner_lr", 0.5),
                unroll=cfg.get("unroll", 50),
                outer_steps=cfg.get("outer_steps", 300),
                outer_lr=cfg.get("outer_lr", 2e-2),
                seed=seed,
            )
            _write_result(result, manifest, out)
            curve = out / "activation_curve.csv"
            learned = result.aggregates["activation_learned"]
            write_csv_atomic(curve, ["x", "learned_y"], list(zip(learned["x"], learned["y"])))
            manifest.outputs.append(str(curve))
        elif cmd == "pooling":
            _, dataset = _dataset_from(cfg, seed)
            result = run_pooling_grid(
                dataset,
                train_sizes=tuple(cfg.get("train_sizes", (125, 250, 500, 1000, 2000, 4000))),
                n_seeds=cfg.get("n_seeds", 3),
                seed=seed,
                jobs=jobs,
            )
            _write_result(result, manifest, out)
            surface = out / "pooling_surface.csv"
            rows = [
                key.split("/") + [v["mean"], v["std"]]
                for key, v in result.aggregates["surface"].items()
            ]
            write_csv_atomic(surface, ["pooling", "train_size", "mean_acc", "std_acc"], rows)
            manifest.outputs.append(str(surface))
        else:
            raise UsageError(f"unknown subcommand {cmd!r}")

        manifest.status = "finished"
        manifest.finished_at = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        write_json_atomic(manifest_path, manifest.to_dict())
        return 0
    except (OSError, ValueError) as e:  # covers Config/Data/Usage/Parse errors
        print(f"error: {e}", file=sys.stderr)
        return 1


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        manifest = parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:  # argparse exits on --help/--version/bad flags
        return int(e.code or 0)
    return run(manifest)


if __name__ == "__main__":
    sys.exit(main())
