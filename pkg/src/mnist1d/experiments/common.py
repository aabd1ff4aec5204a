"""Shared experiment plumbing: result records, trial seeding, parallel maps."""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..rng import derive


@dataclass
class ExperimentResult:
    """One experiment run: config echo, per-trial records, and aggregates."""

    name: str
    config: dict
    trials: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def write(self, out_dir) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"{self.name}.json"
        write_json_atomic(path, self.to_dict())
        return [path]


def trial_seed(experiment_seed: int, trial_index: int) -> int:
    """Per-trial root seed; depends only on the experiment seed and trial index."""
    return derive(experiment_seed, trial_index)


def parallel_map(fn, items, jobs: int = 1) -> list:
    """Order-preserving map; results must match serial execution exactly."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def mean_std(values) -> dict:
    values = np.asarray(list(values), dtype=np.float64)
    return {"mean": float(values.mean()), "std": float(values.std())}


def timer() -> float:
    return time.perf_counter()


def _umask() -> int:
    current = os.umask(0)
    os.umask(current)
    return current


def write_json_atomic(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv_atomic(path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for row in rows:
                writer.writerow(row)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
