"""Self-describing binary container for datasets and model checkpoints.

Layout: 4-byte magic, uint32 format version, uint64 header length, a JSON
header (metadata plus an ordered array directory of name/dtype/shape), then
the raw little-endian array payloads in directory order.  Round trips are
bit-exact; every parse failure reports the byte offset it occurred at.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .datagen import Dataset, GeneratorConfig
from .errors import ParseError

MAGIC = b"M1DF"
FORMAT_VERSION = 1

_DTYPES = {"float64": "<f8", "int64": "<i8"}


def write_container(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Atomically write ``meta`` + named arrays to ``path`` (temp then rename)."""
    directory = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.name not in _DTYPES:
            arr = arr.astype(np.float64 if arr.dtype.kind == "f" else np.int64)
        directory.append({"name": name, "dtype": arr.dtype.name, "shape": list(arr.shape)})
        blobs.append(arr.astype(_DTYPES[arr.dtype.name]).tobytes())

    header = json.dumps({"meta": meta, "arrays": directory}).encode("utf-8")
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(np.uint32(FORMAT_VERSION).tobytes())
            f.write(np.uint64(len(header)).tobytes())
            f.write(header)
            for blob in blobs:
                f.write(blob)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _umask() -> int:
    current = os.umask(0)
    os.umask(current)
    return current


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read back ``(meta, arrays)``; raises ParseError on any malformed byte."""
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise ParseError("file too short for container header", len(raw))
    if raw[:4] != MAGIC:
        raise ParseError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}", 0)
    version = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format version {version}", 4)
    header_len = int(np.frombuffer(raw[8:16], dtype="<u8")[0])
    if 16 + header_len > len(raw):
        raise ParseError(f"truncated header: need {header_len} bytes", 16)
    try:
        header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ParseError(f"invalid JSON header: {e}", 16) from e

    offset = 16 + header_len
    arrays = {}
    for entry in header.get("arrays", []):
        dtype = _DTYPES.get(entry.get("dtype"))
        if dtype is None:
            raise ParseError(f"unknown dtype {entry.get('dtype')!r}", offset)
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * np.dtype(dtype).itemsize
        if offset + nbytes > len(raw):
            raise ParseError(f"truncated payload for array {entry['name']!r}", offset)
        arrays[entry["name"]] = (
            np.frombuffer(raw[offset : offset + nbytes], dtype=dtype).reshape(shape).copy()
        )
        offset += nbytes
    if offset != len(raw):
        raise ParseError(f"{len(raw) - offset} trailing bytes after payload", offset)
    return header["meta"], arrays


def save_dataset(dataset: Dataset, path) -> None:
    meta = {
        "kind": "dataset",
        "config": dataset.config.to_dict(),
        "shuffled": dataset.permutation is not None,
    }
    arrays = {
        "x_train": dataset.x_train,
        "y_train": dataset.y_train,
        "x_test": dataset.x_test,
        "y_test": dataset.y_test,
    }
    if dataset.permutation is not None:
        arrays["permutation"] = dataset.permutation.astype(np.int64)
    write_container(path, meta, arrays)


def load_dataset(path) -> Dataset:
    meta, arrays = read_container(path)
    if meta.get("kind") != "dataset":
        raise ParseError(f"container holds {meta.get('kind')!r}, not a dataset", 16)
    perm = arrays.get("permutation")
    return Dataset(
        x_train=arrays["x_train"],
        y_train=arrays["y_train"],
        x_test=arrays["x_test"],
        y_test=arrays["y_test"],
        config=GeneratorConfig.from_dict(meta["config"]),
        permutation=perm,
    )


def export_csv(dataset: Dataset, out_dir) -> list[Path]:
    """Write one lossless CSV per split (repr round-trips every float64)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for split, x, y in (
        ("train", dataset.x_train, dataset.y_train),
        ("test", dataset.x_test, dataset.y_test),
    ):
        path = out_dir / f"{split}.csv"
        fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
        with os.fdopen(fd, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([f"f{i:02d}" for i in range(x.shape[1])] + ["label"])
            for row, label in zip(x, y):
                writer.writerow([repr(float(v)) for v in row] + [int(label)])
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
        written.append(path)
    return written
