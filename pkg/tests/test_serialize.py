import csv
import json

import numpy as np
import pytest

from mnist1d.datagen import GeneratorConfig, generate_dataset
from mnist1d.errors import ParseError
from mnist1d.serialize import (
    FORMAT_VERSION,
    MAGIC,
    export_csv,
    load_dataset,
    read_container,
    save_dataset,
    write_container,
)


@pytest.fixture(scope="module")
def small_dataset():
    return generate_dataset(GeneratorConfig(train_count=60, test_count=20))


class TestContainer:
    def test_round_trip(self, tmp_path):
        meta = {"kind": "blob", "note": "x"}
        arrays = {
            "a": np.random.default_rng(0).normal(size=(3, 4)),
            "b": np.arange(5, dtype=np.int64),
        }
        path = tmp_path / "blob.m1d"
        write_container(path, meta, arrays)
        meta2, arrays2 = read_container(path)
        assert meta2 == meta
        np.testing.assert_array_equal(arrays2["a"], arrays["a"])
        np.testing.assert_array_equal(arrays2["b"], arrays["b"])

    def test_bad_magic_reports_offset_zero(self, tmp_path):
        path = tmp_path / "bad.m1d"
        path.write_bytes(b"XXXX" + bytes(20))
        with pytest.raises(ParseError, match="offset 0"):
            read_container(path)

    def test_truncated_payload_reports_offset(self, tmp_path):
        path = tmp_path / "trunc.m1d"
        write_container(path, {"kind": "blob"}, {"a": np.zeros((10, 10))})
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 100])
        with pytest.raises(ParseError, match="truncated payload"):
            read_container(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        path = tmp_path / "trail.m1d"
        write_container(path, {"kind": "blob"}, {"a": np.zeros(4)})
        path.write_bytes(path.read_bytes() + b"zz")
        with pytest.raises(ParseError, match="trailing"):
            read_container(path)


class TestDatasetFile:
    def test_round_trip_identity(self, small_dataset, tmp_path):
        path = tmp_path / "ds.m1d"
        save_dataset(small_dataset, path)
        assert load_dataset(path) == small_dataset

    def test_shuffled_round_trip_keeps_permutation(self, tmp_path):
        ds = generate_dataset(GeneratorConfig(train_count=30, test_count=10, shuffle_seq=True))
        path = tmp_path / "ds.m1d"
        save_dataset(ds, path)
        loaded = load_dataset(path)
        assert loaded.permutation is not None
        np.testing.assert_array_equal(loaded.permutation, ds.permutation)

    def test_two_saves_are_byte_identical(self, small_dataset, tmp_path):
        p1, p2 = tmp_path / "a.m1d", tmp_path / "b.m1d"
        save_dataset(small_dataset, p1)
        save_dataset(small_dataset, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_file_yields_no_partial_dataset(self, small_dataset, tmp_path):
        path = tmp_path / "ds.m1d"
        save_dataset(small_dataset, path)
        path.write_bytes(path.read_bytes()[:-64])
        with pytest.raises(ParseError):
            load_dataset(path)

    def test_default_file_size_matches_encoding_arithmetic(self, tmp_path):
        ds = generate_dataset(GeneratorConfig())
        path = tmp_path / "ds.m1d"
        save_dataset(path=path, dataset=ds)
        header = json.dumps(
            {
                "meta": {"kind": "dataset", "config": ds.config.to_dict(), "shuffled": False},
                "arrays": [
                    {"name": "x_train", "dtype": "float64", "shape": [4000, 40]},
                    {"name": "y_train", "dtype": "int64", "shape": [4000]},
                    {"name": "x_test", "dtype": "float64", "shape": [1000, 40]},
                    {"name": "y_test", "dtype": "int64", "shape": [1000]},
                ],
            }
        ).encode()
        expected = 16 + len(header) + 5000 * 40 * 8 + 5000 * 8
        assert path.stat().st_size == expected

    def test_header_prefix_fields(self, small_dataset, tmp_path):
        path = tmp_path / "ds.m1d"
        save_dataset(small_dataset, path)
        raw = path.read_bytes()
        assert raw[:4] == MAGIC
        assert int(np.frombuffer(raw[4:8], "<u4")[0]) == FORMAT_VERSION


class TestCsvExport:
    def test_lossless_round_trip(self, small_dataset, tmp_path):
        train_path, _ = export_csv(small_dataset, tmp_path)
        with open(train_path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == [f"f{i:02d}" for i in range(40)] + ["label"]
        x = np.array([[float(v) for v in row[:-1]] for row in rows[1:]])
        y = np.array([int(row[-1]) for row in rows[1:]])
        np.testing.assert_array_equal(x, small_dataset.x_train)
        np.testing.assert_array_equal(y, small_dataset.y_train)
