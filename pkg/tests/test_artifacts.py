"""
Tests for result records and table writers
"""
import csv
import json

import numpy as np

from ergolab.artifacts import ArtifactWriter, ResultRecord, config_hash, to_jsonable


class TestToJsonable:
    def test_numpy_values(self):
        payload = {"a": np.float64(0.5), "b": np.int64(3), "c": np.bool_(True), "d": np.arange(3)}
        assert to_jsonable(payload) == {"a": 0.5, "b": 3, "c": True, "d": [0, 1, 2]}

    def test_non_finite_floats(self):
        """JSON has no NaN or infinity, so they are written as strings"""
        assert to_jsonable([float("nan"), np.inf, -np.inf]) == ["nan", "inf", "-inf"]

    def test_config_hash_ignores_key_order(self):
        assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
        assert config_hash({"a": 1}) != config_hash({"a": 2})


class TestArtifactWriter:
    """Test CSV and JSON output"""

    def test_csv_floats_round_trip(self, temp_dir):
        writer = ArtifactWriter(temp_dir / "run")
        path = writer.write_csv("table", ("n", "value"), [(0, 0.1), (1, np.float64(1 / 3))])
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["n", "value"]
        assert float(rows[2][1]) == 1 / 3
        assert writer.files == ["table.csv"]

    def test_disabled_format_is_skipped(self, temp_dir):
        writer = ArtifactWriter(temp_dir, formats=["csv"])
        path = writer.write_json("metrics", {"x": 1})
        assert not path.exists()
        assert writer.files == []

    def test_record(self, temp_dir):
        writer = ArtifactWriter(temp_dir)
        writer.write_json("metrics", {"lambda": np.float64(2.0)})
        record = ResultRecord(experiment="spectrum", config_hash="abc", seed=3, workers=2,
                              metrics={"r_hat": float("nan")}, flags={"normalization": True, "lasota_yorke": False})
        path = writer.write_record(record)
        saved = json.loads(path.read_text())
        assert saved["passed"] is False
        assert saved["files"] == ["metrics.json"]
        assert saved["metrics"]["r_hat"] == "nan"

    def test_empty_flags_pass(self):
        assert ResultRecord(experiment="verify", config_hash="abc", seed=0, workers=1).passed
