import json

import pytest

from varsel.metrics import (
    MANIFEST_NAME,
    MetricRecord,
    MetricsWriter,
    read_metrics,
    write_manifest,
)


class TestMetricsWriter:
    """Test line-delimited metric output."""

    def test_write_and_read(self, tmp_path):
        """Test that records are written one per line and read back."""
        path = tmp_path / "out" / "metrics.jsonl"
        records = [
            MetricRecord(0, 1, "planner.episode_duration", 12, phase=0),
            MetricRecord(1, 0, "accuracy.mean", 0.5, cycle=2),
        ]
        with MetricsWriter(path) as writer:
            writer.write_all(records)
            assert writer.count == 2

        lines = path.read_text().splitlines()
        assert json.loads(lines[0]) == {
            "trial": 0,
            "iteration": 1,
            "metric": "planner.episode_duration",
            "value": 12,
            "phase": 0,
        }
        assert list(read_metrics(path)) == records

    def test_null_value_kept(self):
        """Test that a missing value is still written while unset context is dropped."""
        assert MetricRecord(0, 0, "accuracy.mean", None).to_dict() == {
            "trial": 0,
            "iteration": 0,
            "metric": "accuracy.mean",
            "value": None,
        }

    def test_reopen_truncates(self, tmp_path):
        """Test that reopening a writer replaces earlier rows."""
        path = tmp_path / "metrics.jsonl"
        for value in (1, 2):
            with MetricsWriter(path) as writer:
                writer.write(MetricRecord(0, 0, "m", value))
        assert [r.value for r in read_metrics(path)] == [2]

    def test_write_when_closed(self, tmp_path):
        """Test that writing outside the context manager raises."""
        writer = MetricsWriter(tmp_path / "metrics.jsonl")
        with pytest.raises(RuntimeError, match="not open"):
            writer.write(MetricRecord(0, 0, "m", 1))


class TestManifest:
    """Test run manifests."""

    def test_contents(self, tmp_path, mocker):
        """Test that the manifest records config, seed and versions."""
        mocker.patch("varsel.metrics.package_version", return_value="9.9.9")
        path = write_manifest(tmp_path, {"mode": "fsm"}, 7, table_version="1")
        assert path == tmp_path / MANIFEST_NAME
        manifest = json.loads(path.read_text())
        assert manifest["config"] == {"mode": "fsm"}
        assert manifest["seed"] == 7
        assert manifest["varsel_version"] == "9.9.9"
        assert manifest["fsm_table_version"] == "1"
        assert manifest["python_version"]
