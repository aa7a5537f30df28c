import json
import numpy as np
import pandas as pd
import pytest
from src.reports import ReportWriter, RunSummary


class TestRunSummary:
    def test_invalid_status(self):
        with pytest.raises(ValueError, match="Invalid status"):
            RunSummary("weyl", "MAYBE", {})

    def test_to_json_is_deterministic(self):
        summary = RunSummary("sweep", "PASS", {"seed": 1},
                             results={"ratio": np.float64(0.125),
                                      "gap": float("nan"),
                                      "sizes": np.array([8, 16])})
        text = summary.to_json()
        data = json.loads(text)
        assert list(data) == sorted(data)
        assert data["results"] == {"gap": "nan", "ratio": 0.125,
                                   "sizes": [8, 16]}
        assert data["version"] == "1.0.0"
        assert text == summary.to_json()
        assert summary.passed

    def test_failed(self):
        summary = RunSummary("sandwich", "FAIL", {},
                             failure={"invariant": "second inequality"})
        assert not summary.passed


class TestReportWriter:
    def test_write_csv(self, tmp_path):
        writer = ReportWriter(tmp_path)
        path = writer.write_csv("rows.csv", [{"t": 1.0, "size": 4},
                                             {"t": 2.0, "size": 8}],
                                ["t", "size"])
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["t", "size"]
        assert frame["size"].tolist() == [4, 8]

    def test_write_lines_header(self, tmp_path):
        writer = ReportWriter(tmp_path)
        path = writer.write_lines("edges.txt", {"t": 10.0, "size": 3},
                                  ["0 1 1.0 metric"])
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == '# {"size": 3, "t": 10.0}'
        assert lines[1] == "0 1 1.0 metric"

    def test_summary_lists_files(self, tmp_path):
        writer = ReportWriter(tmp_path / "out")
        writer.write_json("net.json", {"b": 1, "a": 2})
        writer.write_text("alpha.txt", "x\n")
        writer.write_summary(RunSummary("net", "PASS", {}))
        data = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert data["files"] == ["alpha.txt", "net.json"]
        names = sorted(p.name for p in (tmp_path / "out").iterdir())
        assert names == ["alpha.txt", "net.json", "summary.json"]

    def test_unwritable_directory(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("not a directory")
        writer = ReportWriter(blocker)
        with pytest.raises(RuntimeError, match="Failed to write report"):
            writer.write_text("a.txt", "x")
        assert writer.written == []

    def test_default_directory(self, monkeypatch, tmp_path):
        monkeypatch.setenv("WARPED_LAB_OUTPUT_DIR", str(tmp_path / "env"))
        writer = ReportWriter()
        writer.write_text("a.txt", "x")
        assert (tmp_path / "env" / "a.txt").exists()
