import json
import numpy as np
import pandas as pd
import pytest
from src.actions import FreenessError
from src.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, build_parser, main
from src.spectra import SpectrumConvergenceError


def _run(tmp_path, *args):
    return main([*args, "--seed", "7", "--out", str(tmp_path)])


def _summary(tmp_path):
    return json.loads((tmp_path / "summary.json").read_text())


class TestParser:
    def test_lists_and_radius(self):
        args = build_parser().parse_args(
            ["sweep", "--levels", "5,10,20", "--r", "auto",
             "--depths", "3,4"])
        assert args.levels == [5.0, 10.0, 20.0]
        assert args.r == "auto"
        assert args.depths == [3, 4]

    def test_errors_raise(self):
        with pytest.raises(ValueError):
            build_parser().parse_args(["dance"])


class TestPassingCommands:
    def test_weyl(self, tmp_path):
        assert _run(tmp_path, "weyl") == EXIT_PASS
        summary = _summary(tmp_path)
        assert summary["status"] == "PASS"
        assert summary["files"] == ["weyl.csv"]
        assert summary["config"]["seed"] == 7
        assert summary["results"]["relative_error"] <= 0.02

    def test_accumulate(self, tmp_path):
        levels = ",".join(str(t) for t in range(22, 61))
        assert _run(tmp_path, "accumulate", "--levels", levels,
                    "--epsilon", "0.5") == EXIT_PASS
        frame = pd.read_csv(tmp_path / "accumulation.csv")
        assert len(frame) == 39
        assert frame["count"].min() >= 1

    def test_odometer_sweep(self, tmp_path):
        assert _run(tmp_path, "sweep", "--action", "odometer",
                    "--levels", "8,16,32,64,128", "--epsilon", "1",
                    "--r", "0.5") == EXIT_PASS
        summary = _summary(tmp_path)
        assert summary["results"]["expect"] == "decay"
        assert summary["results"]["ratio_last_first"] < 0.25
        frame = pd.read_csv(tmp_path / "sweep.csv")
        assert frame["size"].tolist() == [8, 16, 32, 64, 128]

    def test_sandwich(self, tmp_path):
        assert _run(tmp_path, "sandwich", "--levels", "10,20,40",
                    "--r", "1") == EXIT_PASS
        results = _summary(tmp_path)["results"]
        assert results["R"] == 1.0
        assert results["t0"] == 10.0

    def test_boxcompare(self, tmp_path):
        assert _run(tmp_path, "boxcompare", "--depths", "3,4,5") == EXIT_PASS
        frame = pd.read_csv(tmp_path / "boxcompare.csv")
        np.testing.assert_allclose(frame["L"], 1.0)

    def test_net(self, tmp_path):
        assert _run(tmp_path, "net", "--space", "circle", "--levels", "10",
                    "--epsilon", "1") == EXIT_PASS
        results = _summary(tmp_path)["results"]
        assert results["kind"] == "greedy"
        assert results["total_weight"] == pytest.approx(10.0)
        assert (tmp_path / "net.json").exists()

    def test_graph(self, tmp_path):
        assert _run(tmp_path, "graph", "--levels", "10",
                    "--epsilon", "0.1") == EXIT_PASS
        header = (tmp_path / "edges.txt").read_text().splitlines()[0]
        assert json.loads(header[2:])["size"] == 100
        assert _summary(tmp_path)["results"]["connected"]

    def test_spectrum(self, tmp_path):
        assert _run(tmp_path, "spectrum", "--levels", "10", "--epsilon",
                    "0.1", "--k", "4", "--r", "0.4",
                    "--export-operator") == EXIT_PASS
        frame = pd.read_csv(tmp_path / "spectrum.csv")
        assert frame["index"].tolist() == [0, 1, 2, 3]
        assert abs(frame["eigenvalue"][0]) < 1e-9
        assert (tmp_path / "operator_t10.txt").exists()

    def test_invariant(self, tmp_path):
        assert _run(tmp_path, "invariant", "--levels", "10",
                    "--per-axis", "256", "--r", "0.4",
                    "--trials", "3") == EXIT_PASS
        results = _summary(tmp_path)["results"]
        assert results["kernel_residual"] <= 1e-10
        assert results["grid_margin"] >= 0
        assert (tmp_path / "joint.csv").exists()


class TestFailingCommands:
    def test_empty_accumulation(self, tmp_path):
        assert _run(tmp_path, "accumulate", "--levels", "1,2",
                    "--epsilon", "0.5") == EXIT_FAIL
        summary = _summary(tmp_path)
        assert summary["status"] == "FAIL"
        assert summary["failure"]["invariant"] == "eigenvalue accumulation"

    def test_sandwich_target(self, tmp_path):
        assert _run(tmp_path, "sandwich", "--levels", "10,20,40",
                    "--r", "1", "--target", "-1") == EXIT_FAIL
        assert _summary(tmp_path)["failure"]["worst"]["excess"] > 0

    def test_convergence_failure(self, tmp_path, monkeypatch):
        def no_convergence(*args, **kwargs):
            raise SpectrumConvergenceError("no convergence",
                                           np.array([0.5, 0.25]))

        monkeypatch.setattr("src.cli.bottom_spectrum", no_convergence)
        assert _run(tmp_path, "spectrum", "--levels", "10", "--epsilon",
                    "0.1", "--r", "0.4") == EXIT_FAIL
        failure = _summary(tmp_path)["failure"]
        assert failure["invariant"] == "eigensolver convergence"
        assert failure["worst"] == 0.5


class TestConfigurationErrors:
    @pytest.mark.parametrize("levels", ["5,1", "x", "-1"])
    def test_bad_levels(self, tmp_path, levels):
        assert _run(tmp_path, "weyl", "--levels", levels) == EXIT_CONFIG
        assert not (tmp_path / "summary.json").exists()

    def test_unknown_flag(self, tmp_path):
        assert _run(tmp_path, "weyl", "--colour", "blue") == EXIT_CONFIG

    def test_weyl_needs_closed_form(self, tmp_path):
        assert _run(tmp_path, "weyl", "--space", "so3") == EXIT_CONFIG

    def test_missing_seed(self, tmp_path, monkeypatch):
        monkeypatch.delenv("WARPED_LAB_SEED", raising=False)
        assert main(["weyl", "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_config_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"seed": 3, "levels": [1, 2],
                                    "epsilon": 0.5,
                                    "output_dir": str(tmp_path / "out")}))
        assert main(["accumulate", "--config", str(path)]) == EXIT_FAIL
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["config"]["seed"] == 3


class TestInvariantErrors:
    def test_inadmissible_radius_mid_run(self, tmp_path):
        assert _run(tmp_path, "spectrum", "--levels", "10", "--epsilon",
                    "0.1", "--r", "1.0", "--mode", "direct") == EXIT_FAIL
        summary = _summary(tmp_path)
        assert summary["status"] == "FAIL"
        assert summary["failure"]["invariant"] == "admissible radius"
        assert "not admissible" in summary["failure"]["message"]

    def test_non_free_action_mid_run(self, tmp_path, monkeypatch):
        def not_free(*args, **kwargs):
            raise FreenessError("'a' and 'b' agree at a point")

        monkeypatch.setattr("src.cli.build_warped_graph", not_free)
        assert _run(tmp_path, "graph", "--levels", "10",
                    "--epsilon", "0.1") == EXIT_FAIL
        assert _summary(tmp_path)["failure"]["invariant"] == "free action"
