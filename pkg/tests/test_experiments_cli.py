import json
import os

import pytest

from boundary_engine.errors import NumericalFailureError
from boundary_engine.pipelines import experiments_cli
from boundary_engine.pipelines.experiments_cli import (
    EXIT_INVALID_CONFIG,
    EXIT_INVARIANT_FAILURE,
    EXIT_NUMERICAL_FAILURE,
    EXIT_OK,
    main,
)
from boundary_engine.schemas.experiment import CheckResult, ExperimentResult

SMALL_EXP2 = {"samples": 20_000, "offset_grid": [0.0, 1.0]}


def write_config(tmp_path, values, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(values))
    return str(path)


def fake_verify(passed):
    def runner(config):
        checks = [CheckResult(name="softmax_overflow", passed=True),
                  CheckResult(name="shape_derivative", passed=passed, observed=0.5, tolerance=0.01)]
        return ExperimentResult(
            experiment="verify",
            columns=[],
            records=[check.model_dump() for check in checks],
            metrics={"passed": passed, "num_checks": 2, "num_failed": 0 if passed else 1,
                     "failed": [] if passed else ["shape_derivative"]},
        )
    return runner


class TestMain:
    def test_exp2_writes_all_artifacts(self, tmp_path):
        out = tmp_path / "exp2"
        code = main(["exp2", "--config", write_config(tmp_path, SMALL_EXP2), "--out", str(out), "--seed", "3"])
        assert code == EXIT_OK
        for name in ("exp2.csv", "exp2_summary.json", "exp2_table.txt",
                     "exp2_gap_vs_mass.dat", "exp2_flip_vs_mass.dat", os.path.join("logs", "runs.log")):
            assert (out / name).exists(), name

        header, *rows = (out / "exp2.csv").read_text().splitlines()
        assert header == "offset,bm,gap,flip"
        assert len(rows) == 2

        summary = json.loads((out / "exp2_summary.json").read_text())
        assert summary["experiment"] == "exp2"
        assert summary["seed"] == 3
        assert summary["n"] == 20_000
        assert len(summary["config_hash"]) == 64

    def test_reruns_are_byte_identical(self, tmp_path):
        config = write_config(tmp_path, SMALL_EXP2)
        assert main(["exp2", "--config", config, "--out", str(tmp_path / "a")]) == EXIT_OK
        assert main(["exp2", "--config", config, "--out", str(tmp_path / "b")]) == EXIT_OK
        assert (tmp_path / "a" / "exp2.csv").read_bytes() == (tmp_path / "b" / "exp2.csv").read_bytes()

    def test_samples_flag_overrides_file(self, tmp_path):
        out = tmp_path / "run"
        main(["exp2", "--config", write_config(tmp_path, SMALL_EXP2), "--out", str(out), "--samples", "5000"])
        assert json.loads((out / "exp2_summary.json").read_text())["n"] == 5000

    @pytest.mark.parametrize("values", [
        {"tau_grid": [0.2, 0.1]},
        {"unknown_key": 1},
        {"experiment": "exp1"},
        {"epsilon": 0.75},
    ])
    def test_invalid_config_exits_1(self, tmp_path, values):
        config = write_config(tmp_path, values)
        assert main(["exp2", "--config", config, "--out", str(tmp_path / "out")]) == EXIT_INVALID_CONFIG

    def test_missing_config_file_exits_1(self, tmp_path):
        assert main(["exp1", "--config", str(tmp_path / "nope.json")]) == EXIT_INVALID_CONFIG

    def test_too_small_dimension_exits_1(self, tmp_path):
        config = write_config(tmp_path, {"dim": 2, "samples": 100})
        assert main(["exp2", "--config", config, "--out", str(tmp_path / "out")]) == EXIT_INVALID_CONFIG

    def test_verify_failure_exits_2(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setitem(experiments_cli.EXPERIMENT_RUNNERS, "verify", fake_verify(False))
        out = tmp_path / "verify"
        assert main(["verify", "--out", str(out)]) == EXIT_INVARIANT_FAILURE
        assert "[FAIL] shape_derivative" in capsys.readouterr().out
        report = json.loads((out / "verify_report.json").read_text())
        assert report["metrics"]["failed"] == ["shape_derivative"]
        assert "1/2 checks passed" in (out / "verify_report.txt").read_text()

    def test_verify_success_exits_0(self, tmp_path, monkeypatch):
        monkeypatch.setitem(experiments_cli.EXPERIMENT_RUNNERS, "verify", fake_verify(True))
        assert main(["verify", "--out", str(tmp_path / "verify")]) == EXIT_OK

    def test_numerical_failure_exits_3(self, tmp_path, monkeypatch):
        def broken(config):
            raise NumericalFailureError("quadrature did not converge")

        monkeypatch.setitem(experiments_cli.EXPERIMENT_RUNNERS, "exp3", broken)
        assert main(["exp3", "--out", str(tmp_path / "exp3")]) == EXIT_NUMERICAL_FAILURE
