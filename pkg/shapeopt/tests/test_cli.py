import csv
import json
from unittest.mock import patch

import pytest
import yaml

from shapeopt.main import build_parser, main
from shapeopt.schemas.history import IterationRecord, OptHistory, RunSummary
from shapeopt.schemas.report import CheckResult, VerificationReport


def _write_config(path, directory, **optimizer):
    data = {
        "name": "cli-small",
        "problem": {"n_s": 8, "layers": 2},
        "parameterization": {"kind": "hicks_henne", "per_side": 2},
        "optimizer": {"algorithm": "sqp_eq", "max_iter": 2, "max_design_update": 0.05, **optimizer},
        "output": {"directory": str(directory)},
    }
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


@pytest.fixture
def history_dir(tmp_path):
    """A finished run directory with history.csv and summary.json."""
    directory = tmp_path / "sobolev"
    directory.mkdir()
    history = OptHistory(algorithm="sqp_eq")
    history.append(IterationRecord(iter=0, objective=1.0, grad_norm=0.5, sweeps=100))
    history.append(IterationRecord(iter=1, objective=0.5, grad_norm=1e-7, sweeps=150))
    history.termination = "converged"
    history.wall_time_s = 41280.76
    history.to_csv(directory / "history.csv")
    summary = RunSummary.from_history("sobolev", history)
    (directory / "summary.json").write_text(summary.model_dump_json(), encoding="utf-8")
    return directory


def test_parser_knows_the_commands():
    parser = build_parser()
    assert parser.parse_args(["verify", "operators"]).level == "operators"
    assert parser.parse_args(["verify", "refinement"]).level == "refinement"
    assert parser.parse_args(["report", "a.csv", "b.csv"]).histories == ["a.csv", "b.csv"]
    with pytest.raises(SystemExit) as exc_info:
        parser.parse_args(["verify", "everything"])
    assert exc_info.value.code == 2


def test_run_writes_artifacts(tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(_write_config(tmp_path / "run.yaml", out))]) == 0
    for name in ("history.csv", "summary.json", "surface.csv"):
        assert (out / name).exists()
    assert not (out / "piggyback_residuals.csv").exists()
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["name"] == "cli-small"
    assert summary["algorithm"] == "sqp_eq"
    assert summary["single_solve_sweeps"] > 0


def test_run_is_deterministic(tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["run", str(_write_config(tmp_path / "a.yaml", first))]) == 0
    assert main(["run", str(_write_config(tmp_path / "b.yaml", second))]) == 0
    assert (first / "history.csv").read_bytes() == (second / "history.csv").read_bytes()
    assert (first / "surface.csv").read_bytes() == (second / "surface.csv").read_bytes()


def test_oneshot_run_writes_piggyback_trace(tmp_path):
    out = tmp_path / "oneshot"
    config = _write_config(tmp_path / "run.yaml", out, algorithm="oneshot", inner_steps=3, max_design_update=5e-3)
    assert main(["run", str(config)]) == 0
    with (out / "piggyback_residuals.csv").open(encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["outer_iter", "inner_step", "primal_residual", "adjoint_residual"]
    assert len(rows) == 1 + 3 * 3


def test_output_directory_from_environment(tmp_path, settings_env):
    override = tmp_path / "from-env"
    settings_env(output_dir=override)
    assert main(["run", str(_write_config(tmp_path / "run.yaml", tmp_path / "ignored"))]) == 0
    assert (override / "history.csv").exists()
    assert not (tmp_path / "ignored").exists()


def test_invalid_config_exits_with_usage_code(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("smoothing:\n  eps2: -1.0\n", encoding="utf-8")
    assert main(["run", str(path)]) == 2
    assert "smoothing.eps2" in capsys.readouterr().err


def test_missing_config_exits_with_usage_code(tmp_path):
    assert main(["run", str(tmp_path / "absent.yaml")]) == 2


def test_verify_operators_passes(tmp_path, capsys):
    assert main(["verify", "operators", "--output", str(tmp_path)]) == 0
    text = (tmp_path / "verify_operators.txt").read_text(encoding="utf-8")
    assert "status: PASS" in text
    assert "[operators.fourier_amplification]" in text
    assert "level: operators" in capsys.readouterr().out


def test_verify_reports_failures(tmp_path, capsys):
    failing = VerificationReport(level="gradient", seed=1, checks=[
        CheckResult(check_id="gradient.fd_directional", passed=False, measured=1e-3, tolerance=1e-6),
    ])
    with patch("shapeopt.main.run_verification", return_value=failing) as run:
        assert main(["verify", "gradient", "--seed", "1", "--output", str(tmp_path)]) == 1
    run.assert_called_once_with("gradient", 1)
    assert "gradient.fd_directional" in capsys.readouterr().err
    assert "status: FAIL" in (tmp_path / "verify_gradient.txt").read_text(encoding="utf-8")


def test_report_computes_retardation(history_dir, tmp_path, capsys):
    output = tmp_path / "comparison.csv"
    code = main(["report", str(history_dir / "history.csv"), "--baseline-time", "2224.1",
                 "--baseline-iters", "50", "--output", str(output)])
    assert code == 0
    with output.open(encoding="utf-8") as handle:
        row = next(csv.DictReader(handle))
    assert row["run"] == "sobolev"
    assert round(float(row["time_factor"]), 2) == 18.56
    assert float(row["iter_factor"]) == pytest.approx(3.0)
    assert "sobolev" in capsys.readouterr().out


def test_report_without_baseline_leaves_factors_empty(history_dir, tmp_path):
    output = tmp_path / "comparison.csv"
    assert main(["report", str(history_dir / "history.csv"), "--output", str(output)]) == 0
    with output.open(encoding="utf-8") as handle:
        row = next(csv.DictReader(handle))
    assert row["time_factor"] == ""
    assert row["iterations"] == "1"


def test_report_on_unreadable_history(tmp_path, capsys):
    bogus = tmp_path / "history.csv"
    bogus.write_text("not,a,history\n", encoding="utf-8")
    assert main(["report", str(bogus), "--output", str(tmp_path / "c.csv")]) == 1
    assert "Cannot read history" in capsys.readouterr().err
