"""
Tests for the command-line entry point
"""
import json
import sys

import pytest

from ergolab import main
from ergolab.artifacts import ResultRecord
from ergolab.exceptions import BuilderNotFoundError, HypothesisViolation


def record(flags):
    return ResultRecord(experiment="spectrum", config_hash="abc123", seed=0, workers=1, flags=flags)


@pytest.fixture(autouse=True)
def no_env_out(monkeypatch):
    monkeypatch.setattr(main.settings, "out", None)
    monkeypatch.setattr(main.settings, "log_file", None)


@pytest.fixture
def run_cli(monkeypatch):
    def run(*argv):
        monkeypatch.setattr(sys, "argv", ["ergolab", *map(str, argv)])
        return main.main()
    return run


class TestExitCodes:
    """Test the exit codes of the CLI"""

    def test_pass(self, run_cli, config_file, temp_dir, mocker, capsys):
        run = mocker.patch("ergolab.main.run_experiment", return_value=record({"lambda_positive": True}))
        assert run_cli("run", "--config", config_file, "--out", temp_dir / "out") == 0
        assert "spectrum: PASS" in capsys.readouterr().out
        run.assert_called_once()
        assert run.call_args.kwargs["out_dir"] == temp_dir / "out"

    def test_failed_flag(self, run_cli, config_file, temp_dir, mocker, capsys):
        mocker.patch("ergolab.main.run_experiment",
                     return_value=record({"lambda_positive": True, "eigen_converged": False}))
        assert run_cli("run", "--config", config_file, "--out", temp_dir) == 1
        out = capsys.readouterr().out
        assert "spectrum: FAIL" in out
        assert "FAILED" in out

    def test_hypothesis_violation(self, run_cli, config_file, temp_dir, mocker, capsys):
        mocker.patch("ergolab.main.run_experiment",
                     side_effect=HypothesisViolation("not admissible", ["(f1) fails at x=0.5"]))
        assert run_cli("run", "--config", config_file, "--out", temp_dir) == 2
        assert "(f1) fails at x=0.5" in capsys.readouterr().out

    def test_keyboard_interrupt(self, run_cli, config_file, temp_dir, mocker):
        mocker.patch("ergolab.main.run_experiment", side_effect=KeyboardInterrupt)
        assert run_cli("run", "--config", config_file, "--out", temp_dir) == 130

    def test_library_error(self, run_cli, config_file, temp_dir, mocker):
        mocker.patch("ergolab.main.run_experiment",
                     side_effect=BuilderNotFoundError("Base Map 'nope' not found. Available: doubling"))
        assert run_cli("run", "--config", config_file, "--out", temp_dir) == 1

    def test_unexpected_error(self, run_cli, config_file, temp_dir, mocker):
        mocker.patch("ergolab.main.run_experiment", side_effect=RuntimeError("boom"))
        assert run_cli("run", "--config", config_file, "--out", temp_dir, "--verbose") == 1

    def test_bad_config(self, run_cli, temp_dir, mocker):
        path = temp_dir / "broken.toml"
        path.write_text("[system\n")
        run = mocker.patch("ergolab.main.run_experiment")
        assert run_cli("run", "--config", path) == 1
        run.assert_not_called()

    def test_no_command(self, run_cli, capsys):
        assert run_cli() == 1
        assert "usage" in capsys.readouterr().out

    def test_config_required(self, run_cli):
        with pytest.raises(SystemExit):
            run_cli("spectrum")


class TestOverrides:
    """Test command-line and environment overrides"""

    def test_env_out_takes_precedence(self, run_cli, config_file, temp_dir, mocker, monkeypatch):
        monkeypatch.setattr(main.settings, "out", str(temp_dir / "env"))
        run = mocker.patch("ergolab.main.run_experiment", return_value=record({}))
        run_cli("run", "--config", config_file, "--out", temp_dir / "cli")
        assert run.call_args.kwargs["out_dir"] == temp_dir / "env"
        assert (temp_dir / "env").is_dir()

    def test_seed_override(self, run_cli, config_file, temp_dir, mocker):
        run = mocker.patch("ergolab.main.run_experiment", return_value=record({}))
        run_cli("run", "--config", config_file, "--out", temp_dir, "--seed", 42)
        cfg = run.call_args.args[0]
        assert cfg.output.seed == 42
        assert cfg.experiment.kind == "spectrum"

    def test_workers_option(self, run_cli, config_file, temp_dir, mocker):
        run = mocker.patch("ergolab.main.run_experiment", return_value=record({}))
        run_cli("run", "--config", config_file, "--out", temp_dir, "--workers", 3)
        assert run.call_args.kwargs["workers"] == 3

    def test_subcommand_sets_kind(self, run_cli, config_data, temp_dir, mocker):
        """The subcommand replaces the kind declared in the config"""
        config_data["experiment"] = {"kind": "spectrum", "params": {}}
        path = temp_dir / "experiment.json"
        path.write_text(json.dumps(config_data))
        run = mocker.patch("ergolab.main.run_experiment", return_value=record({}))
        assert run_cli("clt", "--config", path, "--out", temp_dir) == 0
        assert run.call_args.args[0].experiment.kind == "clt"

    def test_log_file_in_output_directory(self, run_cli, config_file, temp_dir, mocker):
        mocker.patch("ergolab.main.run_experiment", return_value=record({}))
        run_cli("run", "--config", config_file, "--out", temp_dir)
        assert (temp_dir / "ergolab.log").exists()


class TestParser:
    def test_subcommands(self):
        parser = main.create_parser()
        for kind in ("run", "spectrum", "equilibrium", "decay", "clt", "stability", "verify", "cohomology"):
            args = parser.parse_args([kind, "--config", "x.toml"])
            assert args.command == kind
            assert args.workers is None
