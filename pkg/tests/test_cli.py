"""Tests for the command-line interface."""

from pathlib import Path

from typer.testing import CliRunner

from vdfp_lab.cli import app

runner = CliRunner()


def test_verify_selected_check_passes() -> None:
    result = runner.invoke(app, ["verify", "--check", "gae", "--check", "discounted_return"])
    assert result.exit_code == 0, result.output
    assert "gae" in result.output


def test_verify_unknown_check_fails() -> None:
    result = runner.invoke(app, ["verify", "--check", "no_such_check"])
    assert result.exit_code == 1
    assert "unknown checks" in result.output


def test_run_then_plot(tmp_path: Path) -> None:
    args = [
        "run",
        "--env",
        "double_integrator_1d",
        "--agent",
        "ddpg",
        "--steps",
        "200",
        "--seed",
        "0",
        "--out",
        str(tmp_path),
        "--no-checkpoint",
    ]
    result = runner.invoke(app, args)
    assert result.exit_code == 0, result.output
    run_dir = tmp_path / "double_integrator_1d_ddpg_seed0"
    assert (run_dir / "log.csv").exists()
    assert not (run_dir / "checkpoint.pt").exists()

    plots = tmp_path / "plots"
    result = runner.invoke(app, ["plot", str(run_dir), "--out", str(plots), "--window", "1"])
    assert result.exit_code == 0, result.output
    assert (plots / "double_integrator_1d.png").exists()


def test_bad_config_exits_with_code_two(tmp_path: Path) -> None:
    config = tmp_path / "bad.yaml"
    config.write_text("vae.z_dim: -3\n", encoding="utf-8")
    result = runner.invoke(app, ["run", "--config", str(config), "--out", str(tmp_path)])
    assert result.exit_code == 2
    assert "Invalid configuration" in result.output


def test_unknown_agent_is_a_config_error(tmp_path: Path) -> None:
    result = runner.invoke(app, ["run", "--agent", "sac", "--out", str(tmp_path)])
    assert result.exit_code == 2


def test_plot_missing_run_directory_fails(tmp_path: Path) -> None:
    result = runner.invoke(app, ["plot", str(tmp_path / "nowhere")])
    assert result.exit_code != 0
    assert "Cannot read" in result.output
