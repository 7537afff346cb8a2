"""Command-line entrypoint for the decomposed-critic lab."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import typer
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape

from .config import ExperimentConfig, load_config
from .errors import ConfigError, VDFPError
from .harness import ExperimentRunner, load_record, sweep as run_sweep
from .plotting import plot_learning_curves
from .presenter import show_checks, show_header, show_runs
from .verify import run_checks

console = Console()
app = typer.Typer(
    help="Train and compare decomposed-critic agents on delayed-reward control tasks."
)


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=True, show_path=False)],
        force=True,
    )


def _load(
    config: Optional[Path],
    env: Optional[str],
    agent: Optional[str],
    delay_mode: Optional[str],
    delay_steps: Optional[int],
    seed: Optional[int],
    steps: Optional[int],
    out: Optional[Path],
) -> ExperimentConfig:
    overrides: Dict[str, Any] = {
        "env": env,
        "agent": agent,
        "delay.mode": delay_mode,
        "delay.d": delay_steps,
        "seed": seed,
        "total_steps": steps,
        "output_dir": str(out) if out is not None else None,
    }
    return load_config(config, overrides)


def _fail(exc: Exception) -> typer.Exit:
    code = 2 if isinstance(exc, (ConfigError, ValidationError)) else 1
    console.print(f"[bold red]Error:[/bold red] {escape(str(exc))}")
    return typer.Exit(code=code)


ConfigOption = typer.Option(None, "--config", help="Flat YAML config file with dotted keys.")
EnvOption = typer.Option(None, "--env", help="Registered environment name.")
AgentOption = typer.Option(None, "--agent", help="vd_ddpg | vd_ppo | ddpg | ppo | ddsr.")
DelayModeOption = typer.Option(None, "--delay-mode", help="none | accumulate | shift.")
DelayStepsOption = typer.Option(None, "--delay-steps", help="Delay step d.")
StepsOption = typer.Option(None, "--steps", help="Total environment steps.")
OutOption = typer.Option(None, "--out", help="Root directory for run outputs.")
VerboseOption = typer.Option(False, "--verbose", "-v", help="Log at DEBUG level.")


@app.command()
def run(
    config: Optional[Path] = ConfigOption,
    env: Optional[str] = EnvOption,
    agent: Optional[str] = AgentOption,
    delay_mode: Optional[str] = DelayModeOption,
    delay_steps: Optional[int] = DelayStepsOption,
    seed: Optional[int] = typer.Option(None, "--seed", help="Master seed of the run."),
    steps: Optional[int] = StepsOption,
    out: Optional[Path] = OutOption,
    resume: bool = typer.Option(False, help="Continue from the run's checkpoint.pt."),
    checkpoint: bool = typer.Option(True, help="Write checkpoint.pt at the end of the run."),
    verbose: bool = VerboseOption,
) -> None:
    """Train one agent with one seed."""

    _configure_logging(verbose)
    try:
        cfg = _load(config, env, agent, delay_mode, delay_steps, seed, steps, out)
        show_header("vdfp-lab run", cfg.run_name())
        record = ExperimentRunner(cfg).run(save_checkpoint=checkpoint, resume=resume)
    except (VDFPError, ValidationError) as exc:
        raise _fail(exc) from exc
    show_runs([record], title=cfg.run_name())


@app.command()
def sweep(
    seeds: List[int] = typer.Option([0, 1, 2, 3, 4], "--seed", help="Seeds to run (repeatable)."),
    config: Optional[Path] = ConfigOption,
    env: Optional[str] = EnvOption,
    agent: Optional[str] = AgentOption,
    delay_mode: Optional[str] = DelayModeOption,
    delay_steps: Optional[int] = DelayStepsOption,
    steps: Optional[int] = StepsOption,
    out: Optional[Path] = OutOption,
    workers: int = typer.Option(1, "--workers", min=1, help="Parallel processes."),
    verbose: bool = VerboseOption,
) -> None:
    """Run the same configuration over several seeds."""

    _configure_logging(verbose)
    try:
        cfg = _load(config, env, agent, delay_mode, delay_steps, None, steps, out)
        show_header("vdfp-lab sweep", f"{cfg.agent} on {cfg.env}, seeds {seeds}")
        records = run_sweep(cfg, seeds, workers=workers)
    except (VDFPError, ValidationError) as exc:
        raise _fail(exc) from exc
    show_runs(records, title="Sweep")


@app.command()
def plot(
    run_dirs: List[Path] = typer.Argument(..., help="Run directories holding log.csv."),
    out: Path = typer.Option(Path("plots"), "--out", help="Where PNG files are written."),
    window: int = typer.Option(100, "--window", min=1, help="Moving-average window."),
    verbose: bool = VerboseOption,
) -> None:
    """Plot smoothed learning curves, one figure per environment."""

    _configure_logging(verbose)
    try:
        records = [load_record(run_dir) for run_dir in run_dirs]
    except OSError as exc:
        raise _fail(VDFPError(f"Cannot read run directory: {exc}")) from exc
    except (VDFPError, ValidationError) as exc:
        raise _fail(exc) from exc
    for path in plot_learning_curves(records, out, window=window):
        console.print(f"[green]wrote[/green] {path}")


@app.command()
def verify(
    check: Optional[List[str]] = typer.Option(None, "--check", help="Run only these checks."),
    verbose: bool = VerboseOption,
) -> None:
    """Run the oracle and property checks; exits nonzero if any fails."""

    _configure_logging(verbose)
    try:
        results = run_checks(check or None)
    except VDFPError as exc:
        raise _fail(exc) from exc
    show_checks(results)
    if not all(result.passed for result in results):
        raise typer.Exit(code=1)


if __name__ == "__main__":  # pragma: no cover
    app()
