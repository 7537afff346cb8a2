"""Pretty-print helpers for run summaries and verification results."""

from __future__ import annotations

from typing import Optional, Sequence

from rich.console import Console
from rich.markdown import Markdown
from rich.panel import Panel
from rich.table import Table

from .schemas import CheckResult, RunRecord

console = Console()


def show_header(title: str, subtitle: str | None = None) -> None:
    text = f"# {title}\n\n{subtitle or ''}"
    console.print(Panel(Markdown(text), expand=False))


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.2f}"


def show_runs(records: Sequence[RunRecord], title: str = "Runs") -> None:
    table = Table(title=title)
    table.add_column("env")
    table.add_column("agent")
    table.add_column("seed", justify="right")
    table.add_column("episodes", justify="right")
    table.add_column("final avg", justify="right")
    table.add_column("max avg", justify="right")
    table.add_column("mean avg", justify="right")
    for record in records:
        summary = record.summary
        table.add_row(
            record.env,
            record.label,
            str(record.seed),
            str(summary.episodes),
            _fmt(summary.final_average),
            _fmt(summary.max_average),
            _fmt(summary.mean_average),
        )
    console.print(table)


def show_checks(results: Sequence[CheckResult]) -> None:
    table = Table(title="Verification")
    table.add_column("check")
    table.add_column("result")
    table.add_column("detail")
    for result in results:
        status = "[green]pass[/green]" if result.passed else "[bold red]FAIL[/bold red]"
        table.add_row(result.name, status, result.detail)
    console.print(table)
    failed = sum(not result.passed for result in results)
    if failed:
        console.print(f"[bold red]{failed} of {len(results)} checks failed[/bold red]")
    else:
        console.print(f"[bold green]all {len(results)} checks passed[/bold green]")
