"""Seeded experiment runs, per-episode CSV logs, summaries and seed sweeps."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .agents import build_agent
from .checkpoint import checkpoint_load, checkpoint_save
from .config import ExperimentConfig, dump_config, load_config
from .errors import VDFPError
from .schemas import LOG_COLUMNS, LogRow, RunRecord, RunSummary

logger = logging.getLogger(__name__)

SMOOTHING_WINDOW = 100


def moving_average(values: Sequence[float], window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Trailing mean over the last ``min(i + 1, window)`` values at every index."""

    values = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be positive")
    cumulative = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(1, len(values) + 1)
    starts = np.maximum(idx - window, 0)
    return (cumulative[idx] - cumulative[starts]) / (idx - starts)


def summarize(rows: Sequence[LogRow], window: int = SMOOTHING_WINDOW) -> RunSummary:
    if not rows:
        return RunSummary(episodes=0)
    averages = moving_average([row.episode_return for row in rows], window)
    return RunSummary(
        episodes=len(rows),
        final_average=float(averages[-1]),
        max_average=float(averages.max()),
        mean_average=float(averages.mean()),
    )


def read_log(path: Path) -> List[LogRow]:
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != LOG_COLUMNS:
            raise VDFPError(f"{path} does not have the expected log columns {LOG_COLUMNS}")
        return [
            LogRow(
                global_step=int(item["global_step"]),
                episode_index=int(item["episode_index"]),
                **{col: float(item[col]) for col in LOG_COLUMNS[2:]},
            )
            for item in reader
        ]


def load_record(run_dir: Path) -> RunRecord:
    """Rebuild a :class:`RunRecord` from a finished run directory."""

    config = load_config(run_dir / "config.yaml")
    rows = read_log(run_dir / "log.csv")
    return _record(config, rows)


def _record(config: ExperimentConfig, rows: List[LogRow]) -> RunRecord:
    return RunRecord(
        env=config.env,
        agent=config.agent,
        seed=config.seed,
        delay_mode=config.delay.mode,
        delay_steps=config.delay.d,
        rows=rows,
        summary=summarize(rows),
    )


class ExperimentRunner:
    """Runs one configuration and leaves ``config.yaml``, ``log.csv``,
    ``summary.json`` and optionally ``checkpoint.pt`` in its run directory."""

    def __init__(self, config: ExperimentConfig, run_dir: Optional[Path] = None) -> None:
        self.config = config
        self.run_dir = run_dir or Path(config.output_dir) / config.run_name()

    @property
    def log_path(self) -> Path:
        return self.run_dir / "log.csv"

    @property
    def checkpoint_path(self) -> Path:
        return self.run_dir / "checkpoint.pt"

    def run(self, save_checkpoint: bool = True, resume: bool = False) -> RunRecord:
        """Train, flushing one log row per finished episode.

        With ``resume`` the agent restores ``checkpoint.pt`` and the log is
        appended to. A module abort propagates after the partial log is closed.
        """

        self.run_dir.mkdir(parents=True, exist_ok=True)
        dump_config(self.config, self.run_dir / "config.yaml")
        agent = build_agent(self.config)
        appending = resume and self.log_path.exists()
        if resume:
            checkpoint_load(agent, self.checkpoint_path)
            logger.info("resumed %s at step %d", self.config.run_name(), agent.global_step)

        with self.log_path.open("a" if appending else "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            if not appending:
                writer.writerow(LOG_COLUMNS)
                handle.flush()

            def write(row: LogRow) -> None:
                writer.writerow(row.as_csv_row())
                handle.flush()

            try:
                agent.train(self.config.total_steps, on_episode=write)
            except VDFPError:
                logger.error("run %s aborted; partial log kept at %s", self.run_dir, self.log_path)
                raise

        rows = read_log(self.log_path)
        record = _record(self.config, rows)
        (self.run_dir / "summary.json").write_text(
            record.summary.model_dump_json(indent=2), encoding="utf-8"
        )
        if save_checkpoint:
            checkpoint_save(agent, self.checkpoint_path)
        logger.info(
            "finished %s: %d episodes, final average %s",
            self.config.run_name(),
            record.summary.episodes,
            record.summary.final_average,
        )
        return record


def _run_one(config: ExperimentConfig) -> RunRecord:
    return ExperimentRunner(config).run()


def sweep(
    config: ExperimentConfig, seeds: Sequence[int], workers: int = 1
) -> List[RunRecord]:
    """One run per seed; ``workers > 1`` runs them in separate processes."""

    configs = [config.model_copy(update={"seed": seed}) for seed in seeds]
    if workers <= 1:
        return [_run_one(cfg) for cfg in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, configs))


@dataclass(frozen=True)
class CurveBand:
    steps: np.ndarray
    mean: np.ndarray
    half_width: np.ndarray


def learning_curve_band(
    records: Sequence[RunRecord], window: int = SMOOTHING_WINDOW
) -> CurveBand:
    """Mean and half the sample std of the smoothed return across records.

    Records are aligned by episode index and cut to the shortest one.
    """

    if not records:
        raise ValueError("need at least one record")
    length = min(len(record.rows) for record in records)
    curves = np.stack(
        [
            moving_average([row.episode_return for row in record.rows[:length]], window)
            for record in records
        ]
    )
    steps = np.array([row.global_step for row in records[0].rows[:length]], dtype=np.float64)
    if len(records) < 2:
        half = np.zeros(length)
    else:
        half = 0.5 * curves.std(axis=0, ddof=1)
    return CurveBand(steps=steps, mean=curves.mean(axis=0), half_width=half)
