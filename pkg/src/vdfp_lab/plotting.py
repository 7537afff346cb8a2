"""Learning-curve figures, one PNG per environment."""

from __future__ import annotations

import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import SMOOTHING_WINDOW, learning_curve_band  # noqa: E402
from .schemas import RunRecord  # noqa: E402

logger = logging.getLogger(__name__)


def group_records(records: Sequence[RunRecord]) -> Dict[str, Dict[str, List[RunRecord]]]:
    """``{env: {label: [records across seeds]}}`` in first-seen order."""

    grouped: Dict[str, Dict[str, List[RunRecord]]] = defaultdict(lambda: defaultdict(list))
    for record in records:
        grouped[record.env][record.label].append(record)
    return grouped


def plot_learning_curves(
    records: Sequence[RunRecord], out_dir: Path, window: int = SMOOTHING_WINDOW
) -> List[Path]:
    """Mean smoothed return per label against time steps.

    A shaded band of half a standard deviation is drawn only for labels with
    at least two records.
    """

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    for env, by_label in group_records(records).items():
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for label, group in by_label.items():
            usable = [record for record in group if record.rows]
            if not usable:
                logger.warning("no finished episodes for %s on %s", label, env)
                continue
            band = learning_curve_band(usable, window)
            line = ax.plot(band.steps, band.mean, label=f"{label} (n={len(usable)})")[0]
            if len(usable) >= 2:
                ax.fill_between(
                    band.steps,
                    band.mean - band.half_width,
                    band.mean + band.half_width,
                    color=line.get_color(),
                    alpha=0.25,
                    linewidth=0,
                )
        ax.set_title(env)
        ax.set_xlabel("time steps")
        ax.set_ylabel(f"average return (last {window} episodes)")
        ax.grid(alpha=0.3)
        if ax.get_legend_handles_labels()[0]:
            ax.legend(loc="best", fontsize="small")
        fig.tight_layout()
        path = out_dir / f"{env}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
        logger.info("wrote %s", path)
    return written
