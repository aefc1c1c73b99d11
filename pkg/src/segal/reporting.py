"""Multi-seed aggregation, growth curves, and per-class tables."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from segal.exceptions import AggregationError
from segal.harness import ALRunLedger


@dataclass
class StrategySummary:
    num_annotated: list[int]            # stage grid
    miou_mean: list[float]
    miou_std: list[float]
    final_class_iou_mean: list[float | None]
    class_entropy_mean: list[float]
    num_seeds: int


@dataclass
class ExperimentSummary:
    strategies: dict[str, StrategySummary] = field(default_factory=dict)


def aggregate(ledgers: list[ALRunLedger]) -> ExperimentSummary:
    """Stage-wise mean/stdev of mIoU per strategy across seeds."""
    if not ledgers:
        raise AggregationError("no ledgers to aggregate")
    by_strategy: dict[str, list[ALRunLedger]] = {}
    for led in ledgers:
        by_strategy.setdefault(led.strategy, []).append(led)

    summary = ExperimentSummary()
    for strategy, group in sorted(by_strategy.items()):
        grids = [[r.num_annotated for r in led.records] for led in group]
        if any(g != grids[0] for g in grids[1:]):
            raise AggregationError(f"mismatched stage grids for strategy {strategy!r}")
        miou = np.array([[r.miou for r in led.records] for led in group])
        entropy = np.array([[r.class_entropy for r in led.records] for led in group])
        finals = [led.final.per_class_iou for led in group]
        num_classes = len(finals[0])
        class_mean: list[float | None] = []
        for c in range(num_classes):
            vals = [f[c] for f in finals if f[c] is not None]
            class_mean.append(float(np.mean(vals)) if vals else None)
        summary.strategies[strategy] = StrategySummary(
            num_annotated=grids[0],
            miou_mean=miou.mean(axis=0).tolist(),
            miou_std=miou.std(axis=0).tolist(),
            final_class_iou_mean=class_mean,
            class_entropy_mean=entropy.mean(axis=0).tolist(),
            num_seeds=len(group),
        )
    return summary


def render_growth_curve(
    summary: ExperimentSummary,
    out_path: str | Path,
    total_samples: int | None = None,
    upper_bound: float | None = None,
) -> None:
    """One mean-mIoU curve per strategy with a stdev band; x is labeled count
    (or fraction when the pool size is known)."""
    if not summary.strategies:
        raise AggregationError("empty summary, nothing to plot")
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, s in sorted(summary.strategies.items()):
        x = np.array(s.num_annotated, dtype=float)
        if total_samples:
            x = x / total_samples
        mean, std = np.array(s.miou_mean), np.array(s.miou_std)
        ax.plot(x, mean, marker="o", label=name)
        ax.fill_between(x, mean - std, mean + std, alpha=0.2)
    if upper_bound is not None:
        ax.axhline(upper_bound, linestyle="--", color="gray", label="full data")
    ax.set_xlabel("labeled fraction" if total_samples else "labeled samples")
    ax.set_ylabel("mean mIoU")
    ax.legend()
    fig.tight_layout()
    # strip volatile metadata so identical summaries give identical files
    fig.savefig(out_path, metadata=_stable_metadata(Path(out_path).suffix))
    plt.close(fig)


def _stable_metadata(suffix: str) -> dict:
    if suffix == ".png":
        return {"Software": None}
    if suffix == ".svg":
        return {"Date": None}
    return {}


def render_class_table(
    summary: ExperimentSummary, class_names: list[str] | None = None
) -> str:
    """Markdown table of final-stage per-class IoU means, one row per strategy."""
    if not summary.strategies:
        raise AggregationError("empty summary, nothing to tabulate")
    num_classes = len(next(iter(summary.strategies.values())).final_class_iou_mean)
    names = class_names or [f"class_{c}" for c in range(num_classes)]
    lines = ["| strategy | " + " | ".join(names) + " | mIoU |",
             "|" + "---|" * (num_classes + 2)]
    for name, s in sorted(summary.strategies.items()):
        cells = ["-" if v is None else f"{v:.4f}" for v in s.final_class_iou_mean]
        lines.append(f"| {name} | " + " | ".join(cells) + f" | {s.miou_mean[-1]:.4f} |")
    return "\n".join(lines) + "\n"
