"""Command-line entry points: gen-data, run, score, plot."""

from __future__ import annotations

from pathlib import Path

import click
import torch

from segal import data as data_mod
from segal.config import ExperimentConfig
from segal.harness import ALRunLedger, run_active_learning, score_pool
from segal.model import SegmentationNet
from segal.attention import DifficultyHead
from segal.reporting import aggregate, render_class_table, render_growth_curve


@click.group()
def main() -> None:
    """Difficulty-aware active learning for semantic segmentation."""


def _load_config(path: str | None) -> ExperimentConfig:
    return ExperimentConfig.from_file(path) if path else ExperimentConfig()


def _prepare(cfg: ExperimentConfig, seed: int):
    if cfg.data_root:
        samples = data_mod.load_dataset(cfg.data_root)
    else:
        samples = data_mod.generate_synthetic_dataset(cfg.n_images, cfg.image_size, seed=seed)
    train, test = data_mod.split_train_test(samples, cfg.test_fraction, seed=seed)
    pool = data_mod.split_initial(train, cfg.initial_fraction, seed=seed)
    return pool, test


@main.command("gen-data")
@click.option("--out", required=True, type=click.Path())
@click.option("--n", default=200, show_default=True)
@click.option("--height", default=64, show_default=True)
@click.option("--width", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
def gen_data(out: str, n: int, height: int, width: int, seed: int) -> None:
    """Write a synthetic segmentation dataset to OUT/images and OUT/labels."""
    samples = data_mod.generate_synthetic_dataset(n, (height, width), seed=seed)
    data_mod.save_dataset(samples, out)
    click.echo(f"wrote {len(samples)} samples to {out}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--strategy", default=None, help="override the config's strategy")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def run(config_path: str | None, strategy: str | None, seed: int, out: str) -> None:
    """Run one active-learning experiment and write its ledger to OUT."""
    cfg = _load_config(config_path)
    strategy = strategy or cfg.strategy
    pool, test = _prepare(cfg, seed)
    ledger = run_active_learning(cfg, pool, test, strategy=strategy, seed=seed, out_dir=out)
    click.echo(f"{strategy} seed {seed}: final mIoU {ledger.final.miou:.4f} "
               f"({ledger.final.num_annotated} labeled, status {ledger.status})")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--strategy", default=None)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def score(config_path: str | None, checkpoint: str, strategy: str | None, seed: int, out: str) -> None:
    """One-off scoring of the unlabeled pool with a saved checkpoint."""
    cfg = _load_config(config_path)
    strategy = strategy or cfg.strategy
    pool, _ = _prepare(cfg, seed)
    state = torch.load(checkpoint, weights_only=True)
    seg = SegmentationNet(cfg.num_classes, base_channels=cfg.base_channels,
                          dropout_rate=cfg.dropout_rate)
    seg.load_state_dict(state["seg"])
    head = DifficultyHead(cfg.num_classes, pam_enabled=cfg.pam_enabled)
    head.load_state_dict(state["head"])
    seg.eval(), head.eval()
    scores = score_pool(seg, head, pool, pool.unlabeled_ids, strategy, cfg, seed=seed)
    with open(out, "w") as fh:
        fh.write("id\tstrategy\tscore\n")
        for s in sorted(scores, key=lambda s: (-s.score, s.sample_id)):
            fh.write(f"{s.sample_id}\t{s.strategy}\t{s.score:.10g}\n")
    click.echo(f"wrote {len(scores)} scores to {out}")


@main.command()
@click.option("--ledgers", required=True, multiple=True, type=click.Path(exists=True),
              help="ledger .jsonl files (repeatable); globs allowed via the shell")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--total-samples", default=None, type=int,
              help="pool size, to plot labeled fractions instead of counts")
@click.option("--upper-bound", default=None, type=float)
def plot(ledgers: tuple[str, ...], out_dir: str, total_samples: int | None,
         upper_bound: float | None) -> None:
    """Aggregate ledgers into a growth curve and a per-class IoU table."""
    summary = aggregate([ALRunLedger.from_jsonl(p) for p in ledgers])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    render_growth_curve(summary, out / "growth_curve.png",
                        total_samples=total_samples, upper_bound=upper_bound)
    (out / "class_iou_table.md").write_text(render_class_table(summary))
    click.echo(f"wrote {out / 'growth_curve.png'} and {out / 'class_iou_table.md'}")


if __name__ == "__main__":
    main()
