"""The active-learning round loop: train, score, select, annotate, record."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from segal import acquisition as acq
from segal.attention import DifficultyHead, downsample_probs
from segal.config import ExperimentConfig
from segal.data import SamplePool, SegSample
from segal.exceptions import ConfigurationError, UndefinedMetricError
from segal.model import SegmentationNet, encoder_features, forward_mc_dropout, predict_probs
from segal.training import train_two_branch

logger = logging.getLogger(__name__)


@dataclass
class RoundRecord:
    round: int
    num_annotated: int
    selected_ids: list[str]
    per_class_iou: list[float | None]
    miou: float
    class_entropy: float
    wall_time: float
    seed: int


@dataclass
class ALRunLedger:
    strategy: str
    seed: int
    status: str = "complete"
    records: list[RoundRecord] = field(default_factory=list)

    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"strategy": self.strategy, "seed": self.seed, "status": self.status}) + "\n")
            for rec in self.records:
                fh.write(json.dumps(asdict(rec)) + "\n")

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "ALRunLedger":
        lines = Path(path).read_text().splitlines()
        header = json.loads(lines[0])
        ledger = cls(**header)
        for line in lines[1:]:
            ledger.records.append(RoundRecord(**json.loads(line)))
        return ledger

    @property
    def final(self) -> RoundRecord:
        return self.records[-1]


def confusion_matrix(
    preds: np.ndarray, labels: np.ndarray, num_classes: int, ignore_label: int
) -> np.ndarray:
    valid = labels != ignore_label
    idx = num_classes * labels[valid].astype(np.int64) + preds[valid].astype(np.int64)
    return np.bincount(idx, minlength=num_classes**2).reshape(num_classes, num_classes)


def iou_from_confusion(cm: np.ndarray) -> tuple[list[float | None], float]:
    """Per-class IoU; classes absent from both GT and prediction are excluded."""
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    ious: list[float | None] = []
    present = []
    for c in range(cm.shape[0]):
        if union[c] == 0:
            logger.info("class %d absent from GT and prediction; excluded from mIoU", c)
            ious.append(None)
        else:
            val = float(tp[c] / union[c])
            ious.append(val)
            present.append(val)
    if not present:
        raise UndefinedMetricError("no class present in either GT or prediction")
    return ious, float(np.mean(present))


def evaluate(
    model: SegmentationNet, samples: list[SegSample], num_classes: int, ignore_label: int
) -> tuple[list[float | None], float]:
    """Whole-set confusion-matrix IoU per class and its unweighted mean."""
    if not samples:
        raise ConfigurationError("empty evaluation set")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for s in samples:
        pred = predict_probs(model, s.image).argmax
        cm += confusion_matrix(pred, s.label, num_classes, ignore_label)
    return iou_from_confusion(cm)


def class_distribution_entropy(
    labels: list[np.ndarray], num_classes: int, ignore_label: int
) -> float:
    """Shannon entropy (natural log) of the pooled pixel-class frequencies."""
    counts = np.zeros(num_classes, dtype=np.int64)
    for lbl in labels:
        valid = lbl != ignore_label
        counts += np.bincount(lbl[valid].astype(np.int64), minlength=num_classes)[:num_classes]
    total = counts.sum()
    if total == 0:
        raise UndefinedMetricError("no valid pixels in the annotated set")
    freq = counts[counts > 0] / total
    return float(-np.sum(freq * np.log(freq)))


def score_pool(
    seg: SegmentationNet,
    head: DifficultyHead,
    pool: SamplePool,
    candidate_ids: list[str],
    strategy: str,
    cfg: ExperimentConfig,
    seed: int,
) -> list[acq.AcquisitionScore]:
    """One scalar score per candidate image for the ranking strategies."""
    if strategy not in acq.STRATEGIES:
        raise ConfigurationError(f"unknown strategy {strategy!r}; known: {acq.STRATEGIES}")
    if strategy == "coreset":
        raise ConfigurationError("coreset selects directly, it has no per-image score")
    scores = []
    rng = np.random.default_rng(seed)
    base_map = acq.UNCERTAINTY_MAPS[cfg.uncertainty]
    for sample_id in candidate_ids:
        image = pool.image(sample_id)
        if strategy == "random":
            value = float(rng.random())
        elif strategy in ("entropy", "lc", "margin"):
            pm = predict_probs(seg, image)
            value = float(acq.UNCERTAINTY_MAPS[strategy](pm).mean())
        elif strategy == "qbc":
            maps = forward_mc_dropout(seg, image, cfg.qbc_passes, seed=seed)
            value = acq.score_qbc(maps, mode=cfg.qbc_mode)
        else:  # ds / de: need the difficulty map at attention resolution
            pm = predict_probs(seg, image)
            probs = torch.from_numpy(pm.probs).unsqueeze(0)
            probs_ds = downsample_probs(probs, cfg.attention_size)
            with torch.no_grad():
                md = head(probs_ds.float())[0].numpy().astype(np.float64)
            if strategy == "ds":
                mc = base_map(pm)
                mc_ds = _downsample_map(mc, cfg.attention_size)
                value = acq.score_ds(mc_ds, md)
            else:
                value = acq.score_de(acq.quantize_difficulty(md, cfg.levels))
        scores.append(acq.AcquisitionScore(sample_id=sample_id, score=value, strategy=strategy))
    return scores


def _downsample_map(arr: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    t = torch.from_numpy(arr).unsqueeze(0).unsqueeze(0)
    return torch.nn.functional.adaptive_avg_pool2d(t, target)[0, 0].numpy()


def select_round(
    seg: SegmentationNet,
    head: DifficultyHead,
    pool: SamplePool,
    strategy: str,
    budget: int,
    cfg: ExperimentConfig,
    seed: int,
    scores_out: Path | None = None,
) -> list[str]:
    """Pre-sample a subset of the pool, score it, and pick the top `budget` ids."""
    subset = pool.presample_subset(cfg.effective_subset_size(budget), seed=seed)
    if strategy == "coreset":
        labeled = {i: encoder_features(seg, pool.image(i)) for i in pool.annotated_ids}
        unlabeled = {i: encoder_features(seg, pool.image(i)) for i in subset}
        return acq.select_coreset(labeled, unlabeled, min(budget, len(subset)))
    scores = score_pool(seg, head, pool, subset, strategy, cfg, seed=seed)
    if scores_out is not None:
        with open(scores_out, "w") as fh:
            fh.write("id\tstrategy\tscore\n")
            for s in sorted(scores, key=lambda s: (-s.score, s.sample_id)):
                fh.write(f"{s.sample_id}\t{s.strategy}\t{s.score:.10g}\n")
    return acq.rank_and_select(scores, min(budget, len(scores)))


def run_active_learning(
    cfg: ExperimentConfig,
    pool: SamplePool,
    test_samples: list[SegSample],
    strategy: str,
    seed: int,
    out_dir: str | Path | None = None,
) -> ALRunLedger:
    """Run the full query-annotate-retrain loop.

    Stage 0 trains on the initial annotated set; each later stage queries
    `budget` samples, annotates them via the oracle, and retrains from
    scratch, so stage n's metrics reflect a model trained on
    initial + n * budget samples. Terminates early with a partial ledger if
    the pool runs dry.
    """
    test_ids = {s.id for s in test_samples}
    if test_ids & set(pool.all_ids):
        raise ConfigurationError("test samples must not appear in the pool")
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    budget = round(cfg.budget_fraction * len(pool))
    ledger = ALRunLedger(strategy=strategy, seed=seed)

    for stage in range(cfg.rounds + 1):
        start = time.time()
        if stage > 0:
            if budget > len(pool.unlabeled_ids):
                ledger.status = "pool_exhausted"
                logger.warning("budget %d exceeds remaining pool %d; stopping at stage %d",
                               budget, len(pool.unlabeled_ids), stage - 1)
                break
            scores_out = out_path / f"scores_round_{stage}.tsv" if out_path else None
            selected = [] if budget == 0 else select_round(
                seg, head, pool, strategy, budget, cfg,
                seed=_stage_seed(seed, stage), scores_out=scores_out,
            )
            pool.oracle_annotate(selected)
            assert pool.check_partition()
        else:
            selected = []

        annotated = pool.annotated_samples()
        seg, head = train_two_branch(annotated, cfg, seed=_stage_seed(seed, stage) + 1)
        ious, miou = evaluate(seg, test_samples, cfg.num_classes, cfg.ignore_label)
        entropy = class_distribution_entropy(
            [s.label for s in annotated], cfg.num_classes, cfg.ignore_label
        )
        ledger.records.append(
            RoundRecord(
                round=stage,
                num_annotated=len(annotated),
                selected_ids=selected,
                per_class_iou=ious,
                miou=miou,
                class_entropy=entropy,
                wall_time=time.time() - start,
                seed=seed,
            )
        )
        if out_path is not None:
            torch.save(
                {"seg": seg.state_dict(), "head": head.state_dict(),
                 "round": stage, "strategy": strategy, "seed": seed},
                out_path / f"checkpoint_round_{stage}.pt",
            )
    if out_path is not None:
        ledger.to_jsonl(out_path / f"ledger_{strategy}_seed{seed}.jsonl")
    return ledger


def _stage_seed(seed: int, stage: int) -> int:
    return seed * 10_000 + stage * 100
