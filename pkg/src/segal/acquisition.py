"""Per-image informativeness scores and batch selection strategies."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from segal.exceptions import ConfigurationError, ShapeError, UndefinedMetricError
from segal.model import ProbabilityMap

STRATEGIES = ("random", "entropy", "lc", "margin", "qbc", "coreset", "ds", "de")


@dataclass
class AcquisitionScore:
    sample_id: str
    score: float
    strategy: str


@dataclass
class DifficultyHistogram:
    counts: np.ndarray  # per-level pixel counts, length L
    total: int

    def __post_init__(self):
        if len(self.counts) < 2:
            raise ConfigurationError("need at least 2 difficulty levels")


def entropy_map(pm: ProbabilityMap) -> np.ndarray:
    """Per-pixel Shannon entropy (natural log), with 0 * log 0 := 0."""
    p = pm.probs
    return -np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0), axis=0)


def lc_map(pm: ProbabilityMap) -> np.ndarray:
    """Least confidence: 1 - max class probability."""
    return 1.0 - pm.probs.max(axis=0)


def margin_map(pm: ProbabilityMap) -> np.ndarray:
    """1 - (top1 - top2), so larger means more uncertain."""
    if pm.num_classes < 2:
        raise ConfigurationError("margin needs at least 2 classes")
    part = np.sort(pm.probs, axis=0)
    return 1.0 - (part[-1] - part[-2])


UNCERTAINTY_MAPS = {"entropy": entropy_map, "lc": lc_map, "margin": margin_map}


def score_ds(mc: np.ndarray, md: np.ndarray, valid: np.ndarray | None = None) -> float:
    """Difficulty-aware uncertainty: mean over pixels of uncertainty * difficulty."""
    if mc.shape != md.shape:
        raise ShapeError(f"uncertainty map {mc.shape} vs difficulty map {md.shape}")
    prod = mc * md
    if valid is not None:
        if valid.shape != mc.shape:
            raise ShapeError(f"valid mask {valid.shape} vs maps {mc.shape}")
        if not valid.any():
            raise UndefinedMetricError("no valid pixels for DS score")
        return float(prod[valid.astype(bool)].mean())
    return float(prod.mean())


def quantize_difficulty(md: np.ndarray, levels: int, valid: np.ndarray | None = None) -> DifficultyHistogram:
    """Bucket difficulty scores into `levels` uniform bins of [0,1].

    Bins are right-open except the last: level = min(floor(s * L) + 1, L).
    """
    if levels < 2:
        raise ConfigurationError(f"levels must be >= 2, got {levels}")
    scores = md[valid.astype(bool)] if valid is not None else md
    scores = scores.ravel()
    level_idx = np.minimum(np.floor(scores * levels).astype(int) + 1, levels)
    counts = np.bincount(level_idx, minlength=levels + 1)[1:]
    return DifficultyHistogram(counts=counts, total=int(scores.size))


def score_de(hist: DifficultyHistogram) -> float:
    """Entropy of the difficulty-level distribution; empty levels contribute 0."""
    if hist.total == 0:
        raise UndefinedMetricError("empty histogram, difficulty entropy undefined")
    freq = hist.counts / hist.total
    nz = freq[freq > 0]
    return float(-np.sum(nz * np.log(nz)))


def score_qbc(mc_maps: list[ProbabilityMap], mode: str = "max-entropy") -> float:
    """Committee disagreement from stochastic forward passes."""
    if len(mc_maps) < 2:
        raise ConfigurationError(f"need >= 2 committee passes, got {len(mc_maps)}")
    stack = np.stack([pm.probs for pm in mc_maps])  # passes x C x H x W
    if mode == "max-entropy":
        return float(entropy_map(ProbabilityMap(stack.mean(axis=0))).mean())
    if mode == "variation-ratio":
        votes = stack.argmax(axis=1)  # passes x H x W
        passes, num_classes = stack.shape[0], stack.shape[1]
        modal = np.zeros(votes.shape[1:], dtype=np.int64)
        for c in range(num_classes):
            modal = np.maximum(modal, (votes == c).sum(axis=0))
        return float((1.0 - modal / passes).mean())
    raise ConfigurationError(f"unknown qbc mode {mode!r}")


def select_coreset(
    labeled: dict[str, np.ndarray], unlabeled: dict[str, np.ndarray], m: int
) -> list[str]:
    """k-Center-Greedy under l2 distance.

    Repeatedly pick the unlabeled point with the largest distance to its
    nearest labeled-or-selected point. Ties break on ascending id. An empty
    labeled set falls back to seeding with the lower-id endpoint of the
    farthest unlabeled pair.
    """
    if m > len(unlabeled):
        raise ConfigurationError(f"m={m} exceeds pool size {len(unlabeled)}")
    pool_ids = sorted(unlabeled)
    feats = np.stack([unlabeled[i] for i in pool_ids])
    selected: list[str] = []
    remaining = list(range(len(pool_ids)))

    if labeled:
        centers = np.stack([labeled[i] for i in sorted(labeled)])
        min_dist = np.linalg.norm(feats[:, None, :] - centers[None, :, :], axis=2).min(axis=1)
    else:
        if m == 0:
            return []
        # farthest-pair seed
        d = np.linalg.norm(feats[:, None, :] - feats[None, :, :], axis=2)
        j, i = np.unravel_index(np.argmax(d), d.shape)
        first = min(i, j)  # ascending-id tie-break via sorted pool_ids
        selected.append(pool_ids[first])
        remaining.remove(first)
        min_dist = np.linalg.norm(feats - feats[first], axis=1)

    while len(selected) < m:
        best = max(remaining, key=lambda r: (min_dist[r], pool_ids[r]))
        # prefer smallest id on exact distance ties
        best = min(r for r in remaining if min_dist[r] == min_dist[best])
        selected.append(pool_ids[best])
        remaining.remove(best)
        min_dist = np.minimum(min_dist, np.linalg.norm(feats - feats[best], axis=1))
    return selected


def rank_and_select(scores: list[AcquisitionScore], m: int) -> list[str]:
    """Top-m ids by descending score; ties break on ascending id."""
    tags = {s.strategy for s in scores}
    if len(tags) > 1:
        raise ConfigurationError(f"scores mix strategies: {sorted(tags)}")
    if m > len(scores):
        warnings.warn(f"requested {m} samples but only {len(scores)} scored; selecting all")
        m = len(scores)
    ranked = sorted(scores, key=lambda s: (-s.score, s.sample_id))
    return [s.sample_id for s in ranked[:m]]
