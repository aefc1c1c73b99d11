"""Synthetic dataset generation, on-disk layout, and labeled/unlabeled pool management."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from segal.exceptions import ConfigurationError, InvalidQueryError, LabelAccessError

# synthetic class layout: 0 background, 1 large blob (easy),
# 2 thin lines (hard), 3 small squares (hard)
BACKGROUND, BLOB, THIN_LINE, SMALL_SQUARE = 0, 1, 2, 3
CLASS_NAMES = ["background", "blob", "thin_line", "small_square"]

_CLASS_COLORS = np.array(
    [
        [0.35, 0.55, 0.35],  # background: greenish
        [0.70, 0.30, 0.30],  # blob: red
        [0.25, 0.25, 0.75],  # thin line: blue
        [0.85, 0.80, 0.25],  # small square: yellow
    ]
)


@dataclass
class SegSample:
    id: str
    image: np.ndarray  # H x W x 3 float in [0,1]
    label: np.ndarray  # H x W int, values in {0..C-1} | {ignore}

    def validate(self, num_classes: int, ignore_label: int) -> None:
        if self.image.shape[:2] != self.label.shape:
            raise ConfigurationError(f"sample {self.id}: image/label spatial dims differ")
        vals = np.unique(self.label)
        bad = vals[(vals >= num_classes) & (vals != ignore_label)]
        if bad.size:
            raise ConfigurationError(f"sample {self.id}: label values {bad.tolist()} out of range")


def generate_synthetic_dataset(
    n: int,
    size: tuple[int, int] = (64, 64),
    seed: int = 0,
    noise: float = 0.03,
) -> list[SegSample]:
    """Procedural street-scene stand-in: imbalanced classes of graded difficulty.

    Every image has a background; most have one large blob (easy). Roughly half
    carry thin 1-2 px lines and/or small <=5x5 squares, the hard classes.
    Deterministic given (n, size, seed).
    """
    if n < 1:
        raise ConfigurationError(f"need n >= 1 samples, got {n}")
    h, w = size
    if h < 32 or w < 32:
        raise ConfigurationError(f"minimum size is 32x32, got {h}x{w}")

    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        label = np.full((h, w), BACKGROUND, dtype=np.int64)

        # large blob: easy, nearly always present
        if rng.random() < 0.9:
            cy, cx = rng.integers(h // 4, 3 * h // 4), rng.integers(w // 4, 3 * w // 4)
            ry, rx = rng.integers(h // 8, h // 4, size=2)
            yy, xx = np.ogrid[:h, :w]
            label[((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0] = BLOB

        # lines are deliberately scarce: most images teach nothing about them,
        # so informed selection has something to find
        has_lines = rng.random() < 0.15
        has_squares = rng.random() < 0.2

        if has_lines:
            for _ in range(rng.integers(1, 4)):
                width = int(rng.integers(1, 3))
                if rng.random() < 0.5:
                    c = int(rng.integers(0, w - width))
                    label[:, c : c + width] = THIN_LINE
                else:
                    r = int(rng.integers(0, h - width))
                    label[r : r + width, :] = THIN_LINE

        if has_squares:
            for _ in range(rng.integers(1, 4)):
                s = int(rng.integers(3, 7))
                r = int(rng.integers(0, h - s))
                c = int(rng.integers(0, w - s))
                label[r : r + s, c : c + s] = SMALL_SQUARE

        image = _CLASS_COLORS[label] + rng.normal(0.0, noise, size=(h, w, 3))
        image = np.clip(image, 0.0, 1.0)
        samples.append(SegSample(id=f"syn_{i:05d}", image=image.astype(np.float32), label=label))
    return samples


class SamplePool:
    """Partition of samples into annotated / unlabeled, gating label access.

    Labels of unlabeled samples can only be revealed through `oracle_annotate`.
    """

    def __init__(self, samples: list[SegSample], annotated_ids: set[str]):
        self._store = {s.id: s for s in samples}
        if len(self._store) != len(samples):
            raise ConfigurationError("duplicate sample ids in pool")
        unknown = annotated_ids - set(self._store)
        if unknown:
            raise ConfigurationError(f"annotated ids not in pool: {sorted(unknown)}")
        self._annotated = set(annotated_ids)
        self._unlabeled = set(self._store) - self._annotated

    @property
    def annotated_ids(self) -> list[str]:
        return sorted(self._annotated)

    @property
    def unlabeled_ids(self) -> list[str]:
        return sorted(self._unlabeled)

    @property
    def all_ids(self) -> list[str]:
        return sorted(self._store)

    def __len__(self) -> int:
        return len(self._store)

    def image(self, sample_id: str) -> np.ndarray:
        return self._store[sample_id].image

    def annotated_sample(self, sample_id: str) -> SegSample:
        if sample_id not in self._annotated:
            raise LabelAccessError(f"{sample_id} is not annotated; labels are hidden")
        return self._store[sample_id]

    def annotated_samples(self) -> list[SegSample]:
        return [self._store[i] for i in self.annotated_ids]

    def oracle_annotate(self, ids: list[str]) -> None:
        """Simulated oracle: reveal labels by moving ids from unlabeled to annotated."""
        for sample_id in ids:
            if sample_id not in self._store:
                raise InvalidQueryError(f"unknown sample id {sample_id}")
            if sample_id in self._annotated:
                raise InvalidQueryError(f"{sample_id} is already annotated")
        for sample_id in ids:
            self._unlabeled.remove(sample_id)
            self._annotated.add(sample_id)

    def presample_subset(self, subset_size: int, seed: int) -> list[str]:
        """Uniform random subset of the unlabeled pool, without replacement."""
        if subset_size <= 0:
            raise ConfigurationError(f"subset_size must be positive, got {subset_size}")
        unlabeled = self.unlabeled_ids
        if subset_size >= len(unlabeled):
            return unlabeled
        rng = np.random.default_rng(seed)
        picked = rng.choice(len(unlabeled), size=subset_size, replace=False)
        return sorted(unlabeled[i] for i in picked)

    def check_partition(self) -> bool:
        return (
            not (self._annotated & self._unlabeled)
            and self._annotated | self._unlabeled == set(self._store)
        )


def split_initial(samples: list[SegSample], initial_fraction: float, seed: int) -> SamplePool:
    """Randomly annotate round(initial_fraction * n) samples as the starting set."""
    if not (0.0 < initial_fraction < 1.0):
        raise ConfigurationError(f"initial_fraction must be in (0,1), got {initial_fraction}")
    n_initial = round(initial_fraction * len(samples))
    if n_initial == 0:
        raise ConfigurationError(
            f"initial_fraction {initial_fraction} yields 0 samples out of {len(samples)}"
        )
    rng = np.random.default_rng(seed)
    ids = sorted(s.id for s in samples)
    picked = rng.choice(len(ids), size=n_initial, replace=False)
    return SamplePool(samples, annotated_ids={ids[i] for i in picked})


def split_train_test(
    samples: list[SegSample], test_fraction: float, seed: int
) -> tuple[list[SegSample], list[SegSample]]:
    """Disjoint train/test split, deterministic given seed."""
    if not (0.0 < test_fraction < 1.0):
        raise ConfigurationError(f"test_fraction must be in (0,1), got {test_fraction}")
    n_test = round(test_fraction * len(samples))
    if n_test == 0 or n_test == len(samples):
        raise ConfigurationError("degenerate train/test split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    test_idx = set(order[:n_test].tolist())
    train = [s for i, s in enumerate(samples) if i not in test_idx]
    test = [s for i, s in enumerate(samples) if i in test_idx]
    return train, test


def save_dataset(samples: list[SegSample], root: str | Path) -> None:
    """images/<id>.png (RGB) and labels/<id>.png (8-bit index map), ids = filenames."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    for s in samples:
        img = (np.clip(s.image, 0, 1) * 255).round().astype(np.uint8)
        Image.fromarray(img).save(root / "images" / f"{s.id}.png")
        Image.fromarray(s.label.astype(np.uint8), mode="L").save(root / "labels" / f"{s.id}.png")


def load_dataset(root: str | Path) -> list[SegSample]:
    root = Path(root)
    img_dir, lbl_dir = root / "images", root / "labels"
    if not img_dir.is_dir() or not lbl_dir.is_dir():
        raise ConfigurationError(f"dataset root {root} must contain images/ and labels/")
    samples = []
    for img_path in sorted(img_dir.glob("*.png")):
        lbl_path = lbl_dir / img_path.name
        if not lbl_path.exists():
            raise ConfigurationError(f"missing label map for {img_path.name}")
        image = np.asarray(Image.open(img_path), dtype=np.float32) / 255.0
        label = np.asarray(Image.open(lbl_path), dtype=np.int64)
        samples.append(SegSample(id=img_path.stem, image=image, label=label))
    if not samples:
        raise ConfigurationError(f"no samples found under {root}")
    return samples
