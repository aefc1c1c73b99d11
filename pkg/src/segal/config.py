"""Flat experiment configuration with file round-tripping."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from segal.exceptions import ConfigurationError


@dataclass
class ExperimentConfig:
    """All knobs for one active-learning experiment, flat key-value style."""

    # dataset
    data_root: str | None = None        # load from disk if set, else synthetic
    n_images: int = 200
    image_height: int = 64
    image_width: int = 64
    num_classes: int = 4
    ignore_label: int = 255
    test_fraction: float = 0.2

    # pool / AL loop
    initial_fraction: float = 0.1
    budget_fraction: float = 0.05
    rounds: int = 4
    subset_size: int | None = None      # default: 4 * budget

    # training
    epochs: int = 45
    batch_size: int = 4
    lr: float = 0.03
    momentum: float = 0.9
    weight_decay: float = 5e-4
    poly_power: float = 0.9
    alpha: float = 1.0                  # weight of the difficulty loss
    head_lr_scale: float = 25.0         # difficulty-head lr multiplier
    dropout_rate: float = 0.1
    base_channels: int = 16
    class_balance: bool = True          # median-frequency CE weights for rare classes

    # difficulty branch
    pam_enabled: bool = True
    attention_height: int = 32
    attention_width: int = 32
    stop_gradient_to_seg: bool = False
    eps: float = 1e-7                   # clamp for log arguments

    # acquisition
    levels: int = 8                     # difficulty quantization levels L
    qbc_passes: int = 5
    qbc_mode: str = "max-entropy"       # or "variation-ratio"
    uncertainty: str = "entropy"        # base map for DS: entropy | lc | margin

    strategy: str = "ds"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])

    # attention cost is O(K^2 * C); keep K = h * w bounded
    MAX_ATTENTION_DIM = 86

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not (0.0 < self.initial_fraction < 1.0):
            raise ConfigurationError(f"initial_fraction must be in (0,1), got {self.initial_fraction}")
        if not (0.0 < self.budget_fraction < 1.0):
            raise ConfigurationError(f"budget_fraction must be in (0,1), got {self.budget_fraction}")
        if self.rounds < 1:
            raise ConfigurationError(f"rounds must be >= 1, got {self.rounds}")
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.levels < 2:
            raise ConfigurationError(f"levels must be >= 2, got {self.levels}")
        if self.subset_size is not None and self.subset_size <= 0:
            raise ConfigurationError(f"subset_size must be positive, got {self.subset_size}")
        if max(self.attention_height, self.attention_width) > self.MAX_ATTENTION_DIM:
            raise ConfigurationError(
                f"attention dims capped at {self.MAX_ATTENTION_DIM}, "
                f"got {self.attention_height}x{self.attention_width}"
            )
        if self.qbc_mode not in ("max-entropy", "variation-ratio"):
            raise ConfigurationError(f"unknown qbc_mode {self.qbc_mode!r}")
        if self.uncertainty not in ("entropy", "lc", "margin"):
            raise ConfigurationError(f"unknown uncertainty map {self.uncertainty!r}")

    @property
    def image_size(self) -> tuple[int, int]:
        return self.image_height, self.image_width

    @property
    def attention_size(self) -> tuple[int, int]:
        return self.attention_height, self.attention_width

    def effective_subset_size(self, budget: int) -> int:
        return self.subset_size if self.subset_size is not None else 4 * budget

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        raw = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(raw, dict):
            raise ConfigurationError(f"config file {path} is not a flat mapping")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(asdict(self), sort_keys=False))

    def replace(self, **kwargs) -> "ExperimentConfig":
        data = asdict(self)
        data.update(kwargs)
        return ExperimentConfig(**data)
