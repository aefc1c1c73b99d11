"""Desk-scale encoder-decoder segmentation network and inference helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from segal.exceptions import ConfigurationError, ShapeError

PROB_SUM_TOL = 1e-5


@dataclass
class ProbabilityMap:
    """Per-pixel class distribution (C x H x W) and its argmax prediction."""

    probs: np.ndarray

    def __post_init__(self):
        sums = self.probs.sum(axis=0)
        if np.abs(sums - 1.0).max() > PROB_SUM_TOL or (self.probs < 0).any():
            raise ShapeError("channel vectors must be non-negative and sum to 1")

    @property
    def argmax(self) -> np.ndarray:
        return self.probs.argmax(axis=0)

    @property
    def num_classes(self) -> int:
        return self.probs.shape[0]


def _conv_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class SegmentationNet(nn.Module):
    """Small U-shaped network: 3 downsampling stages, skip connections, one
    dropout layer before the classifier. Any drop-in with the same forward
    contract (logits at input resolution) can replace it.
    """

    def __init__(self, num_classes: int, in_channels: int = 3,
                 base_channels: int = 16, dropout_rate: float = 0.1):
        super().__init__()
        b = base_channels
        self.enc1 = _conv_block(in_channels, b)
        self.enc2 = _conv_block(b, 2 * b)
        self.enc3 = _conv_block(2 * b, 4 * b)
        self.bottleneck = _conv_block(4 * b, 8 * b)
        self.pool = nn.MaxPool2d(2)
        self.up3 = nn.ConvTranspose2d(8 * b, 4 * b, 2, stride=2)
        self.dec3 = _conv_block(8 * b, 4 * b)
        self.up2 = nn.ConvTranspose2d(4 * b, 2 * b, 2, stride=2)
        self.dec2 = _conv_block(4 * b, 2 * b)
        self.up1 = nn.ConvTranspose2d(2 * b, b, 2, stride=2)
        self.dec1 = _conv_block(2 * b, b)
        self.dropout = nn.Dropout2d(dropout_rate)
        self.classifier = nn.Conv2d(b, num_classes, 1)
        # zero-init: untrained model outputs the uniform distribution
        nn.init.zeros_(self.classifier.weight)
        nn.init.zeros_(self.classifier.bias)
        self.num_classes = num_classes
        self.encoder_channels = 8 * b

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, ...]:
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        e3 = self.enc3(self.pool(e2))
        z = self.bottleneck(self.pool(e3))
        return e1, e2, e3, z

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] % 8 or x.shape[-2] % 8:
            raise ShapeError(f"input dims must be multiples of 8, got {tuple(x.shape[-2:])}")
        e1, e2, e3, z = self.encode(x)
        d3 = self.dec3(torch.cat([self.up3(z), e3], dim=1))
        d2 = self.dec2(torch.cat([self.up2(d3), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], dim=1))
        return self.classifier(self.dropout(d1))


def _to_batch(image: np.ndarray) -> torch.Tensor:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected H x W x 3 image, got {image.shape}")
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).float().unsqueeze(0)


@torch.no_grad()
def predict_probs(model: SegmentationNet, image: np.ndarray) -> ProbabilityMap:
    """Deterministic forward pass: dropout off, softmax probabilities."""
    model.eval()
    logits = model(_to_batch(image))
    return ProbabilityMap(torch.softmax(logits[0], dim=0).numpy().astype(np.float64))


@torch.no_grad()
def forward_mc_dropout(
    model: SegmentationNet, image: np.ndarray, passes: int, seed: int
) -> list[ProbabilityMap]:
    """Stochastic committee: dropout active, `passes` forward passes, seeded."""
    if passes < 2:
        raise ConfigurationError(f"need passes >= 2 for a committee, got {passes}")
    model.eval()
    model.dropout.train()  # only the dropout site is stochastic
    x = _to_batch(image)
    out = []
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        for _ in range(passes):
            logits = model(x)
            out.append(ProbabilityMap(torch.softmax(logits[0], dim=0).numpy().astype(np.float64)))
    model.eval()
    return out


@torch.no_grad()
def encoder_features(model: SegmentationNet, image: np.ndarray) -> np.ndarray:
    """Channel-wise global average of the deepest encoder map; length is
    architecture-fixed, independent of input size."""
    model.eval()
    _, _, _, z = model.encode(_to_batch(image))
    return z.mean(dim=(2, 3))[0].numpy().astype(np.float64)
