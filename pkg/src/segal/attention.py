"""Probability attention over per-pixel class distributions and the difficulty head."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from segal.exceptions import ConfigurationError, NumericError


def pam_forward(P: torch.Tensor, gamma: torch.Tensor | float) -> tuple[torch.Tensor, torch.Tensor]:
    """Pixel-pairwise attention on a C x K probability matrix.

    A[j, i] = softmax_i(P_i . P_j) is pixel i's impact on pixel j;
    Q_j = gamma * sum_i A[j, i] * P_i + P_j (residual).
    Returns (A: K x K, Q: C x K).
    """
    P = torch.as_tensor(P)
    if P.ndim != 2:
        raise ConfigurationError(f"P must be C x K, got shape {tuple(P.shape)}")
    if not torch.isfinite(P).all():
        raise NumericError("P contains non-finite entries")
    gamma = torch.as_tensor(gamma, dtype=P.dtype)
    energy = P.T @ P  # energy[j, i] = P_j . P_i
    # reductions over pixels run in sorted-value order, so the result is
    # bit-identical under any permutation of the input columns
    shifted = energy - energy.max(dim=1, keepdim=True).values
    expe = torch.exp(shifted)
    denom = _canonical_sum(expe, dim=1)
    A = expe / denom.unsqueeze(1)
    attended = _canonical_sum(A.unsqueeze(0) * P.unsqueeze(1), dim=2)  # C x K_j
    Q = gamma * attended + P
    return A, Q


def _canonical_sum(t: torch.Tensor, dim: int) -> torch.Tensor:
    return torch.sort(t, dim=dim).values.sum(dim=dim)


class DifficultyHead(nn.Module):
    """Attention over softmax maps plus a 1x1 binary classifier -> per-pixel difficulty.

    With `pam_enabled=False` the classifier reads the probability maps directly
    (ablation mode). The attention weight starts at 0 so the module begins as a
    plain residual pass-through and learns to attend.
    """

    def __init__(self, num_classes: int, pam_enabled: bool = True):
        super().__init__()
        self.pam_enabled = pam_enabled
        self.gamma = nn.Parameter(torch.zeros(1))
        self.classifier = nn.Conv2d(num_classes, 1, kernel_size=1)
        nn.init.zeros_(self.classifier.weight)
        nn.init.zeros_(self.classifier.bias)

    def forward(self, probs: torch.Tensor) -> torch.Tensor:
        """probs: B x C x H x W probability maps -> B x H x W difficulty in (0,1)."""
        if probs.shape[1] != self.classifier.in_channels:
            raise ConfigurationError(
                f"expected {self.classifier.in_channels} channels, got {probs.shape[1]}"
            )
        if self.pam_enabled:
            b, c, h, w = probs.shape
            p = probs.reshape(b, c, h * w)
            energy = torch.bmm(p.transpose(1, 2), p)  # B x K x K
            attn = torch.softmax(energy, dim=2)
            q = self.gamma * torch.bmm(p, attn.transpose(1, 2)) + p
            feats = q.reshape(b, c, h, w)
        else:
            feats = probs
        return torch.sigmoid(self.classifier(feats)).squeeze(1)


def downsample_probs(probs: torch.Tensor, target: tuple[int, int]) -> torch.Tensor:
    """Spatially pool C x H x W (or B x C x H x W) probability maps and renormalize."""
    squeeze = probs.ndim == 3
    if squeeze:
        probs = probs.unsqueeze(0)
    h, w = probs.shape[-2:]
    th, tw = target
    if th > h or tw > w:
        raise ConfigurationError(f"target {target} exceeds source dims {(h, w)}")
    out = F.adaptive_avg_pool2d(probs, (th, tw))
    out = out / out.sum(dim=1, keepdim=True).clamp_min(1e-12)
    return out.squeeze(0) if squeeze else out
