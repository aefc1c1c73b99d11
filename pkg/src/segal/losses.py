"""Error-mask construction and the segmentation / difficulty training losses."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from segal.exceptions import ShapeError, UndefinedMetricError

EPS = 1e-7  # log arguments clamped to [EPS, 1 - EPS]


@dataclass
class ErrorMask:
    mask: torch.Tensor   # binary, 1 where prediction != GT on valid pixels
    valid: torch.Tensor  # binary, 1 on non-ignore pixels


def compute_error_mask(pred: torch.Tensor, gt: torch.Tensor, ignore_label: int) -> ErrorMask:
    """Binary map of misclassified pixels; ignore pixels are masked out."""
    pred = torch.as_tensor(pred)
    gt = torch.as_tensor(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} vs GT {tuple(gt.shape)}")
    valid = (gt != ignore_label).to(torch.float64)
    mask = (pred != gt).to(torch.float64) * valid
    return ErrorMask(mask=mask, valid=valid)


def downsample_mask_majority(em: ErrorMask, target: tuple[int, int]) -> ErrorMask:
    """Majority vote per cell, preserving binariness; a cell is valid if any source pixel is."""
    mask = em.mask.unsqueeze(0).unsqueeze(0)
    valid = em.valid.unsqueeze(0).unsqueeze(0)
    err_frac = F.adaptive_avg_pool2d(mask, target)
    valid_frac = F.adaptive_avg_pool2d(valid, target)
    new_valid = (valid_frac > 0).to(torch.float64)
    # fraction of errors among valid source pixels decides the cell
    new_mask = ((err_frac >= 0.5 * valid_frac) & (valid_frac > 0)).to(torch.float64)
    return ErrorMask(mask=new_mask[0, 0], valid=new_valid[0, 0])


def seg_loss(
    probs: torch.Tensor,
    gt: torch.Tensor,
    ignore_label: int,
    l2_term: torch.Tensor | float = 0.0,
) -> torch.Tensor:
    """Mean cross-entropy of C x H x W probability maps over valid pixels, plus L2 term."""
    gt = torch.as_tensor(gt)
    if probs.shape[-2:] != gt.shape:
        raise ShapeError(f"probs {tuple(probs.shape)} vs GT {tuple(gt.shape)}")
    valid = gt != ignore_label
    if not valid.any():
        raise UndefinedMetricError("all pixels ignored, segmentation loss undefined")
    safe_gt = gt.clone()
    safe_gt[~valid] = 0
    p_true = probs.gather(0, safe_gt.unsqueeze(0)).squeeze(0)
    ce = -torch.log(p_true.clamp(EPS, 1.0 - EPS))
    return ce[valid].mean() + l2_term


def l2_regularization(params, weight_decay: float) -> torch.Tensor:
    total = sum((p * p).sum() for p in params)
    return 0.5 * weight_decay * total


def dif_loss(
    md: torch.Tensor, em: ErrorMask
) -> tuple[torch.Tensor, float, float]:
    """Inverted-weighted binary cross-entropy against the error mask.

    The weight on error pixels is the fraction of correct pixels and vice
    versa, so the rare class dominates. Returns (loss, lambda1, lambda2).
    """
    if md.shape != em.mask.shape:
        raise ShapeError(f"difficulty map {tuple(md.shape)} vs mask {tuple(em.mask.shape)}")
    valid = em.valid.bool()
    k = int(valid.sum())
    if k == 0:
        raise UndefinedMetricError("no valid pixels, difficulty loss undefined")
    mask = em.mask[valid]
    md_v = md[valid].clamp(EPS, 1.0 - EPS)
    lam1 = float((mask == 0).sum()) / k
    lam2 = 1.0 - lam1
    loss = -(lam1 * mask * torch.log(md_v) + lam2 * (1.0 - mask) * torch.log(1.0 - md_v)).sum() / k
    return loss, lam1, lam2


def total_loss(l_seg: torch.Tensor, l_dif: torch.Tensor, alpha: float = 1.0) -> torch.Tensor:
    return l_seg + alpha * l_dif
