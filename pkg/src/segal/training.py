"""Joint training of the segmentation branch and the difficulty head."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch.optim import SGD

from segal.attention import DifficultyHead, downsample_probs
from segal.config import ExperimentConfig
from segal.data import SegSample
from segal.exceptions import ConfigurationError
from segal.model import SegmentationNet


def init_models(cfg: ExperimentConfig, seed: int) -> tuple[SegmentationNet, DifficultyHead]:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        seg = SegmentationNet(
            num_classes=cfg.num_classes,
            base_channels=cfg.base_channels,
            dropout_rate=cfg.dropout_rate,
        )
        head = DifficultyHead(num_classes=cfg.num_classes, pam_enabled=cfg.pam_enabled)
    return seg, head


def _poly_lr(base_lr: float, it: int, max_it: int, power: float) -> float:
    return base_lr * (1.0 - it / max_it) ** power


def class_weights(labels: torch.Tensor, num_classes: int, ignore_label: int) -> torch.Tensor:
    """Median-frequency balancing: weight_c = median(freq) / freq_c.

    Rare classes contribute a few pixels per batch; without re-weighting their
    gradient signal drowns and whether they get learned at all becomes an
    initialization lottery. Classes absent from the labels get weight 0.
    """
    flat = labels[labels != ignore_label].reshape(-1)
    counts = torch.bincount(flat, minlength=num_classes)[:num_classes].double()
    freq = counts / counts.sum()
    present = freq > 0
    weights = torch.zeros(num_classes, dtype=torch.float32)
    weights[present] = (freq[present].median() / freq[present]).float()
    return weights


def _batched_dif_loss(md: torch.Tensor, pred: torch.Tensor, gt: torch.Tensor,
                      cfg: ExperimentConfig) -> torch.Tensor:
    """Per-image inverted-weighted BCE at attention resolution, averaged over
    the batch. Equivalent to looping `dif_loss` over images, but vectorized."""
    valid = (gt != cfg.ignore_label).double().unsqueeze(1)
    err = ((pred != gt).double().unsqueeze(1)) * valid
    err_frac = F.adaptive_avg_pool2d(err, cfg.attention_size)
    valid_frac = F.adaptive_avg_pool2d(valid, cfg.attention_size)
    valid_ds = (valid_frac > 0).double().squeeze(1)
    mask = ((err_frac >= 0.5 * valid_frac) & (valid_frac > 0)).double().squeeze(1)

    k = valid_ds.sum(dim=(1, 2))
    keep = k > 0
    if not keep.any():
        return torch.zeros(())
    lam1 = (((mask == 0).double() * valid_ds).sum(dim=(1, 2)) / k.clamp_min(1))
    lam2 = 1.0 - lam1
    md_c = md.double().clamp(1e-7, 1.0 - 1e-7)
    per_pixel = (
        lam1.view(-1, 1, 1) * mask * torch.log(md_c)
        + lam2.view(-1, 1, 1) * (1.0 - mask) * torch.log(1.0 - md_c)
    ) * valid_ds
    per_image = -per_pixel.sum(dim=(1, 2)) / k.clamp_min(1)
    return per_image[keep].mean()


def train_two_branch(
    samples: list[SegSample], cfg: ExperimentConfig, seed: int
) -> tuple[SegmentationNet, DifficultyHead]:
    """Train both branches from scratch on the annotated samples.

    Each iteration recomputes the error mask from the current prediction, so
    the difficulty target tracks the moving model. Poly learning-rate decay.
    """
    if not samples:
        raise ConfigurationError("cannot train on an empty annotated set")
    seg, head = init_models(cfg, seed)
    images = torch.stack(
        [torch.from_numpy(np.ascontiguousarray(s.image.transpose(2, 0, 1))).float() for s in samples]
    )
    labels = torch.stack([torch.from_numpy(s.label) for s in samples])

    ce_weights = (
        class_weights(labels, cfg.num_classes, cfg.ignore_label)
        if cfg.class_balance else None
    )
    # the difficulty head sees weak gradients once the model fits the (small)
    # annotated set and its error mask empties, so it trains at a higher rate
    groups = [
        {"params": list(seg.parameters()), "base_lr": cfg.lr},
        {"params": list(head.parameters()), "base_lr": cfg.lr * cfg.head_lr_scale},
    ]
    opt = SGD(groups, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    n = len(samples)
    batches_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    max_it = cfg.epochs * batches_per_epoch

    gen = torch.Generator().manual_seed(seed)
    with torch.random.fork_rng():
        torch.manual_seed(seed + 1)  # dropout noise
        it = 0
        seg.train()
        head.train()
        for _ in range(cfg.epochs):
            order = torch.randperm(n, generator=gen)
            for b in range(batches_per_epoch):
                idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                x, y = images[idx], labels[idx]
                for group in opt.param_groups:
                    group["lr"] = _poly_lr(group["base_lr"], it, max_it, cfg.poly_power)

                logits = seg(x)
                l_seg = F.cross_entropy(logits, y, weight=ce_weights, ignore_index=cfg.ignore_label)

                probs = torch.softmax(logits, dim=1)
                if cfg.stop_gradient_to_seg:
                    probs = probs.detach()
                probs_ds = downsample_probs(probs, cfg.attention_size)
                md = head(probs_ds)

                pred = logits.argmax(dim=1).detach()
                l_dif = _batched_dif_loss(md, pred, y, cfg)

                loss = l_seg + cfg.alpha * l_dif.float()
                opt.zero_grad()
                loss.backward()
                opt.step()
                it += 1
    seg.eval()
    head.eval()
    return seg, head
