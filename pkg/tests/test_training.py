import numpy as np
import pytest
import torch

from segal.config import ExperimentConfig
from segal.data import generate_synthetic_dataset
from segal.exceptions import ConfigurationError
from segal.losses import compute_error_mask, dif_loss, downsample_mask_majority
from segal.training import _batched_dif_loss, class_weights, train_two_branch


def tiny_cfg(**over):
    base = dict(epochs=2, batch_size=8, base_channels=4,
                attention_height=8, attention_width=8)
    base.update(over)
    return ExperimentConfig(**base)


def test_empty_annotated_set_rejected():
    with pytest.raises(ConfigurationError):
        train_two_branch([], tiny_cfg(), seed=0)


def test_training_is_deterministic():
    samples = generate_synthetic_dataset(6, (32, 32), seed=0)
    cfg = tiny_cfg()
    seg_a, _ = train_two_branch(samples, cfg, seed=3)
    seg_b, _ = train_two_branch(samples, cfg, seed=3)
    for pa, pb in zip(seg_a.parameters(), seg_b.parameters()):
        assert torch.equal(pa, pb)


def test_pam_disabled_and_stop_gradient_paths_run():
    samples = generate_synthetic_dataset(4, (32, 32), seed=1)
    for cfg in (tiny_cfg(pam_enabled=False), tiny_cfg(stop_gradient_to_seg=True)):
        seg, head = train_two_branch(samples, cfg, seed=0)
        assert head.pam_enabled == cfg.pam_enabled


def test_class_weights_median_frequency():
    # 8 pixels of class 0, 4 of class 1, 2 of class 2; class 3 absent
    labels = torch.tensor([[0] * 8 + [1] * 4 + [2] * 2 + [255] * 2])
    w = class_weights(labels, num_classes=4, ignore_label=255)
    # frequencies 8/14, 4/14, 2/14 -> median 4/14
    assert torch.allclose(w, torch.tensor([0.5, 1.0, 2.0, 0.0]))


def test_class_weights_uniform_labels():
    labels = torch.full((2, 4, 4), 1)
    w = class_weights(labels, num_classes=3, ignore_label=255)
    assert w.tolist() == [0.0, 1.0, 0.0]


def test_batched_dif_loss_matches_per_image_loop():
    cfg = tiny_cfg()
    rng = np.random.default_rng(2)
    md = torch.from_numpy(rng.random((3, 8, 8)) * 0.9 + 0.05)
    gt = torch.from_numpy(rng.integers(0, 4, size=(3, 32, 32)))
    pred = gt.clone()
    flip = torch.from_numpy(rng.random((3, 32, 32)) < 0.25)
    pred[flip] = (pred[flip] + 1) % 4
    gt[0, :4] = cfg.ignore_label
    batched = _batched_dif_loss(md, pred, gt, cfg)
    per_image = []
    for j in range(3):
        em = compute_error_mask(pred[j], gt[j], cfg.ignore_label)
        em_ds = downsample_mask_majority(em, cfg.attention_size)
        per_image.append(dif_loss(md[j], em_ds)[0].item())
    assert abs(batched.item() - np.mean(per_image)) < 1e-10
