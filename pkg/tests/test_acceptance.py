"""Acceptance suite: every criterion prints one PASS line when it holds.

Run with `pytest tests/test_acceptance.py -v -s`. The end-to-end experiment
(criteria 5 and 6) trains 13 models and takes ~20 minutes on one CPU core.
"""

import math
import time

import numpy as np
import pytest
import torch

from segal import acquisition as acq
from segal.attention import pam_forward
from segal.config import ExperimentConfig
from segal.data import (
    THIN_LINE,
    generate_synthetic_dataset,
    split_initial,
    split_train_test,
)
from segal.harness import run_active_learning
from segal.losses import ErrorMask, compute_error_mask, dif_loss, seg_loss
from segal.model import ProbabilityMap

IGNORE = 255


def report(line):
    print(f"\n[acceptance] {line}")


def random_prob_matrix(rng, c, k):
    p = rng.random((c, k))
    return torch.from_numpy(p / p.sum(axis=0, keepdims=True))


# --------------------------------------------------------------------------
# criterion 1: attention module correctness
# --------------------------------------------------------------------------

def test_criterion_1_attention_correctness():
    start = time.time()
    rng = np.random.default_rng(101)
    for _ in range(100):
        c, k = int(rng.integers(2, 9)), int(rng.integers(2, 65))
        p = random_prob_matrix(rng, c, k)
        gamma = float(rng.normal())
        a, q = pam_forward(p, gamma)
        assert (a >= 0).all()
        assert torch.abs(a.sum(dim=1) - 1.0).max() < 1e-6

        _, q0 = pam_forward(p, 0.0)
        assert torch.equal(q0, p)

        perm = torch.from_numpy(rng.permutation(k))
        a2, q2 = pam_forward(p[:, perm], gamma)
        assert torch.equal(q2, q[:, perm])
        assert torch.equal(a2, a[perm][:, perm])

    # gradient check against central finite differences
    for _ in range(10):
        c, k = int(rng.integers(2, 5)), int(rng.integers(2, 17))
        p0 = random_prob_matrix(rng, c, k)
        w = torch.from_numpy(rng.normal(size=(c, k)))
        gamma0 = 0.6

        def f(p, gamma):
            _, q = pam_forward(p, gamma)
            return (w * q).sum()

        p = p0.clone().requires_grad_(True)
        gamma = torch.tensor(gamma0, dtype=torch.float64, requires_grad=True)
        f(p, gamma).backward()
        h = 1e-6
        for ci in range(c):
            for ki in range(k):
                up, down = p0.clone(), p0.clone()
                up[ci, ki] += h
                down[ci, ki] -= h
                fd = (f(up, gamma0) - f(down, gamma0)).item() / (2 * h)
                assert abs(p.grad[ci, ki].item() - fd) / max(abs(fd), 1e-3) < 1e-4
        fd_gamma = (f(p0, gamma0 + h) - f(p0, gamma0 - h)).item() / (2 * h)
        assert abs(gamma.grad.item() - fd_gamma) / max(abs(fd_gamma), 1e-3) < 1e-4

    elapsed = time.time() - start
    assert elapsed < 60
    report(f"criterion 1 PASS: attention rows normalized, gamma=0 identity, "
           f"exact permutation equivariance, gradients check ({elapsed:.1f}s)")


# --------------------------------------------------------------------------
# criterion 2: loss correctness
# --------------------------------------------------------------------------

def test_criterion_2_loss_correctness():
    start = time.time()
    rng = np.random.default_rng(202)
    eps = 1e-7
    for _ in range(100):
        h, w, c = 3, 3, 3
        gt = rng.integers(0, c, size=(h, w))
        gt[rng.random((h, w)) < 0.15] = IGNORE
        if (gt == IGNORE).all():
            gt[0, 0] = 0
        pred = rng.integers(0, c, size=(h, w))

        # error mask vs brute-force comparison loop
        em = compute_error_mask(torch.from_numpy(pred), torch.from_numpy(gt), IGNORE)
        for i in range(h):
            for j in range(w):
                expected = 0.0 if gt[i, j] == IGNORE else float(pred[i, j] != gt[i, j])
                assert em.mask[i, j].item() == expected

        # segmentation loss vs scalar loop
        probs = rng.random((c, h, w))
        probs /= probs.sum(axis=0, keepdims=True)
        total, count = 0.0, 0
        for i in range(h):
            for j in range(w):
                if gt[i, j] == IGNORE:
                    continue
                total += -math.log(min(max(probs[gt[i, j], i, j], eps), 1 - eps))
                count += 1
        got = seg_loss(torch.from_numpy(probs), torch.from_numpy(gt), IGNORE)
        assert abs(got.item() - total / count) < 1e-6

        # difficulty loss vs scalar loop
        valid = (gt != IGNORE).astype(np.float64)
        mask = (pred != gt).astype(np.float64) * valid
        md = rng.random((h, w)) * 0.9 + 0.05
        loss, lam1, lam2 = dif_loss(
            torch.from_numpy(md), ErrorMask(torch.from_numpy(mask), torch.from_numpy(valid))
        )
        assert lam1 + lam2 == 1.0
        kv = valid.sum()
        lam1_o = ((mask == 0) * valid).sum() / kv
        acc = 0.0
        for i in range(h):
            for j in range(w):
                if not valid[i, j]:
                    continue
                acc += lam1_o * mask[i, j] * math.log(md[i, j])
                acc += (1 - lam1_o) * (1 - mask[i, j]) * math.log(1 - md[i, j])
        assert abs(loss.item() - (-acc / kv)) < 1e-6

    # no errors -> zero loss
    mask = torch.zeros(4, 4, dtype=torch.float64)
    md = torch.rand(4, 4, dtype=torch.float64) * 0.8 + 0.1
    loss, lam1, _ = dif_loss(md, ErrorMask(mask, torch.ones_like(mask)))
    assert lam1 == 1.0 and loss.item() == 0.0

    elapsed = time.time() - start
    assert elapsed < 60
    report(f"criterion 2 PASS: error mask, CE and difficulty losses match "
           f"loop oracles; weights sum to 1 ({elapsed:.1f}s)")


# --------------------------------------------------------------------------
# criterion 3: acquisition correctness
# --------------------------------------------------------------------------

def test_criterion_3_acquisition_correctness():
    start = time.time()
    rng = np.random.default_rng(303)

    for _ in range(100):
        c, h, w = 3, 3, 3
        probs = rng.random((c, h, w))
        probs /= probs.sum(axis=0, keepdims=True)
        pm = ProbabilityMap(probs)
        ent, lc, mg = acq.entropy_map(pm), acq.lc_map(pm), acq.margin_map(pm)
        for i in range(h):
            for j in range(w):
                p = [probs[cc, i, j] for cc in range(c)]
                assert abs(ent[i, j] + sum(v * math.log(v) for v in p if v > 0)) < 1e-9
                assert abs(lc[i, j] - (1 - max(p))) < 1e-9
                top = sorted(p, reverse=True)
                assert abs(mg[i, j] - (1 - top[0] + top[1])) < 1e-9

        md = rng.random((h, w))
        ds = acq.score_ds(ent, md)
        assert abs(ds - sum(ent[i, j] * md[i, j] for i in range(h) for j in range(w)) / 9) < 1e-9

        levels = int(rng.integers(2, 11))
        hist = acq.quantize_difficulty(md, levels)
        assert hist.counts.sum() == hist.total == h * w
        de = acq.score_de(hist)
        counts = [0] * levels
        for v in md.ravel():
            counts[min(int(v * levels), levels - 1)] += 1
        expected = -sum((n / 9) * math.log(n / 9) for n in counts if n)
        assert abs(de - expected) < 1e-9
        assert -1e-12 <= de <= math.log(levels) + 1e-12

        maps = [ProbabilityMap(np.apply_along_axis(lambda v: v / v.sum(), 0, rng.random((c, h, w))))
                for _ in range(4)]
        stack = np.stack([m.probs for m in maps])
        me, vr = 0.0, 0.0
        for i in range(h):
            for j in range(w):
                mean = [stack[:, cc, i, j].mean() for cc in range(c)]
                me += -sum(v * math.log(v) for v in mean if v > 0)
                votes = [int(np.argmax(stack[p, :, i, j])) for p in range(4)]
                vr += 1 - max(votes.count(cc) for cc in range(c)) / 4
        assert abs(acq.score_qbc(maps, "max-entropy") - me / 9) < 1e-9
        assert abs(acq.score_qbc(maps, "variation-ratio") - vr / 9) < 1e-9

    # DE equality cases
    assert acq.score_de(acq.DifficultyHistogram(np.array([7, 0, 0]), 7)) == 0.0
    uniform = acq.score_de(acq.DifficultyHistogram(np.array([5, 5, 5, 5]), 20))
    assert abs(uniform - math.log(4)) < 1e-12

    # k-Center-Greedy vs exhaustive per-step scan, up to 200 points
    for trial in range(10):
        n_lab = int(rng.integers(1, 20))
        n_unl = int(rng.integers(5, 200 - n_lab))
        labeled = {f"l{i}": rng.random(2) for i in range(n_lab)}
        unlabeled = {f"u{i:03d}": rng.random(2) for i in range(n_unl)}
        m = int(rng.integers(1, 4))
        picked = acq.select_coreset(labeled, unlabeled, m)
        pool_ids = sorted(unlabeled)
        centers = [labeled[i] for i in sorted(labeled)]
        remaining = set(pool_ids)
        for step in range(m):
            best_id, best_d = None, -1.0
            for cand in sorted(remaining):
                d = min(np.linalg.norm(unlabeled[cand] - ctr) for ctr in centers)
                if d > best_d:
                    best_id, best_d = cand, d
            assert picked[step] == best_id
            centers.append(unlabeled[best_id])
            remaining.remove(best_id)

    elapsed = time.time() - start
    assert elapsed < 120
    report(f"criterion 3 PASS: DS/DE/entropy/LC/margin/QBC match oracles, "
           f"histograms partition pixels, greedy k-center exact ({elapsed:.1f}s)")


# --------------------------------------------------------------------------
# criterion 4: round-loop bookkeeping
# --------------------------------------------------------------------------

def bookkeeping_cfg():
    return ExperimentConfig(
        n_images=60, rounds=3, epochs=3, batch_size=4, base_channels=4,
        attention_height=8, attention_width=8, test_fraction=0.2,
        initial_fraction=0.1, budget_fraction=0.05,
    )


def bookkeeping_run(cfg, seed):
    samples = generate_synthetic_dataset(cfg.n_images, cfg.image_size, seed=seed)
    train, test = split_train_test(samples, cfg.test_fraction, seed=seed)
    pool = split_initial(train, cfg.initial_fraction, seed=seed)
    ledger = run_active_learning(cfg, pool, test, strategy="entropy", seed=seed)
    return pool, test, ledger


def test_criterion_4_bookkeeping():
    start = time.time()
    cfg = bookkeeping_cfg()
    pool, test, ledger = bookkeeping_run(cfg, seed=0)
    budget = round(cfg.budget_fraction * len(pool))
    initial = ledger.records[0].num_annotated

    assert pool.check_partition()
    assert ledger.status == "complete"
    for n, rec in enumerate(ledger.records):
        assert rec.num_annotated == initial + n * budget
    assert not ({s.id for s in test} & set(pool.all_ids))

    pool2, _, ledger2 = bookkeeping_run(cfg, seed=0)
    assert pool2.annotated_ids == pool.annotated_ids
    for a, b in zip(ledger.records, ledger2.records):
        assert a.selected_ids == b.selected_ids
        assert abs(a.miou - b.miou) <= 1e-6
        assert abs(a.class_entropy - b.class_entropy) <= 1e-6

    elapsed = time.time() - start
    assert elapsed < 300
    report(f"criterion 4 PASS: partition held, budget accounting exact, "
           f"fixed-seed ledgers reproduce, no test leakage ({elapsed:.1f}s)")


# --------------------------------------------------------------------------
# criteria 5 and 6: end-to-end toy experiment and attention ablation
# --------------------------------------------------------------------------

TOY_SEEDS = (0, 1, 2)
TOY_STRATEGIES = ("random", "entropy", "ds", "de")


def toy_cfg(**over):
    base = dict(
        n_images=200, image_height=64, image_width=64, num_classes=4,
        initial_fraction=0.1, budget_fraction=0.05, rounds=4,
        epochs=45, lr=0.03, batch_size=4, base_channels=8,
        attention_height=16, attention_width=16, levels=8,
    )
    base.update(over)
    return ExperimentConfig(**base)


def toy_run(cfg, strategy, seed):
    samples = generate_synthetic_dataset(cfg.n_images, cfg.image_size, seed=seed)
    train, test = split_train_test(samples, cfg.test_fraction, seed=seed)
    pool = split_initial(train, cfg.initial_fraction, seed=seed)
    return run_active_learning(cfg, pool, test, strategy=strategy, seed=seed)


@pytest.fixture(scope="module")
def toy_ledgers():
    cfg = toy_cfg()
    out = {}
    for strategy in TOY_STRATEGIES:
        for seed in TOY_SEEDS:
            t0 = time.time()
            out[(strategy, seed)] = toy_run(cfg, strategy, seed)
            print(f"\n[acceptance]   toy run {strategy} seed {seed}: "
                  f"final mIoU {out[(strategy, seed)].final.miou:.3f} "
                  f"({time.time() - t0:.0f}s)", flush=True)
    return out


def mean_over_seeds(ledgers, strategy, fn):
    return float(np.mean([fn(ledgers[(strategy, s)]) for s in TOY_SEEDS]))


@pytest.mark.slow
def test_criterion_5_toy_experiment(toy_ledgers):
    start = time.time()
    final_miou = lambda led: led.final.miou
    line_iou = lambda led: led.final.per_class_iou[THIN_LINE] or 0.0
    final_entropy = lambda led: led.final.class_entropy

    ds_miou = mean_over_seeds(toy_ledgers, "ds", final_miou)
    rnd_miou = mean_over_seeds(toy_ledgers, "random", final_miou)
    ds_line = mean_over_seeds(toy_ledgers, "ds", line_iou)
    rnd_line = mean_over_seeds(toy_ledgers, "random", line_iou)
    de_ent = mean_over_seeds(toy_ledgers, "de", final_entropy)
    rnd_ent = mean_over_seeds(toy_ledgers, "random", final_entropy)

    assert ds_miou >= rnd_miou
    assert ds_line >= rnd_line
    assert de_ent >= rnd_ent

    elapsed = time.time() - start
    report(
        "criterion 5 PASS: "
        f"mIoU DS {ds_miou:.3f} >= Random {rnd_miou:.3f}; "
        f"hard-class IoU DS {ds_line:.3f} >= Random {rnd_line:.3f}; "
        f"labeled-set entropy DE {de_ent:.3f} >= Random {rnd_ent:.3f}"
    )


@pytest.mark.slow
def test_criterion_6_attention_ablation(toy_ledgers):
    ablation = toy_run(toy_cfg(pam_enabled=False), "ds", seed=0)

    assert ablation.status == "complete"
    assert len(ablation.records) == toy_cfg().rounds + 1
    for rec in ablation.records:
        assert np.isfinite(rec.miou) and np.isfinite(rec.class_entropy)
        assert rec.per_class_iou

    with_pam = toy_ledgers[("ds", 0)].final.miou
    without_pam = ablation.final.miou
    report(
        "criterion 6 PASS: ablation pipeline complete; final mIoU "
        f"with attention {with_pam:.3f} vs without {without_pam:.3f}"
    )
