import itertools
import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from charvoc.losses import (
    DiscriminatorBank,
    LengthMismatch,
    LossWeights,
    ShapeMismatch,
    TargetTooLong,
    ctc_loss,
    disc_loss,
    discriminate,
    feature_matching_loss,
    gen_adv_loss,
    generator_loss,
    mel_loss,
    min_ctc_frames,
    pad_to_period,
)
from conftest import analytic_gradient, central_difference, relative_error


def brute_force_ctc(log_probs: np.ndarray, target) -> float:
    """-log sum of probabilities of every frame path that collapses to target."""
    T, V = log_probs.shape
    probs = np.exp(log_probs)
    target = list(target)
    total = 0.0
    for path in itertools.product(range(V), repeat=T):
        merged = [s for i, s in enumerate(path) if i == 0 or s != path[i - 1]]
        if [s for s in merged if s != 0] == target:
            total += float(np.prod(probs[np.arange(T), path]))
    return -math.log(total)


def random_instance(rng, max_T=8, max_V=4):
    V = int(rng.integers(2, max_V + 1))
    T = int(rng.integers(1, max_T + 1))
    while True:
        L = int(rng.integers(0, T + 1))
        target = rng.integers(1, V, size=L).tolist()
        if min_ctc_frames(target) <= T:
            break
    logits = rng.standard_normal((T, V)) * 2
    lp = logits - np.log(np.exp(logits).sum(1, keepdims=True))
    return lp, target


def test_ctc_single_forced_alignment():
    lp = torch.log(torch.tensor([[1e-300, 1.0]], dtype=torch.float64))
    assert ctc_loss(lp, [1]).item() == pytest.approx(0.0, abs=1e-12)


def test_ctc_uniform_two_frames():
    lp = torch.full((2, 2), math.log(0.5), dtype=torch.float64)
    expected = brute_force_ctc(lp.numpy(), [1])
    assert expected == pytest.approx(-math.log(0.75), abs=1e-12)
    assert ctc_loss(lp, [1]).item() == pytest.approx(0.2876820724517809, abs=1e-12)


def test_ctc_target_too_long():
    lp = torch.full((2, 3), math.log(1 / 3))
    with pytest.raises(TargetTooLong):
        ctc_loss(lp, [1, 1])
    assert min_ctc_frames([1, 1]) == 3
    assert min_ctc_frames([1, 2]) == 2


def test_ctc_matches_brute_force(rng):
    for _ in range(30):
        lp, target = random_instance(rng)
        got = ctc_loss(torch.as_tensor(lp), target).item()
        assert got == pytest.approx(brute_force_ctc(lp, target), abs=1e-6)


def test_ctc_batched_equals_individual(rng):
    T, V = 7, 4
    lps, targets = [], []
    for L in (0, 1, 3, 2):
        logits = rng.standard_normal((T, V))
        lps.append(logits - np.log(np.exp(logits).sum(1, keepdims=True)))
        targets.append(rng.integers(1, V, size=L).tolist())
    batch = torch.as_tensor(np.stack(lps))
    per_item = ctc_loss(batch, targets, reduction="none")
    for i in range(4):
        assert per_item[i].item() == pytest.approx(ctc_loss(torch.as_tensor(lps[i]), targets[i]).item(), abs=1e-12)
    mean = ctc_loss(batch, targets, reduction="mean").item()
    expected = np.mean([per_item[i].item() / max(len(targets[i]), 1) for i in range(4)])
    assert mean == pytest.approx(expected, abs=1e-12)


def test_ctc_agrees_with_torch(rng):
    T, V, B = 12, 6, 3
    logits = torch.as_tensor(rng.standard_normal((B, T, V)))
    lp = logits.log_softmax(-1)
    targets = [[1, 2, 2, 3], [5], [4, 1, 4]]
    ours = ctc_loss(lp, targets, reduction="none")
    ref = F.ctc_loss(
        lp.transpose(0, 1), torch.tensor(sum(targets, [])), torch.full((B,), T),
        torch.tensor([len(t) for t in targets]), reduction="none",
    )
    assert torch.allclose(ours, ref, atol=1e-8)


def test_ctc_gradient_finite_differences(rng):
    for _ in range(5):
        lp, target = random_instance(rng, max_T=5)
        x = torch.as_tensor(lp)
        f = lambda v: ctc_loss(v, target)
        assert relative_error(analytic_gradient(f, x), central_difference(f, x, 1e-6)) < 1e-4


def test_mel_loss_examples():
    torch.manual_seed(0)
    u = torch.randn(1, 1024) * 0.3
    assert mel_loss(u, u).item() == 0.0
    assert mel_loss(u, -u).item() == pytest.approx(0.0, abs=1e-6)
    assert mel_loss(torch.zeros(1, 1024), torch.randn(1, 1024)).item() > 0
    with pytest.raises(LengthMismatch):
        mel_loss(torch.zeros(1, 512), torch.zeros(1, 256))


def test_mel_loss_gradient():
    g = torch.Generator().manual_seed(4)
    ref = torch.randn(1, 256, generator=g, dtype=torch.float64) * 0.3
    gen = torch.randn(1, 256, generator=g, dtype=torch.float64) * 0.3
    f = lambda v: mel_loss(ref, v)
    assert relative_error(analytic_gradient(f, gen), central_difference(f, gen, 1e-6)) < 1e-3


def test_period_padding():
    u = torch.arange(10.0)[None]
    x = pad_to_period(u, 3)
    assert x.shape == (1, 1, 4, 3)
    assert x.flatten().tolist() == list(range(10)) + [0.0, 0.0]


def test_discriminator_bank_structure():
    torch.manual_seed(0)
    bank = DiscriminatorBank()
    assert bank.periods == (2, 3, 5)
    u = torch.randn(2, 1000) * 0.1
    outs = discriminate(bank, u)
    assert len(outs) == 5
    for score, feats in outs:
        assert score.shape[0] == 2
        assert len(feats) >= 2
    again = discriminate(bank, u)
    for (s1, _), (s2, _) in zip(outs, again):
        assert torch.equal(s1, s2)


def test_discriminator_bank_rejects_non_primes():
    with pytest.raises(ValueError):
        DiscriminatorBank(periods=(2, 4))
    with pytest.raises(ValueError):
        DiscriminatorBank(periods=(3, 3))


def test_hinge_losses():
    assert disc_loss(torch.full((4,), 2.0), torch.full((4,), -2.0)).item() == 0.0
    assert gen_adv_loss(torch.zeros(5)).item() == 0.0
    assert disc_loss(torch.zeros(3), torch.zeros(3)).item() == 2.0
    assert disc_loss([torch.zeros(3)] * 4, [torch.zeros(2)] * 4).item() == 2.0
    assert gen_adv_loss([torch.ones(3), -3 * torch.ones(2)]).item() == pytest.approx(1.0)


def test_disc_loss_non_negative(rng):
    for _ in range(50):
        r = torch.as_tensor(rng.standard_normal(6) * 3)
        f = torch.as_tensor(rng.standard_normal(6) * 3)
        assert disc_loss(r, f).item() >= 0


def test_feature_matching():
    torch.manual_seed(0)
    feats = [[torch.randn(2, 3), torch.randn(4)], [torch.randn(5)]]
    assert feature_matching_loss(feats, feats).item() == 0.0
    shifted = [[f + 0.25 for f in d] for d in feats]
    assert feature_matching_loss(feats, shifted).item() == pytest.approx(0.25)
    other = [[torch.randn_like(f) for f in d] for d in feats]
    assert feature_matching_loss(feats, other).item() > 0
    with pytest.raises(ShapeMismatch):
        feature_matching_loss([[torch.zeros(2)]], [[torch.zeros(3)]])


def test_generator_loss_weights():
    w = LossWeights()
    assert (w.lambda_mel, w.lambda_gan, w.lambda_fm, w.lambda_ctc) == (1.0, 0.5, 1.0, 1.5)
    assert generator_loss(1.0, 1.0, 1.0, 1.0, w) == 4.0
    assert generator_loss(3.0, 2.0, 7.0, 5.0, LossWeights(0, 0, 0, 0)) == 0.0
    comps = (0.3, -1.2, 0.8, 2.5)
    assert generator_loss(*[2 * c for c in comps], w) == pytest.approx(2 * generator_loss(*comps, w))


def test_generator_loss_linear_in_each_term(rng):
    w = LossWeights(*rng.uniform(0, 2, 4))
    base = rng.standard_normal(4)
    for i in range(4):
        bumped = base.copy()
        bumped[i] += 1.0
        lam = [w.lambda_mel, w.lambda_gan, w.lambda_fm, w.lambda_ctc][i]
        diff = generator_loss(*bumped, w) - generator_loss(*base, w)
        assert diff == pytest.approx(lam, abs=1e-12)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda_ctc=-1)
    with pytest.raises(ValueError):
        LossWeights(lambda_mel=float("nan"))
