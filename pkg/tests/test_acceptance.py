"""Acceptance criteria 1-7, each printing one PASS/FAIL line."""

import math
import time

import numpy as np
import pytest
import torch

from charvoc.asr_ctc import CTCRecognizer, frame_posteriors
from charvoc.conditioning import film_apply
from charvoc.data import make_corpus
from charvoc.evaluation import TrialScores, eer, uar, wer
from charvoc.losses import DiscriminatorBank, LossWeights, ctc_loss, mel_loss
from charvoc.symbols import NUM_SYMBOLS, collapse, resize_indices, resize_nearest
from charvoc.training import Schedule, Trainer, cosine_lr, parameter_hash, seed_everything, warmup_discriminators
from charvoc.vocoder import Generator, VocoderConfig
from conftest import ACCEPTANCE_LINES, analytic_gradient, central_difference, relative_error
from test_evaluation import confusion_uar, recursive_distance, sweep_eer
from test_losses import brute_force_ctc, random_instance


def report(number, title, checks, seconds, budget):
    """Print one line per criterion, then fail the test if anything failed."""
    failed = [name for name, ok in checks.items() if not ok]
    in_time = seconds < budget
    status = "PASS" if not failed and in_time else "FAIL"
    detail = f"{seconds:.1f}s (budget {budget:.0f}s)"
    if failed:
        detail += "; failed: " + ", ".join(failed)
    line = f"criterion {number} {title}: {status} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert not failed, failed
    assert in_time, f"runtime {seconds:.1f}s over {budget}s"


def test_criterion_1_identity_conditioning():
    t0 = time.time()
    rng = np.random.default_rng(1)
    cfg = VocoderConfig()
    ok = True
    for i in range(20):
        torch.manual_seed(i)
        gen = Generator(cfg).eval()
        T = int(rng.integers(1, 40))
        a = torch.as_tensor(rng.integers(0, cfg.codebook_size, (1, cfg.codebooks, T)))
        c1 = torch.as_tensor(rng.integers(0, NUM_SYMBOLS, (1, T)))
        c2 = torch.as_tensor(rng.integers(0, NUM_SYMBOLS, (1, T)))
        with torch.no_grad():
            ok &= torch.equal(gen(a, c1), gen(a, c2))
    report(1, "identity conditioning", {"bit-exact on 20 pairs": ok}, time.time() - t0, 10)


def test_criterion_2_gradient_suite():
    t0 = time.time()
    g = torch.Generator().manual_seed(0)
    f64 = dict(generator=g, dtype=torch.float64)
    checks = {}

    x, w, b, k = (torch.randn(4, 6, **f64) for _ in range(4))
    errs = []
    for which in "xwb":
        args = {"x": x, "w": w, "b": b}

        def film(v, which=which):
            kw = dict(args, **{which: v})
            return (k * film_apply(kw["x"], kw["w"], kw["b"]) ** 2).sum()

        errs.append(relative_error(analytic_gradient(film, args[which]), central_difference(film, args[which])))
    checks["film_apply < 1e-5"] = max(errs) < 1e-5

    rng = np.random.default_rng(0)
    errs = []
    for _ in range(5):
        lp, target = random_instance(rng, max_T=5, max_V=4)
        f = lambda v, target=target: ctc_loss(v, target)
        lp = torch.as_tensor(lp)
        errs.append(relative_error(analytic_gradient(f, lp), central_difference(f, lp)))
    checks["ctc_loss < 1e-4"] = max(errs) < 1e-4

    ref = torch.randn(256, **f64) * 0.3
    gen = torch.randn(256, **f64) * 0.3
    f = lambda v: mel_loss(ref, v)
    checks["mel_loss < 1e-3"] = relative_error(analytic_gradient(f, gen), central_difference(f, gen)) < 1e-3

    torch.manual_seed(1)
    model = CTCRecognizer().double().eval()
    for p in model.parameters():
        p.requires_grad_(False)
    u = torch.randn(256, **f64) * 0.3
    wt = torch.randn(4, NUM_SYMBOLS, **f64)
    f = lambda v: (wt * frame_posteriors(v, model)).sum()
    checks["recogniser input < 1e-3"] = relative_error(analytic_gradient(f, u), central_difference(f, u)) < 1e-3
    report(2, "gradient suite", checks, time.time() - t0, 120)


def test_criterion_3_ctc_oracle():
    t0 = time.time()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        lp, target = random_instance(rng, max_T=8, max_V=4)
        worst = max(worst, abs(ctc_loss(torch.as_tensor(lp), target).item() - brute_force_ctc(lp, target)))
    uniform = torch.full((2, 2), math.log(0.5), dtype=torch.float64)
    checks = {
        "50 instances within 1e-6": worst < 1e-6,
        "uniform grid = -ln(0.75)": abs(ctc_loss(uniform, [1]).item() + math.log(0.75)) < 1e-6,
    }
    report(3, "CTC oracle", checks, time.time() - t0, 60)


def test_criterion_4_metric_oracles():
    t0 = time.time()
    rng = np.random.default_rng(4)
    words = lambda n: [str(s) for s in rng.choice(list("abcde"), size=n)]
    wer_ok = True
    for _ in range(100):
        ref, hyp = words(rng.integers(1, 7)), words(rng.integers(0, 7))
        wer_ok &= wer(ref, hyp) == recursive_distance(tuple(ref), tuple(hyp)) / len(ref)

    eer_ok = True
    for _ in range(50):
        gs = list(np.round(rng.normal(0.6, 0.2, rng.integers(1, 12)), 2))
        im = list(np.round(rng.normal(0.4, 0.2, rng.integers(1, 12)), 2))
        eer_ok &= eer(TrialScores(gs, im)) == sweep_eer(gs, im)
    anchors = eer(TrialScores([0.9, 0.8], [0.1, 0.2])) == 0.0 and eer(TrialScores([0.3, 0.7], [0.7, 0.3])) == 0.5

    uar_ok = True
    for _ in range(50):
        n = int(rng.integers(1, 20))
        labels, preds = list(rng.integers(0, 4, n)), list(rng.integers(0, 5, n))
        uar_ok &= abs(uar(labels, preds) - confusion_uar(labels, preds)) < 1e-12
    checks = {"wer exact on 100 pairs": wer_ok, "eer exact on 50 sweeps": eer_ok, "eer anchors": anchors,
              "uar on 50 labelings": uar_ok}
    report(4, "metric oracles", checks, time.time() - t0, 60)


JOINT_PREFIX_STEPS = 400


def test_criterion_5_training_mechanics(trained_recognizer, toy_corpus):
    from charvoc.data import PseudoCodecConfig, build_triplets

    triplets, failures = build_triplets(toy_corpus[0], trained_recognizer, PseudoCodecConfig())
    assert not failures
    t0 = time.time()
    seed_everything(0)
    checks = {}

    torch.manual_seed(0)
    gen, bank = Generator(VocoderConfig()), DiscriminatorBank()
    before = parameter_hash(gen)
    warm = Schedule(total_steps=200, initial_lr=1e-3)
    warmup_discriminators(bank, gen, triplets, warm)
    checks["warm-up leaves generator bit-identical"] = parameter_hash(gen) == before

    checks["cosine endpoints"] = cosine_lr(0, 2000, 5e-4) == 5e-4 and cosine_lr(2000, 2000, 5e-4) == 0.0

    # two seeded joint runs over a prefix of the 2000-step desk schedule
    logs, asr_before = [], parameter_hash(trained_recognizer)
    for _ in range(2):
        torch.manual_seed(0)
        trainer = Trainer(Generator(VocoderConfig()), DiscriminatorBank(), trained_recognizer, Schedule())
        trainer.run(triplets, until=JOINT_PREFIX_STEPS)
        logs.append(trainer.metrics.to_csv().encode())
    checks["joint training leaves recogniser bit-identical"] = parameter_hash(trained_recognizer) == asr_before
    checks["seeded rerun byte-identical"] = logs[0] == logs[1]
    checks["metrics rows"] = len(logs[0].splitlines()) == JOINT_PREFIX_STEPS + 1
    report(5, "training mechanics", checks, time.time() - t0, 300)


@pytest.mark.slow
def test_criterion_6_toy_direction(tmp_path_factory):
    import json

    from charvoc.pipeline import run_ablation, toy_setup

    t0 = time.time()
    seed_everything(0)
    setup = toy_setup(corpus_size=500, eval_size=100, corpus_seed=0)
    results = run_ablation(setup, seeds=(0, 1, 2), ratio=0.7)
    for r in results:
        ACCEPTANCE_LINES.append(
            f"  seed {r['seed']}: WER conditioned {r['wer_conditioned']:.4f} "
            f"unconditioned {r['wer_unconditioned']:.4f} ratio-pass {r['passed']}"
        )
    out = tmp_path_factory.mktemp("ablation") / "ablation.json"
    out.write_text(json.dumps(results, indent=2))
    passes = sum(r["passed"] for r in results)
    checks = {f"WER_cond <= 0.7 WER_uncond on >= 2/3 seeds ({passes}/3)": passes >= 2}
    report(6, "toy end-to-end direction", checks, time.time() - t0, 3600)


def test_criterion_7_resize_collapse():
    t0 = time.time()
    rng = np.random.default_rng(7)
    ok = {"length": True, "identity": True, "subset": True, "monotone": True, "collapse": True, "oracle": True}
    for _ in range(1000):
        L, T = int(rng.integers(1, 60)), int(rng.integers(1, 120))
        seq = rng.integers(0, NUM_SYMBOLS, L)
        out = resize_nearest(seq, T)
        idx = resize_indices(L, T)
        ok["length"] &= out.size == T
        ok["identity"] &= np.array_equal(resize_nearest(seq, L), seq)
        ok["subset"] &= set(out.tolist()) <= set(seq.tolist())
        ok["monotone"] &= bool(np.all(np.diff(idx) >= 0))
        ok["oracle"] &= all(idx[i] == math.floor((i + 0.5) * L / T) for i in range(T))
        if T >= L:
            ok["collapse"] &= np.array_equal(collapse(resize_nearest(seq, T)), collapse(seq))
        else:
            ok["collapse"] &= np.array_equal(collapse(resize_nearest(seq, L + T)), collapse(seq))
    report(7, "resize and collapse properties", ok, time.time() - t0, 10)
