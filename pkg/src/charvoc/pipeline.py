"""End-to-end steps shared by the CLI and the toy experiments."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import torch

from charvoc import checkpoint as ckpt
from charvoc import plotting
from charvoc.asr_ctc import CTCRecognizer, RecognizerConfig, freeze
from charvoc.config import RunConfig
from charvoc.data import (
    PseudoCodecConfig,
    TrainingTriplet,
    Utterance,
    build_triplets,
    load_triplet_cache,
    make_corpus,
    read_manifest,
    save_triplet_cache,
    write_corpus,
)
from charvoc.evaluation import EvalReport, VocoderAnonymiser, evaluate_corpus
from charvoc.losses import DiscriminatorBank, LossWeights
from charvoc.training import (
    MetricsLog,
    Schedule,
    Trainer,
    seed_everything,
    train_recognizer,
    warmup_discriminators,
)
from charvoc.vocoder import Generator, VocoderConfig

log = logging.getLogger(__name__)


class MissingArtifact(FileNotFoundError):
    pass


def paths(cfg: RunConfig) -> dict:
    root = cfg.root
    return {
        "asr": root / "asr.ckpt",
        "triplets": root / "triplets",
        "warmup": root / "warmup.ckpt",
        "vocoder": root / "vocoder.ckpt",
        "metrics": root / "metrics.csv",
        "reports": root / "reports",
    }


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"{path} not found; run `{hint}` first")
    return path


# --------------------------------------------------------------------------
# model loading


def save_recognizer(path, model: CTCRecognizer) -> None:
    ckpt.save_checkpoint(path, {"recognizer": model}, {"kind": "recognizer", "recognizer": model.config.to_dict()})


def load_recognizer(path) -> CTCRecognizer:
    meta, tensors = ckpt.read_checkpoint(path)
    model = CTCRecognizer(RecognizerConfig.from_dict(meta["recognizer"]))
    model.load_state_dict(ckpt.module_state(tensors, "recognizer"))
    return freeze(model)


def load_generator(path) -> Tuple[Generator, dict]:
    meta, tensors = ckpt.read_checkpoint(path)
    gen = Generator(VocoderConfig.from_dict(meta["vocoder"]))
    gen.load_state_dict(ckpt.module_state(tensors, "generator"))
    gen.eval()
    return gen, meta


# --------------------------------------------------------------------------
# steps


def prepare_data(cfg: RunConfig) -> dict:
    """Synthesise the toy corpus (unless manifests exist) and, when a trained
    recogniser is available, the triplet cache."""
    summary = {}
    train_m, eval_m = cfg.train_manifest_path, cfg.eval_manifest_path
    if not train_m.exists():
        utts = make_corpus(cfg.corpus_size, cfg.corpus_seed, cfg.sample_rate, cfg.chunk_ms, cfg.snr_db, "train")
        write_corpus(utts, train_m.parent, train_m.name)
        summary["train_manifest"] = str(train_m)
    if not eval_m.exists():
        utts = make_corpus(cfg.eval_size, cfg.corpus_seed + 1000003, cfg.sample_rate, cfg.chunk_ms, cfg.snr_db, "eval")
        write_corpus(utts, eval_m.parent, eval_m.name)
        summary["eval_manifest"] = str(eval_m)
    p = paths(cfg)
    summary["failures"] = []
    if p["asr"].exists():
        triplets, failures = build_triplets(read_manifest(train_m), load_recognizer(p["asr"]), cfg.codec_config())
        save_triplet_cache(triplets, p["triplets"])
        summary["triplets"] = len(triplets)
        summary["failures"] = failures
    else:
        summary["triplets"] = None
    return summary


def get_triplets(cfg: RunConfig) -> List[TrainingTriplet]:
    p = paths(cfg)
    if not (p["triplets"] / "index.txt").exists():
        _require(p["asr"], "charvoc train-asr")
        triplets, failures = build_triplets(
            read_manifest(_require(cfg.train_manifest_path, "charvoc prepare-data")),
            load_recognizer(p["asr"]),
            cfg.codec_config(),
        )
        save_triplet_cache(triplets, p["triplets"])
    return load_triplet_cache(p["triplets"])


def train_asr(cfg: RunConfig) -> Path:
    seed_everything(cfg.seed, cfg.deterministic)
    entries = read_manifest(_require(cfg.train_manifest_path, "charvoc prepare-data"))
    utts = [e.load() for e in entries]
    model = CTCRecognizer(cfg.recognizer_config())
    train_recognizer(model, utts, cfg.asr_steps, cfg.asr_lr, cfg.asr_batch_size, cfg.seed)
    out = paths(cfg)["asr"]
    save_recognizer(out, model)
    return out


def new_models(vcfg: VocoderConfig, seed: int) -> Tuple[Generator, DiscriminatorBank]:
    torch.manual_seed(seed)
    gen = Generator(vcfg)
    bank = DiscriminatorBank()
    return gen, bank


def warmup(cfg: RunConfig) -> Tuple[Path, List[dict]]:
    seed_everything(cfg.seed, cfg.deterministic)
    triplets = get_triplets(cfg)
    gen, bank = new_models(cfg.vocoder_config(), cfg.seed)
    rows = warmup_discriminators(bank, gen, triplets, cfg.schedule(warmup=True))
    p = paths(cfg)
    trainer = Trainer(gen, bank, load_recognizer(p["asr"]), cfg.schedule(), cfg.loss_weights(), cfg.sample_rate)
    trainer.save(p["warmup"], {"kind": "warmup"})
    p["reports"].mkdir(parents=True, exist_ok=True)
    with open(p["reports"] / "warmup.csv", "w") as f:
        f.write("step,lr,l_disc\n" + "".join(f"{r['step']},{r['lr']!r},{r['l_disc']!r}\n" for r in rows))
    plotting.plot_disc_warmup(rows, p["reports"] / "warmup.png")
    return p["warmup"], rows


def train(cfg: RunConfig, resume: bool = False, skip_warmup: bool = False) -> Tuple[Path, MetricsLog]:
    seed_everything(cfg.seed, cfg.deterministic)
    p = paths(cfg)
    triplets = get_triplets(cfg)
    gen, bank = new_models(cfg.vocoder_config(), cfg.seed)
    trainer = Trainer(gen, bank, load_recognizer(_require(p["asr"], "charvoc train-asr")),
                      cfg.schedule(), cfg.loss_weights(), cfg.sample_rate)
    if resume:
        trainer.load_state(_require(p["vocoder"], "charvoc train"))
    elif not skip_warmup:
        _, tensors = ckpt.read_checkpoint(_require(p["warmup"], "charvoc warmup"))
        gen.load_state_dict(ckpt.module_state(tensors, "generator"))
        bank.load_state_dict(ckpt.module_state(tensors, "discriminators"))
    trainer.metrics.path = p["metrics"]
    trainer.run(triplets, checkpoint_path=p["vocoder"], checkpoint_every=cfg.checkpoint_every,
                dump_dir=p["reports"])
    trainer.save(p["vocoder"])
    trainer.metrics.save()
    plotting.plot_training_curves(trainer.metrics.rows, p["reports"] / "metrics.png")
    return p["vocoder"], trainer.metrics


# --------------------------------------------------------------------------
# toy ablation


@dataclass
class AblationSetup:
    train_triplets: Sequence[TrainingTriplet]
    eval_utterances: Sequence
    recognizer: CTCRecognizer
    vocoder: VocoderConfig
    codec: PseudoCodecConfig
    schedule: Schedule
    weights: LossWeights


def train_vocoder(setup: AblationSetup, conditioned: bool, seed: int) -> Generator:
    vcfg = replace(setup.vocoder, conditioning_enabled=conditioned)
    weights = setup.weights if conditioned else replace(setup.weights, lambda_ctc=0.0)
    gen, bank = new_models(vcfg, seed)
    trainer = Trainer(gen, bank, setup.recognizer, replace(setup.schedule, seed=seed), weights, vcfg.sample_rate)
    trainer.run(setup.train_triplets)
    gen.eval()
    return gen


def evaluate_generator(setup: AblationSetup, gen: Generator) -> EvalReport:
    anon = VocoderAnonymiser(gen, setup.recognizer, setup.codec)
    return evaluate_corpus(setup.eval_utterances, anon, setup.recognizer)


def run_ablation(setup: AblationSetup, seeds: Sequence[int], ratio: float = 0.7) -> List[dict]:
    """Conditioned vs. unconditioned (no conditioning, no CTC loss) per seed."""
    results = []
    for seed in seeds:
        t0 = time.time()
        wer = {}
        for conditioned in (True, False):
            gen = train_vocoder(setup, conditioned, seed)
            wer[conditioned] = evaluate_generator(setup, gen).wer
        results.append(
            {
                "seed": seed,
                "wer_conditioned": wer[True],
                "wer_unconditioned": wer[False],
                "passed": wer[True] <= ratio * wer[False],
                "seconds": time.time() - t0,
            }
        )
        log.info("ablation seed %d: %s", seed, results[-1])
    return results


def toy_setup(
    corpus_size: int = 500,
    eval_size: int = 100,
    corpus_seed: int = 0,
    asr_steps: int = 800,
    schedule: Optional[Schedule] = None,
    vocoder: Optional[VocoderConfig] = None,
    codec: Optional[PseudoCodecConfig] = None,
    weights: Optional[LossWeights] = None,
) -> AblationSetup:
    """Synthesise a corpus, train the recogniser and build triplets in memory."""
    vocoder = vocoder or VocoderConfig()
    codec = codec or PseudoCodecConfig(
        codebooks=vocoder.codebooks, codebook_size=vocoder.codebook_size,
        hop_length=vocoder.hop_length, sample_rate=vocoder.sample_rate,
    )
    train_utts = make_corpus(corpus_size, corpus_seed, vocoder.sample_rate, prefix="train")
    eval_utts = make_corpus(eval_size, corpus_seed + 1000003, vocoder.sample_rate, prefix="eval")
    recog = CTCRecognizer(RecognizerConfig(sample_rate=vocoder.sample_rate, hop_length=vocoder.hop_length))
    train_recognizer(recog, train_utts, steps=asr_steps, seed=corpus_seed)
    triplets, failures = build_triplets(train_utts, recog, codec)
    if failures:
        raise RuntimeError(f"triplet construction failed for {failures}")
    return AblationSetup(triplets, eval_utts, recog, vocoder, codec, schedule or Schedule(), weights or LossWeights())


def ablate(cfg: RunConfig) -> Tuple[List[dict], Path]:
    seed_everything(cfg.seed, cfg.deterministic)
    p = paths(cfg)
    setup = AblationSetup(
        get_triplets(cfg),
        read_manifest(_require(cfg.eval_manifest_path, "charvoc prepare-data")),
        load_recognizer(p["asr"]),
        cfg.vocoder_config(conditioning=True),
        cfg.codec_config(),
        cfg.schedule(),
        cfg.loss_weights(),
    )
    results = run_ablation(setup, cfg.seeds)
    p["reports"].mkdir(parents=True, exist_ok=True)
    out = p["reports"] / "ablation.json"
    out.write_text(json.dumps(results, indent=2))
    with open(p["reports"] / "ablation.csv", "w") as f:
        f.write("seed,wer_conditioned,wer_unconditioned,passed\n")
        for r in results:
            f.write(f"{r['seed']},{r['wer_conditioned']!r},{r['wer_unconditioned']!r},{int(r['passed'])}\n")
    plotting.plot_ablation(results, p["reports"] / "ablation.png")
    return results, out
