"""Command-line entry point: ``charvoc <subcommand> --config run.cfg``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from charvoc import pipeline, plotting
from charvoc.config import COMMAND_GROUPS, ConfigError, RunConfig, describe_keys
from charvoc.data import Utterance, read_manifest, read_wav, write_wav
from charvoc.evaluation import VocoderAnonymiser, evaluate_corpus

log = logging.getLogger("charvoc")

EXIT_CONFIG = 1
EXIT_RUNTIME = 2

DESCRIPTIONS = {
    "prepare-data": "synthesise the toy corpus and manifests; build the triplet cache once a recogniser exists",
    "train-asr": "train the CTC recogniser on the training manifest",
    "warmup": "train the discriminators against a fixed, freshly initialised generator",
    "train": "joint adversarial training of the conditioned vocoder",
    "synth": "resynthesise WAV files or a manifest through the vocoder",
    "eval": "transcribe resynthesised audio and report corpus WER",
    "ablate": "train conditioned and unconditioned vocoders per seed and compare WER",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="charvoc", description="character-conditioned vocoder toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMAND_GROUPS:
        p = sub.add_parser(
            name,
            help=DESCRIPTIONS[name],
            description=DESCRIPTIONS[name],
            epilog=describe_keys(name),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        p.add_argument("--config", required=True, help="flat key = value config file")
        if name == "train":
            p.add_argument("--resume", action="store_true", help="continue from <work_dir>/vocoder.ckpt")
            p.add_argument("--skip-warmup", action="store_true", help="start without a warm-up checkpoint")
        if name in ("synth", "eval"):
            p.add_argument("--checkpoint", help="vocoder checkpoint (default <work_dir>/vocoder.ckpt)")
            p.add_argument("--no-conditioning", action="store_true", help="bypass the character conditioning layers")
        if name == "synth":
            p.add_argument("--input", required=True, help="a WAV file or a JSONL manifest")
            p.add_argument("--output", required=True, help="output directory for WAVs")
        if name == "eval":
            p.add_argument("--manifest", help="manifest to evaluate (default: eval manifest)")
    return parser


def _error(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)


def _anonymiser(cfg: RunConfig, args):
    p = pipeline.paths(cfg)
    gen, _ = pipeline.load_generator(args.checkpoint or pipeline._require(p["vocoder"], "charvoc train"))
    recog = pipeline.load_recognizer(pipeline._require(p["asr"], "charvoc train-asr"))
    return VocoderAnonymiser(gen, recog, cfg.codec_config(), condition=not args.no_conditioning), recog


def cmd_prepare_data(cfg, args) -> int:
    summary = pipeline.prepare_data(cfg)
    print(json.dumps(summary, indent=2))
    return EXIT_RUNTIME if summary["failures"] else 0


def cmd_train_asr(cfg, args) -> int:
    print(pipeline.train_asr(cfg))
    return 0


def cmd_warmup(cfg, args) -> int:
    path, rows = pipeline.warmup(cfg)
    print(f"{path} (final l_disc {rows[-1]['l_disc']:.4f})")
    return 0


def cmd_train(cfg, args) -> int:
    path, metrics = pipeline.train(cfg, resume=args.resume, skip_warmup=args.skip_warmup)
    print(f"{path} ({len(metrics.rows)} steps logged to {metrics.path})")
    return 0


def cmd_synth(cfg, args) -> int:
    anon, _ = _anonymiser(cfg, args)
    src = Path(args.input)
    if src.suffix == ".jsonl":
        entries = read_manifest(src)
    else:
        audio, rate = read_wav(src)
        entries = [Utterance(src.stem, "", audio, rate)]
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    failed = 0
    for entry in entries:
        try:
            utt = entry.load()
            if utt.sample_rate != cfg.sample_rate:
                raise ValueError(f"sample rate {utt.sample_rate} != {cfg.sample_rate}")
            write_wav(out_dir / f"{utt.id}.wav", anon(utt), cfg.sample_rate)
        except Exception as exc:  # noqa: BLE001 - reported per file
            failed += 1
            _error("runtime", str(exc), id=entry.id)
    print(f"wrote {len(entries) - failed} file(s) to {out_dir}")
    return EXIT_RUNTIME if failed else 0


def cmd_eval(cfg, args) -> int:
    anon, recog = _anonymiser(cfg, args)
    manifest = Path(args.manifest) if args.manifest else cfg.eval_manifest_path
    report = evaluate_corpus(read_manifest(manifest), anon, recog)
    reports = pipeline.paths(cfg)["reports"]
    reports.mkdir(parents=True, exist_ok=True)
    (reports / "eval.json").write_text(report.to_json())
    (reports / "eval.txt").write_text(report.table() + "\n")
    plotting.plot_eval_report(report.rows, reports / "eval.png")
    print(report.table())
    for uid, msg in report.skipped:
        _error("skipped", msg, id=uid)
    return EXIT_RUNTIME if report.skipped else 0


def cmd_ablate(cfg, args) -> int:
    results, path = pipeline.ablate(cfg)
    for r in results:
        print(
            f"seed {r['seed']}: WER conditioned {100 * r['wer_conditioned']:.2f}%  "
            f"unconditioned {100 * r['wer_unconditioned']:.2f}%  {'pass' if r['passed'] else 'fail'}"
        )
    print(path)
    return 0


COMMANDS = {
    "prepare-data": cmd_prepare_data,
    "train-asr": cmd_train_asr,
    "warmup": cmd_warmup,
    "train": cmd_train,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
    except ConfigError as exc:
        _error("config", str(exc), key=exc.key)
        return EXIT_CONFIG
    except OSError as exc:
        _error("config", str(exc))
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        _error("config", str(exc), key=exc.key)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit code
        log.debug("failure", exc_info=True)
        _error("runtime", f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
