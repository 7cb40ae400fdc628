"""WER, EER and UAR calculators and the corpus evaluation runner."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from charvoc.asr_ctc import CTCRecognizer, transcribe
from charvoc.data import PseudoCodecConfig, Utterance, pseudo_codec_encode, recognise_frames
from charvoc.vocoder import Generator

log = logging.getLogger(__name__)


class EmptyReference(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class EmptyClass(ValueError):
    pass


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    """Levenshtein distance with unit substitution/insertion/deletion costs."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def wer(ref_words: Sequence[str], hyp_words: Sequence[str]) -> float:
    if len(ref_words) == 0:
        raise EmptyReference("reference has no words")
    return edit_distance(ref_words, hyp_words) / len(ref_words)


def normalise_words(text: str) -> List[str]:
    return re.sub(r"[^a-z' ]+", " ", text.lower()).split()


@dataclass
class TrialScores:
    genuine: Sequence[float]
    impostor: Sequence[float]

    def __post_init__(self):
        g = np.asarray(self.genuine, dtype=np.float64)
        i = np.asarray(self.impostor, dtype=np.float64)
        if g.size == 0 or i.size == 0:
            raise ValueError("genuine and impostor scores must be non-empty")
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(i))):
            raise ValueError("scores must be finite")
        self.genuine, self.impostor = g, i


def eer(scores: TrialScores) -> float:
    """Equal error rate from a sweep over every observed score.

    At threshold t, FAR is the fraction of impostor scores >= t and FRR the
    fraction of genuine scores < t. The threshold minimising |FAR - FRR|
    (lowest on ties) gives EER = (FAR + FRR) / 2.
    """
    g = np.sort(scores.genuine)
    imp = np.sort(scores.impostor)
    thresholds = np.unique(np.concatenate([g, imp]))
    far = (imp.size - np.searchsorted(imp, thresholds, side="left")) / imp.size
    frr = np.searchsorted(g, thresholds, side="left") / g.size
    best = int(np.argmin(np.abs(far - frr)))  # argmin returns the first, i.e. lowest, threshold
    return float((far[best] + frr[best]) / 2)


def uar(labels: Sequence[Hashable], preds: Sequence[Hashable]) -> float:
    """Unweighted average recall over the classes present in ``labels``."""
    if len(labels) != len(preds):
        raise LengthMismatch(f"{len(labels)} labels vs {len(preds)} predictions")
    if len(labels) == 0:
        raise EmptyClass("no labels")
    labels = list(labels)
    recalls = []
    for cls in dict.fromkeys(labels):
        idx = [i for i, y in enumerate(labels) if y == cls]
        recalls.append(sum(preds[i] == cls for i in idx) / len(idx))
    return float(np.mean(recalls))


# --------------------------------------------------------------------------
# corpus evaluation

Anonymiser = Callable[[Utterance], np.ndarray]
SpeakerScorer = Callable[[List[Utterance], List[np.ndarray]], TrialScores]
EmotionPredictor = Callable[[np.ndarray], Hashable]


class VocoderAnonymiser:
    """Resynthesise an utterance from codec tokens and recognised characters.

    ``token_provider`` maps the (trimmed) waveform to a (Q, T) token grid;
    the default is copy-synthesis through the pseudo-codec. A pseudo-speaker
    token source plugs in here.
    """

    def __init__(
        self,
        generator: Generator,
        recognizer: CTCRecognizer,
        codec_cfg: PseudoCodecConfig,
        condition: bool = True,
        token_provider: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    ):
        self.generator = generator
        self.recognizer = recognizer
        self.codec_cfg = codec_cfg
        self.condition = condition
        self.token_provider = token_provider or (lambda u: pseudo_codec_encode(u, codec_cfg))

    def __call__(self, utt: Utterance) -> np.ndarray:
        hop = self.codec_cfg.hop_length
        frames = len(utt.audio) // hop
        u = np.asarray(utt.audio[: frames * hop], dtype=np.float32)
        tokens = self.token_provider(u)
        use_cond = self.condition and self.generator.config.conditioning_enabled
        chars = recognise_frames(u, self.recognizer, tokens.shape[1]) if use_cond else None
        with torch.no_grad():
            t = torch.as_tensor(tokens, dtype=torch.long)[None]
            c = None if chars is None else torch.as_tensor(chars, dtype=torch.long)[None]
            return self.generator(t, c, condition=use_cond)[0].numpy()


@dataclass
class EvalReport:
    wer: float
    eer: Optional[float] = None
    uar: Optional[float] = None
    rows: List[dict] = field(default_factory=list)
    skipped: List[Tuple[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        lines = [f"{'id':<12} {'errors':>6} {'words':>5}  reference | hypothesis"]
        for r in self.rows:
            lines.append(f"{r['id']:<12} {r['errors']:>6} {r['words']:>5}  {r['ref']} | {r['hyp']}")
        fmt = lambda v: "n/a" if v is None else f"{100 * v:.2f}%"
        lines.append(f"WER {fmt(self.wer)}  EER {fmt(self.eer)}  UAR {fmt(self.uar)}  skipped {len(self.skipped)}")
        return "\n".join(lines)


def evaluate_corpus(
    entries,
    anonymise: Anonymiser,
    recognizer: CTCRecognizer,
    speaker_scorer: Optional[SpeakerScorer] = None,
    emotion: Optional[Tuple[Dict[str, Hashable], EmotionPredictor]] = None,
) -> EvalReport:
    """Anonymise every entry, transcribe it and score the corpus.

    Corpus WER is total word edits over total reference words. EER and UAR
    are filled in only when a speaker scorer or (labels, predictor) pair is
    supplied. Failing entries are logged and listed in ``skipped``.
    """
    rows, skipped, originals, outputs = [], [], [], []
    for entry in entries:
        try:
            utt = entry.load()
            out = anonymise(utt)
            hyp = transcribe(torch.as_tensor(out, dtype=torch.float32), recognizer)
            ref_w, hyp_w = normalise_words(utt.text), normalise_words(hyp)
            if not ref_w:
                raise EmptyReference(f"{utt.id}: empty reference")
        except Exception as exc:  # noqa: BLE001 - reported and skipped
            log.warning("skipping %s: %s", getattr(entry, "id", "?"), exc)
            skipped.append((getattr(entry, "id", "?"), str(exc)))
            continue
        rows.append(
            {"id": utt.id, "ref": " ".join(ref_w), "hyp": " ".join(hyp_w),
             "errors": edit_distance(ref_w, hyp_w), "words": len(ref_w)}
        )
        originals.append(utt)
        outputs.append(out)
    total_words = sum(r["words"] for r in rows)
    corpus_wer = sum(r["errors"] for r in rows) / total_words if total_words else float("nan")
    report = EvalReport(corpus_wer, rows=rows, skipped=skipped)
    if speaker_scorer is not None and rows:
        report.eer = eer(speaker_scorer(originals, outputs))
    if emotion is not None and rows:
        labels_by_id, predict = emotion
        keep = [i for i, u in enumerate(originals) if u.id in labels_by_id]
        report.uar = uar([labels_by_id[originals[i].id] for i in keep], [predict(outputs[i]) for i in keep])
    return report
