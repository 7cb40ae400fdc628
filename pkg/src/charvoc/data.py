"""Toy speech corpus, pseudo-codec, manifests and training triplets."""

from __future__ import annotations

import json
import logging
import wave
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from charvoc import dsp
from charvoc.asr_ctc import CTCRecognizer, frame_posteriors, greedy_sequence
from charvoc.symbols import UnknownSymbol, resize_nearest

log = logging.getLogger(__name__)

TOY_CHARS = " abcdefghijklmnopqrstuvwxyz"
_LOW_TONES = np.linspace(300.0, 1260.0, 9)
_HIGH_TONES = np.array([1800.0, 2400.0, 3000.0])


class AudioTooShort(ValueError):
    pass


def tone_pair(char: str) -> Tuple[float, float]:
    """Fixed (low, high) frequency pair for a toy-corpus character."""
    i = TOY_CHARS.find(char)
    if i < 0 or len(char) != 1:
        raise KeyError(char)
    return float(_LOW_TONES[i % 9]), float(_HIGH_TONES[i // 9])


def synth_utterance(
    text: str,
    seed: int = 0,
    rate: int = 8000,
    chunk_ms: float = 80.0,
    snr_db: float = 20.0,
    amplitude: float = 0.3,
) -> Tuple[np.ndarray, str]:
    """Render ``text`` as a sequence of two-tone chunks plus white noise.

    Each character occupies ``chunk_ms`` milliseconds with a Hann envelope,
    so chunk edges are quiet and repeated letters stay separable.

    Raises:
        UnknownSymbol: for characters outside letters and space.
    """
    text = text.lower()
    for pos, ch in enumerate(text):
        if ch not in TOY_CHARS:
            raise UnknownSymbol(ch, pos)
    rng = np.random.default_rng(seed)
    n = int(round(rate * chunk_ms / 1000.0))
    t = np.arange(n) / rate
    env = np.hanning(n + 2)[1:-1]
    chunks = []
    for ch in text:
        lo, hi = tone_pair(ch)
        amp = amplitude * rng.uniform(0.7, 1.0)
        phase = rng.uniform(0, 2 * np.pi, size=2)
        chunks.append(
            amp * env * (np.sin(2 * np.pi * lo * t + phase[0]) + 0.6 * np.sin(2 * np.pi * hi * t + phase[1]))
        )
    clean = np.concatenate(chunks) if chunks else np.zeros(0)
    power = float(np.mean(clean**2)) if clean.size else 0.0
    noise = rng.standard_normal(clean.size) * np.sqrt(power / 10 ** (snr_db / 10.0))
    return (clean + noise).astype(np.float32), text


def random_text(rng: np.random.Generator, min_words=1, max_words=3, min_len=2, max_len=4) -> str:
    letters = TOY_CHARS[1:]
    words = [
        "".join(rng.choice(list(letters), size=int(rng.integers(min_len, max_len + 1))))
        for _ in range(int(rng.integers(min_words, max_words + 1)))
    ]
    return " ".join(words)


# --------------------------------------------------------------------------
# pseudo-codec


@dataclass
class PseudoCodecConfig:
    codebooks: int = 2
    codebook_size: int = 64
    hop_length: int = 64
    sample_rate: int = 8000
    seed: int = 1234
    n_mels: int = 16
    dim: int = 4

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PseudoCodecConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def _codec_tables(cfg: PseudoCodecConfig):
    rng = np.random.default_rng(cfg.seed)
    tables = []
    scale = 1.0
    for _ in range(cfg.codebooks):
        proj = rng.standard_normal((cfg.n_mels, cfg.dim)) / np.sqrt(cfg.n_mels)
        book = rng.standard_normal((cfg.codebook_size, cfg.dim)) * scale
        tables.append((proj, book, np.linalg.pinv(proj)))
        scale *= 0.5
    return tables


def codec_features(u: np.ndarray, cfg: PseudoCodecConfig) -> np.ndarray:
    """Standardised per-frame log-mel features, shape (T, n_mels)."""
    hop = cfg.hop_length
    frames = len(u) // hop
    x = torch.as_tensor(np.asarray(u[: frames * hop], dtype=np.float64))
    feats = dsp.log_mel(x, cfg.sample_rate, n_fft=2 * hop, hop=hop, n_mels=cfg.n_mels)
    return ((feats.numpy().T + 6.0) / 3.0)


def pseudo_codec_encode(u, cfg: PseudoCodecConfig) -> np.ndarray:
    """Deterministic (Q, T) token grid for a waveform, T = len(u) // hop.

    Per-frame log-mel features are projected with seeded random matrices
    and quantised stage by stage against seeded codebooks, each stage
    coding the residual left by the previous one.

    Raises:
        AudioTooShort: if the waveform holds less than one frame.
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    if len(u) < cfg.hop_length:
        raise AudioTooShort(f"need at least {cfg.hop_length} samples, got {len(u)}")
    residual = codec_features(u, cfg)
    tokens = np.empty((cfg.codebooks, residual.shape[0]), dtype=np.int64)
    for q, (proj, book, back) in enumerate(_codec_tables(cfg)):
        z = residual @ proj
        d = ((z[:, None, :] - book[None, :, :]) ** 2).sum(-1)
        idx = d.argmin(axis=1)
        tokens[q] = idx
        residual = residual - book[idx] @ back
    return tokens


# --------------------------------------------------------------------------
# manifests and audio


def write_wav(path, samples, sample_rate: int) -> None:
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(int(sample_rate))
        f.writeframes(pcm.tobytes())


def read_wav(path) -> Tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit mono PCM")
        rate = f.getframerate()
        pcm = np.frombuffer(f.readframes(f.getnframes()), dtype="<i2")
    return (pcm.astype(np.float32) / 32767.0), rate


@dataclass
class Utterance:
    id: str
    text: str
    audio: np.ndarray
    sample_rate: int

    def load(self) -> "Utterance":
        return self


@dataclass
class ManifestEntry:
    id: str
    audio: str
    text: str
    duration: float
    root: Optional[Path] = None

    @property
    def path(self) -> Path:
        p = Path(self.audio)
        return p if p.is_absolute() or self.root is None else self.root / p

    def load(self) -> Utterance:
        audio, rate = read_wav(self.path)
        return Utterance(self.id, self.text, audio, rate)

    def to_json(self) -> str:
        return json.dumps(
            {"id": self.id, "audio": self.audio, "text": self.text, "duration": self.duration}
        )


def read_manifest(path) -> List[ManifestEntry]:
    path = Path(path)
    entries, seen = [], set()
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        d = json.loads(line)
        missing = {"id", "audio", "text", "duration"} - set(d)
        if missing:
            raise ValueError(f"{path}:{lineno}: missing keys {sorted(missing)}")
        if d["id"] in seen:
            raise ValueError(f"{path}:{lineno}: duplicate id {d['id']!r}")
        seen.add(d["id"])
        entries.append(
            ManifestEntry(str(d["id"]), d["audio"], d["text"], float(d["duration"]), path.parent)
        )
    return entries


def write_manifest(path, entries: Iterable[ManifestEntry]) -> None:
    Path(path).write_text("".join(e.to_json() + "\n" for e in entries))


def make_corpus(
    n: int, seed: int = 0, rate: int = 8000, chunk_ms: float = 80.0, snr_db: float = 20.0, prefix="utt"
) -> List[Utterance]:
    """Generate ``n`` synthetic utterances with random short words."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        text = random_text(rng)
        audio, _ = synth_utterance(text, seed=int(rng.integers(2**31)), rate=rate, chunk_ms=chunk_ms, snr_db=snr_db)
        out.append(Utterance(f"{prefix}{i:05d}", text, audio, rate))
    return out


def write_corpus(utterances: Sequence[Utterance], out_dir, manifest_name: str) -> Path:
    """Write WAVs under ``out_dir/audio`` and a JSONL manifest; returns its path."""
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    entries = []
    for utt in utterances:
        rel = f"audio/{utt.id}.wav"
        write_wav(out_dir / rel, utt.audio, utt.sample_rate)
        entries.append(ManifestEntry(utt.id, rel, utt.text, len(utt.audio) / utt.sample_rate))
    path = out_dir / manifest_name
    write_manifest(path, entries)
    return path


# --------------------------------------------------------------------------
# triplets


@dataclass
class TrainingTriplet:
    id: str
    u: np.ndarray
    c: np.ndarray
    a_bar: np.ndarray
    text: str = ""

    @property
    def frames(self) -> int:
        return self.a_bar.shape[1]

    def save(self, path) -> None:
        np.savez(path, id=self.id, u=self.u, c=self.c, a_bar=self.a_bar, text=self.text)

    @classmethod
    def load(cls, path) -> "TrainingTriplet":
        with np.load(path, allow_pickle=False) as z:
            return cls(str(z["id"]), z["u"], z["c"], z["a_bar"], str(z["text"]))


def recognise_frames(u: np.ndarray, recogniser: CTCRecognizer, frames: int) -> np.ndarray:
    with torch.no_grad():
        lp = frame_posteriors(torch.as_tensor(u, dtype=torch.float32), recogniser)
    return resize_nearest(greedy_sequence(lp), frames)


def make_triplet(utt: Utterance, recogniser: CTCRecognizer, codec_cfg: PseudoCodecConfig) -> TrainingTriplet:
    if utt.sample_rate != codec_cfg.sample_rate:
        raise ValueError(f"{utt.id}: sample rate {utt.sample_rate} != {codec_cfg.sample_rate}")
    hop = codec_cfg.hop_length
    frames = len(utt.audio) // hop
    if frames < 1:
        raise AudioTooShort(f"{utt.id}: shorter than one frame")
    u = np.asarray(utt.audio[: frames * hop], dtype=np.float32)
    c = recognise_frames(u, recogniser, frames)
    a_bar = pseudo_codec_encode(u, codec_cfg)
    return TrainingTriplet(utt.id, u, c, a_bar, utt.text)


def build_triplets(entries, recogniser: CTCRecognizer, codec_cfg: PseudoCodecConfig):
    """Triplets (u, c, a_bar) in manifest order.

    Returns:
        (triplets, failures) where failures lists (id, error message) for
        entries that could not be processed.
    """
    triplets, failures = [], []
    for entry in entries:
        try:
            triplets.append(make_triplet(entry.load(), recogniser, codec_cfg))
        except Exception as exc:  # noqa: BLE001 - reported and skipped
            log.warning("skipping %s: %s", entry.id, exc)
            failures.append((entry.id, str(exc)))
    return triplets, failures


def save_triplet_cache(triplets: Sequence[TrainingTriplet], cache_dir) -> None:
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    order = []
    for t in triplets:
        t.save(cache_dir / f"{t.id}.npz")
        order.append(t.id)
    (cache_dir / "index.txt").write_text("\n".join(order) + "\n")


def load_triplet_cache(cache_dir) -> List[TrainingTriplet]:
    cache_dir = Path(cache_dir)
    ids = [i for i in (cache_dir / "index.txt").read_text().splitlines() if i]
    return [TrainingTriplet.load(cache_dir / f"{i}.npz") for i in ids]
