"""Flat ``key = value`` run configuration.

Lines starting with ``#`` and blank lines are ignored. Every key below is
documented with its type and default; keys with no default are required.
Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from charvoc.asr_ctc import RecognizerConfig
from charvoc.data import PseudoCodecConfig
from charvoc.losses import LossWeights
from charvoc.training import Schedule
from charvoc.vocoder import VocoderConfig


class ConfigError(ValueError):
    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class Key:
    name: str
    type: type
    default: Any
    help: str
    group: str


_REQUIRED = object()

KEYS = [
    Key("work_dir", str, _REQUIRED, "directory for corpus, checkpoints and reports", "paths"),
    Key("train_manifest", str, "", "training manifest (default: <work_dir>/data/manifest_train.jsonl)", "paths"),
    Key("eval_manifest", str, "", "evaluation manifest (default: <work_dir>/data/manifest_eval.jsonl)", "paths"),
    Key("seed", int, 0, "global random seed", "run"),
    Key("deterministic", bool, True, "force deterministic kernels and ordered data", "run"),
    Key("sample_rate", int, 8000, "audio sample rate in Hz", "vocoder"),
    Key("n_fft", int, 256, "iSTFT size of the vocoder head", "vocoder"),
    Key("hop_length", int, 64, "samples per frame (vocoder, codec and recogniser)", "vocoder"),
    Key("channels", int, 128, "vocoder channel dimension D", "vocoder"),
    Key("blocks", int, 4, "number of ConvNeXt blocks K", "vocoder"),
    Key("codebooks", int, 2, "acoustic token codebooks Q", "vocoder"),
    Key("codebook_size", int, 64, "entries per codebook", "vocoder"),
    Key("conditioning", bool, True, "enable character conditioning layers", "vocoder"),
    Key("condition_before_head", bool, True, "condition after the last block too (K layers, else K-1)", "vocoder"),
    Key("codec_seed", int, 1234, "seed of the pseudo-codec projections and codebooks", "codec"),
    Key("codec_dim", int, 4, "pseudo-codec projection dimension", "codec"),
    Key("codec_mels", int, 16, "pseudo-codec mel bands", "codec"),
    Key("lambda_mel", float, 1.0, "weight of the mel loss", "loss"),
    Key("lambda_gan", float, 0.5, "weight of the adversarial loss", "loss"),
    Key("lambda_fm", float, 1.0, "weight of the feature-matching loss", "loss"),
    Key("lambda_ctc", float, 1.5, "weight of the CTC content loss", "loss"),
    Key("warmup_steps", int, 200, "discriminator warm-up steps (full scale: 6000)", "schedule"),
    Key("warmup_lr", float, 1e-3, "initial warm-up learning rate", "schedule"),
    Key("train_steps", int, 2000, "joint training steps (full scale: 300000)", "schedule"),
    Key("lr", float, 5e-4, "initial joint-training learning rate", "schedule"),
    Key("weight_decay", float, 1e-2, "AdamW decoupled weight decay", "schedule"),
    Key("batch_size", int, 8, "training batch size", "schedule"),
    Key("grad_clip", float, 10.0, "global gradient-norm clip (0 disables)", "schedule"),
    Key("segment_frames", int, 32, "training crop length in frames", "schedule"),
    Key("checkpoint_every", int, 500, "steps between periodic checkpoints (0 disables)", "schedule"),
    Key("asr_steps", int, 800, "recogniser training steps", "asr"),
    Key("asr_lr", float, 3e-3, "recogniser learning rate", "asr"),
    Key("asr_batch_size", int, 16, "recogniser batch size", "asr"),
    Key("corpus_size", int, 500, "synthetic training utterances", "corpus"),
    Key("eval_size", int, 100, "synthetic held-out utterances", "corpus"),
    Key("corpus_seed", int, 0, "seed of the synthetic corpus", "corpus"),
    Key("chunk_ms", float, 80.0, "duration of one synthetic character", "corpus"),
    Key("snr_db", float, 20.0, "synthetic corpus signal-to-noise ratio", "corpus"),
    Key("ablation_seeds", str, "0,1,2", "comma-separated seeds for the ablation", "ablation"),
]
KEYS_BY_NAME = {k.name: k for k in KEYS}

# config groups consumed by each subcommand
COMMAND_GROUPS = {
    "prepare-data": ("paths", "run", "vocoder", "codec", "corpus"),
    "train-asr": ("paths", "run", "vocoder", "asr"),
    "warmup": ("paths", "run", "vocoder", "codec", "schedule"),
    "train": ("paths", "run", "vocoder", "codec", "loss", "schedule"),
    "synth": ("paths", "run", "vocoder", "codec"),
    "eval": ("paths", "run", "vocoder", "codec"),
    "ablate": ("paths", "run", "vocoder", "codec", "loss", "schedule", "ablation"),
}


def keys_for(command: str) -> Iterable[Key]:
    groups = COMMAND_GROUPS[command]
    return [k for k in KEYS if k.group in groups]


def describe_keys(command: str) -> str:
    lines = ["config keys:"]
    for k in keys_for(command):
        default = "required" if k.default is _REQUIRED else f"default {k.default}"
        lines.append(f"  {k.name} ({k.type.__name__}, {default}): {k.help}")
    return "\n".join(lines)


def _convert(key: Key, raw: str):
    try:
        if key.type is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return key.type(raw.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key.name}: {raw!r} (expected {key.type.__name__})", key.name) from None


class RunConfig:
    """Validated configuration values with typed accessors."""

    def __init__(self, values: Dict[str, Any]):
        self.values = values

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        raw: Dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            name, value = (s.strip() for s in line.split("=", 1))
            if name not in KEYS_BY_NAME:
                raise ConfigError(f"unknown config key {name!r}", name)
            raw[name] = value
        return cls.from_mapping(raw)

    @classmethod
    def from_mapping(cls, raw: Dict[str, Any]) -> "RunConfig":
        values = {}
        for name in raw:
            if name not in KEYS_BY_NAME:
                raise ConfigError(f"unknown config key {name!r}", name)
        for key in KEYS:
            if key.name in raw:
                v = raw[key.name]
                values[key.name] = _convert(key, v) if isinstance(v, str) else key.type(v)
            elif key.default is _REQUIRED:
                raise ConfigError(f"missing required config key {key.name!r}", key.name)
            else:
                values[key.name] = key.default
        return cls(values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.parse(Path(path).read_text())

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def to_text(self) -> str:
        return "".join(f"{k.name} = {self.values[k.name]}\n" for k in KEYS)

    # derived settings

    @property
    def root(self) -> Path:
        return Path(self.work_dir)

    @property
    def train_manifest_path(self) -> Path:
        return Path(self.train_manifest) if self.train_manifest else self.root / "data" / "manifest_train.jsonl"

    @property
    def eval_manifest_path(self) -> Path:
        return Path(self.eval_manifest) if self.eval_manifest else self.root / "data" / "manifest_eval.jsonl"

    def vocoder_config(self, conditioning: Optional[bool] = None) -> VocoderConfig:
        return VocoderConfig(
            channels=self.channels, blocks=self.blocks, codebooks=self.codebooks,
            codebook_size=self.codebook_size, n_fft=self.n_fft, hop_length=self.hop_length,
            sample_rate=self.sample_rate,
            conditioning_enabled=self.conditioning if conditioning is None else conditioning,
            condition_before_head=self.condition_before_head,
        )

    def codec_config(self) -> PseudoCodecConfig:
        return PseudoCodecConfig(
            codebooks=self.codebooks, codebook_size=self.codebook_size, hop_length=self.hop_length,
            sample_rate=self.sample_rate, seed=self.codec_seed, n_mels=self.codec_mels, dim=self.codec_dim,
        )

    def recognizer_config(self) -> RecognizerConfig:
        return RecognizerConfig(sample_rate=self.sample_rate, hop_length=self.hop_length)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_mel, self.lambda_gan, self.lambda_fm, self.lambda_ctc)

    def schedule(self, warmup: bool = False, seed: Optional[int] = None) -> Schedule:
        return Schedule(
            total_steps=self.warmup_steps if warmup else self.train_steps,
            initial_lr=self.warmup_lr if warmup else self.lr,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            seed=self.seed if seed is None else seed,
            grad_clip=self.grad_clip or None,
            segment_frames=self.segment_frames,
        )

    @property
    def seeds(self):
        return [int(s) for s in self.ablation_seeds.split(",") if s.strip()]
