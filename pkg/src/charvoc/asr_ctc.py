"""Small CTC character recogniser operating on raw waveforms.

The network downsamples by exactly ``hop_length`` so that a waveform of
``T * hop_length`` samples yields ``T`` posterior frames, aligned with the
vocoder's frame grid.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from charvoc.symbols import DEFAULT_VOCAB, NUM_SYMBOLS, CharVocabulary, decode_frames


class SampleRateMismatch(ValueError):
    pass


class EmptyAudio(ValueError):
    pass


@dataclass
class RecognizerConfig:
    sample_rate: int = 8000
    hop_length: int = 64
    filters: int = 64
    filter_length: int = 128
    hidden: int = 96
    context_layers: int = 2

    def __post_init__(self):
        if self.hop_length % 4:
            raise ValueError("hop_length must be a multiple of 4")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RecognizerConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class CTCRecognizer(nn.Module):
    """Learned filterbank -> log energy -> strided conv -> context convs -> 31 logits."""

    def __init__(self, config: Optional[RecognizerConfig] = None):
        super().__init__()
        self.config = cfg = config or RecognizerConfig()
        stride = cfg.hop_length // 4
        self.frontend = nn.Conv1d(
            1, cfg.filters, cfg.filter_length, stride=stride, padding=(cfg.filter_length - stride) // 2
        )
        self.down = nn.Conv1d(cfg.filters, cfg.hidden, 4, stride=4)
        self.context = nn.ModuleList(
            nn.Conv1d(cfg.hidden, cfg.hidden, 3, padding=1) for _ in range(cfg.context_layers)
        )
        self.classifier = nn.Linear(cfg.hidden, NUM_SYMBOLS)

    def num_frames(self, num_samples: int) -> int:
        return num_samples // self.config.hop_length

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        """(B, L) waveforms -> (B, L // hop, 31) log-probabilities."""
        h = self.frontend(u[:, None, :])
        h = torch.log1p(h.square())
        h = F.gelu(self.down(h))
        for conv in self.context:
            h = h + F.gelu(conv(h))
        return F.log_softmax(self.classifier(h.transpose(1, 2)), dim=-1)


def frame_posteriors(
    u: torch.Tensor, model: CTCRecognizer, sample_rate: Optional[int] = None
) -> torch.Tensor:
    """Frame-level log-posteriors for one waveform (L,) or a batch (B, L).

    Gradients flow back to ``u``; the model's own parameters are untouched.

    Raises:
        SampleRateMismatch: if ``sample_rate`` differs from the model's.
        EmptyAudio: if the input is shorter than one frame.
    """
    if sample_rate is not None and sample_rate != model.config.sample_rate:
        raise SampleRateMismatch(f"model expects {model.config.sample_rate} Hz, got {sample_rate}")
    u = torch.as_tensor(u)
    if not u.is_floating_point():
        u = u.float()
    single = u.dim() == 1
    if single:
        u = u[None]
    if u.shape[-1] < model.config.hop_length:
        raise EmptyAudio("waveform shorter than one recogniser frame")
    lp = model(u.to(next(model.parameters()).dtype))
    return lp[0] if single else lp


def greedy_sequence(log_probs) -> np.ndarray:
    """Per-frame argmax; ties resolve to the lowest index."""
    lp = torch.as_tensor(log_probs).detach()
    # torch.argmax does not document tie behaviour, so resolve explicitly
    top = lp.max(dim=-1, keepdim=True).values
    hits = lp == top
    idx = torch.arange(lp.shape[-1]).expand_as(lp)
    return torch.where(hits, idx, lp.shape[-1]).min(dim=-1).values.numpy()


def transcribe(
    u, model: CTCRecognizer, vocab: CharVocabulary = DEFAULT_VOCAB, sample_rate: Optional[int] = None
) -> str:
    with torch.no_grad():
        lp = frame_posteriors(u, model, sample_rate)
    return decode_frames(greedy_sequence(lp), vocab)


def freeze(model: nn.Module) -> nn.Module:
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model
