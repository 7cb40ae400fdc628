"""Character-conditioned ConvNeXt vocoder with a complex-STFT head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from charvoc import dsp
from charvoc.conditioning import CharConditioning, ShapeMismatch


class TokenOutOfRange(IndexError):
    pass


class MissingConditioning(RuntimeError):
    pass


@dataclass
class VocoderConfig:
    channels: int = 128
    blocks: int = 4
    codebooks: int = 2
    codebook_size: int = 64
    n_fft: int = 256
    hop_length: int = 64
    sample_rate: int = 8000
    conditioning_enabled: bool = True
    # False places conditioning only between blocks (K - 1 layers)
    condition_before_head: bool = True
    kernel_size: int = 7
    expansion: int = 3
    max_magnitude: float = 1e2

    def __post_init__(self):
        if self.channels < 1 or self.blocks < 1 or self.codebooks < 1:
            raise ValueError("channels, blocks and codebooks must be >= 1")
        if self.hop_length > self.n_fft:
            raise ValueError("hop_length must not exceed n_fft")

    @property
    def num_conditioning_layers(self) -> int:
        if not self.conditioning_enabled:
            return 0
        return self.blocks if self.condition_before_head else self.blocks - 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VocoderConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class ConvNeXtBlock(nn.Module):
    """Depthwise conv -> LayerNorm -> 1x1 expand -> GELU -> 1x1 project, residual."""

    def __init__(self, channels: int, kernel_size: int = 7, expansion: int = 3):
        super().__init__()
        self.dwconv = nn.Conv1d(
            channels, channels, kernel_size, padding=kernel_size // 2, groups=channels
        )
        self.norm = nn.LayerNorm(channels, eps=1e-6)
        self.pwconv1 = nn.Linear(channels, expansion * channels)
        self.pwconv2 = nn.Linear(expansion * channels, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.dwconv(x).transpose(1, 2)
        h = self.pwconv2(F.gelu(self.pwconv1(self.norm(h))))
        return x + h.transpose(1, 2)


class ISTFTHead(nn.Module):
    """Per-frame linear map to log-magnitude and phase, then inverse STFT."""

    def __init__(self, channels: int, n_fft: int, hop_length: int, max_magnitude: float = 1e2):
        super().__init__()
        self.n_fft = n_fft
        self.hop_length = hop_length
        self.max_magnitude = max_magnitude
        self.out = nn.Linear(channels, n_fft + 2)
        nn.init.zeros_(self.out.bias)

    def spectrum(self, x: torch.Tensor) -> torch.Tensor:
        h = self.out(x.transpose(1, 2)).transpose(1, 2)
        log_mag, phase = h.chunk(2, dim=1)
        mag = torch.exp(log_mag).clamp(max=self.max_magnitude)
        return torch.complex(mag * torch.cos(phase), mag * torch.sin(phase))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return dsp.istft(self.spectrum(x), self.n_fft, self.hop_length)


class Generator(nn.Module):
    """Token embedding, K ConvNeXt blocks each followed by character
    conditioning, and an iSTFT head.

    Inputs are batched: ``tokens`` (B, Q, T) and ``chars`` (B, T).
    The output waveform has shape (B, T * hop_length).
    """

    def __init__(self, config: Optional[VocoderConfig] = None):
        super().__init__()
        self.config = config = config or VocoderConfig()
        self.token_embed = nn.ModuleList(
            nn.Embedding(config.codebook_size, config.channels) for _ in range(config.codebooks)
        )
        self.blocks = nn.ModuleList(
            ConvNeXtBlock(config.channels, config.kernel_size, config.expansion)
            for _ in range(config.blocks)
        )
        self.conditioning = nn.ModuleList(
            CharConditioning(config.channels, k) for k in range(config.num_conditioning_layers)
        )
        self.head = ISTFTHead(config.channels, config.n_fft, config.hop_length, config.max_magnitude)
        self.apply(_init_weights)

    def embed_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        """Sum of per-codebook embeddings, (B, Q, T) -> (B, D, T)."""
        cfg = self.config
        tokens = torch.as_tensor(tokens, dtype=torch.long)
        if tokens.dim() != 3 or tokens.shape[1] != cfg.codebooks:
            raise ShapeMismatch(f"expected tokens (B, {cfg.codebooks}, T), got {tuple(tokens.shape)}")
        if tokens.numel() and (int(tokens.min()) < 0 or int(tokens.max()) >= cfg.codebook_size):
            raise TokenOutOfRange(f"token index outside [0, {cfg.codebook_size})")
        x = sum(emb(tokens[:, q]) for q, emb in enumerate(self.token_embed))
        return x.transpose(1, 2)

    def features(
        self, tokens: torch.Tensor, chars: Optional[torch.Tensor] = None, condition: bool = True
    ) -> torch.Tensor:
        x = self.embed_tokens(tokens)
        shape = x.shape
        use_cond = condition and self.config.conditioning_enabled
        if use_cond:
            if chars is None:
                raise MissingConditioning("character sequence required when conditioning is on")
            if len(self.conditioning) != self.config.num_conditioning_layers:
                raise MissingConditioning("model has no conditioning dictionaries")
            chars = torch.as_tensor(chars, dtype=torch.long)
            if chars.shape != (shape[0], shape[2]):
                raise ShapeMismatch(
                    f"chars must be (B, T) = {(shape[0], shape[2])}, got {tuple(chars.shape)}"
                )
        for k, block in enumerate(self.blocks):
            x = block(x)
            if use_cond and k < len(self.conditioning):
                x = self.conditioning[k](x, chars)
            assert x.shape == shape
        return x

    def forward(
        self, tokens: torch.Tensor, chars: Optional[torch.Tensor] = None, condition: bool = True
    ) -> torch.Tensor:
        return self.head(self.features(tokens, chars, condition))

    def conditioning_parameters(self):
        return [p for layer in self.conditioning for p in layer.parameters()]


def _init_weights(m: nn.Module) -> None:
    if isinstance(m, (nn.Conv1d, nn.Linear)):
        nn.init.trunc_normal_(m.weight, std=0.02)
        nn.init.zeros_(m.bias)
    elif isinstance(m, nn.Embedding):
        nn.init.normal_(m.weight, std=1.0)


@torch.no_grad()
def synthesize(
    generator: Generator, tokens, chars=None, condition: bool = True
) -> torch.Tensor:
    """Unbatched convenience wrapper: (Q, T) tokens and (T,) chars -> (T * hop,)."""
    tokens = torch.as_tensor(tokens, dtype=torch.long)[None]
    if chars is not None:
        chars = torch.as_tensor(chars, dtype=torch.long)[None]
    return generator(tokens, chars, condition)[0]
