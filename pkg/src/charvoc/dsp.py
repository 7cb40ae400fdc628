"""STFT/iSTFT with "same" framing and log-mel features.

Frames are placed every ``hop`` samples with ``(n_fft - hop) // 2`` samples
of padding on each side, so a signal of ``T * hop`` samples has exactly
``T`` frames and the inverse maps ``T`` frames back to ``T * hop`` samples.
"""

from __future__ import annotations

import functools
import math

import numpy as np
import torch
import torch.nn.functional as F


def _pad_amount(n_fft: int, hop: int) -> int:
    if hop > n_fft or (n_fft - hop) % 2:
        raise ValueError(f"need hop <= n_fft and even n_fft - hop, got {n_fft}, {hop}")
    return (n_fft - hop) // 2


def hann(n_fft: int, dtype=torch.float32, device=None) -> torch.Tensor:
    return torch.hann_window(n_fft, periodic=True, dtype=dtype, device=device)


def stft(x: torch.Tensor, n_fft: int, hop: int) -> torch.Tensor:
    """Complex STFT of (..., L) signals -> (..., n_fft // 2 + 1, L // hop)."""
    pad = _pad_amount(n_fft, hop)
    shape = x.shape
    x = x.reshape(-1, shape[-1])
    x = F.pad(x, (pad, pad))
    spec = torch.stft(
        x,
        n_fft,
        hop_length=hop,
        window=hann(n_fft, x.dtype, x.device),
        center=False,
        return_complex=True,
    )
    return spec.reshape(*shape[:-1], *spec.shape[-2:])


def istft(spec: torch.Tensor, n_fft: int, hop: int) -> torch.Tensor:
    """Inverse of :func:`stft`: (B, n_fft // 2 + 1, T) -> (B, T * hop)."""
    pad = _pad_amount(n_fft, hop)
    frames = spec.shape[-1]
    real_dtype = spec.real.dtype
    window = hann(n_fft, real_dtype, spec.device)
    y = torch.fft.irfft(spec, n_fft, dim=-2, norm="backward")
    y = y * window[None, :, None]
    out_len = (frames - 1) * hop + n_fft
    y = F.fold(y, output_size=(1, out_len), kernel_size=(1, n_fft), stride=(1, hop))
    y = y[:, 0, 0, pad : out_len - pad]
    env = window.square().expand(1, frames, -1).transpose(1, 2)
    env = F.fold(env, output_size=(1, out_len), kernel_size=(1, n_fft), stride=(1, hop))
    env = env[0, 0, 0, pad : out_len - pad]
    return y / env.clamp(min=1e-11)


def magnitude(spec: torch.Tensor) -> torch.Tensor:
    # clamp keeps the sqrt differentiable at exact zeros
    return (spec.real.square() + spec.imag.square()).clamp(min=1e-12).sqrt()


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=32)
def _mel_fb_np(sample_rate: int, n_fft: int, n_mels: int) -> np.ndarray:
    n_freqs = n_fft // 2 + 1
    freqs = np.linspace(0.0, sample_rate / 2.0, n_freqs)
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    lower, centre, upper = hz_pts[:-2, None], hz_pts[1:-1, None], hz_pts[2:, None]
    up = (freqs[None, :] - lower) / (centre - lower)
    down = (upper - freqs[None, :]) / (upper - centre)
    return np.maximum(0.0, np.minimum(up, down))


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, dtype=torch.float32) -> torch.Tensor:
    """Triangular HTK-scale filterbank, shape (n_mels, n_fft // 2 + 1)."""
    return torch.as_tensor(_mel_fb_np(sample_rate, n_fft, n_mels), dtype=dtype)


def log_mel(
    x: torch.Tensor,
    sample_rate: int,
    n_fft: int = 256,
    hop: int = 64,
    n_mels: int = 40,
    floor: float = 1e-5,
) -> torch.Tensor:
    """Log-mel magnitude spectrogram, (..., L) -> (..., n_mels, L // hop)."""
    mag = magnitude(stft(x, n_fft, hop))
    fb = mel_filterbank(sample_rate, n_fft, n_mels, mag.dtype).to(mag.device)
    return torch.log(torch.clamp(torch.matmul(fb, mag), min=floor))


def rms(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return math.sqrt(float(np.mean(x * x))) if x.size else 0.0
