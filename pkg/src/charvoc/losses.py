"""Generator and discriminator objectives.

Includes the log-mel reconstruction loss, a log-space CTC forward
recursion, hinge adversarial losses against multi-period and
multi-resolution discriminators, feature matching, and the weighted
generator objective.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from charvoc import dsp
from charvoc.conditioning import ShapeMismatch
from charvoc.symbols import BLANK

# finite stand-in for log(0): keeps logsumexp gradients free of NaNs
NEG_INF = -1e30


class LengthMismatch(ValueError):
    pass


class TargetTooLong(ValueError):
    pass


@dataclass
class LossWeights:
    lambda_mel: float = 1.0
    lambda_gan: float = 0.5
    lambda_fm: float = 1.0
    lambda_ctc: float = 1.5

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")


def mel_loss(
    u_ref: torch.Tensor,
    u_gen: torch.Tensor,
    sample_rate: int = 8000,
    n_fft: int = 256,
    hop: int = 64,
    n_mels: int = 40,
) -> torch.Tensor:
    """Mean absolute difference of log-mel spectrograms."""
    if u_ref.shape != u_gen.shape:
        raise LengthMismatch(f"waveform shapes differ: {tuple(u_ref.shape)} vs {tuple(u_gen.shape)}")
    ref = dsp.log_mel(u_ref, sample_rate, n_fft, hop, n_mels)
    gen = dsp.log_mel(u_gen, sample_rate, n_fft, hop, n_mels)
    return F.l1_loss(gen, ref)


def min_ctc_frames(target: Sequence[int]) -> int:
    """Frames needed to emit ``target``: one per label plus one blank per repeat."""
    target = np.asarray(target).reshape(-1)
    repeats = int(np.sum(target[1:] == target[:-1])) if target.size > 1 else 0
    return int(target.size) + repeats


def ctc_loss(
    log_probs: torch.Tensor,
    targets: Union[Sequence[int], Sequence[Sequence[int]]],
    blank: int = BLANK,
    reduction: str = "sum",
) -> torch.Tensor:
    """Negative log-probability of all CTC alignments of the target.

    Args:
        log_probs: (T, V) for a single sequence or (B, T, V) for a batch;
            rows must be log-distributions.
        targets: blank-free label sequence, or one per batch item.
        reduction: ``"none"``, ``"sum"``, or ``"mean"`` (each item divided
            by its target length, then averaged over the batch).

    Raises:
        TargetTooLong: when a target cannot fit in T frames.
    """
    single = log_probs.dim() == 2
    if single:
        log_probs = log_probs[None]
        targets = [targets]
    B, T, _ = log_probs.shape
    targets = [np.asarray(t, dtype=np.int64).reshape(-1) for t in targets]
    if len(targets) != B:
        raise ValueError(f"{len(targets)} targets for batch of {B}")
    for t in targets:
        if np.any(t == blank):
            raise ValueError("CTC targets must not contain the blank index")
        if min_ctc_frames(t) > T:
            raise TargetTooLong(f"target of length {t.size} needs {min_ctc_frames(t)} frames, have {T}")

    lengths = [2 * t.size + 1 for t in targets]
    S = max(lengths)
    ext = np.full((B, S), blank, dtype=np.int64)
    skip = np.zeros((B, S), dtype=bool)
    for b, t in enumerate(targets):
        ext[b, 1 : 2 * t.size : 2] = t
        for s in range(3, 2 * t.size, 2):
            skip[b, s] = ext[b, s] != ext[b, s - 2]
    ext_t = torch.as_tensor(ext, device=log_probs.device)
    skip_t = torch.as_tensor(skip, device=log_probs.device)

    emit = log_probs.gather(2, ext_t[:, None, :].expand(B, T, S))
    neg = torch.full((B, S), NEG_INF, dtype=log_probs.dtype, device=log_probs.device)
    alpha = neg.clone()
    alpha[:, 0] = emit[:, 0, 0]
    if S > 1:
        alpha[:, 1] = emit[:, 0, 1]
    neg1 = neg[:, :1]
    neg2 = neg[:, :2]
    for t in range(1, T):
        a1 = torch.cat([neg1, alpha[:, :-1]], dim=1)
        a2 = torch.cat([neg2, alpha[:, :-2]], dim=1)
        a2 = torch.where(skip_t, a2, neg)
        alpha = torch.logsumexp(torch.stack([alpha, a1, a2]), dim=0) + emit[:, t]

    ends = torch.as_tensor([n - 1 for n in lengths], device=log_probs.device)
    last = alpha.gather(1, ends[:, None])[:, 0]
    prev = alpha.gather(1, (ends - 1).clamp(min=0)[:, None])[:, 0]
    has_label = torch.as_tensor([n > 1 for n in lengths], device=log_probs.device)
    prev = torch.where(has_label, prev, torch.full_like(prev, NEG_INF))
    nll = -torch.logaddexp(last, prev)

    if reduction == "none":
        return nll[0] if single else nll
    if reduction == "sum":
        return nll.sum()
    if reduction == "mean":
        denom = torch.as_tensor([max(t.size, 1) for t in targets], dtype=nll.dtype)
        return (nll / denom).mean()
    raise ValueError(f"unknown reduction {reduction!r}")


# --------------------------------------------------------------------------
# discriminators


def pad_to_period(u: torch.Tensor, period: int) -> torch.Tensor:
    """Right-pad (B, L) with zeros to a multiple of ``period`` and fold to (B, 1, L/p, p)."""
    B, L = u.shape
    rem = (-L) % period
    if rem:
        u = F.pad(u, (0, rem))
    return u.reshape(B, 1, -1, period)


class PeriodDiscriminator(nn.Module):
    def __init__(self, period: int, channels: Sequence[int] = (16, 32, 64, 64)):
        super().__init__()
        self.period = period
        layers = []
        c_in = 1
        for i, c_out in enumerate(channels):
            stride = 1 if i == len(channels) - 1 else 3
            layers.append(nn.Conv2d(c_in, c_out, (5, 1), (stride, 1), padding=(2, 0)))
            c_in = c_out
        self.convs = nn.ModuleList(layers)
        self.post = nn.Conv2d(c_in, 1, (3, 1), padding=(1, 0))

    def forward(self, u: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        x = pad_to_period(u, self.period)
        fmaps = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.1)
            fmaps.append(x)
        x = self.post(x)
        fmaps.append(x)
        return x.flatten(1), fmaps


class ResolutionDiscriminator(nn.Module):
    def __init__(self, n_fft: int, hop: int, channels: int = 8, layers: int = 3):
        super().__init__()
        self.n_fft = n_fft
        self.hop = hop
        convs = []
        c_in = 1
        for _ in range(layers):
            convs.append(nn.Conv2d(c_in, channels, (3, 5), stride=(1, 2), padding=(1, 2)))
            c_in = channels
        self.convs = nn.ModuleList(convs)
        self.post = nn.Conv2d(channels, 1, (3, 3), padding=(1, 1))

    def forward(self, u: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        mag = dsp.magnitude(dsp.stft(u, self.n_fft, self.hop))
        x = mag.transpose(1, 2)[:, None]
        fmaps = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.1)
            fmaps.append(x)
        x = self.post(x)
        fmaps.append(x)
        return x.flatten(1), fmaps


class DiscriminatorBank(nn.Module):
    """Multi-period plus multi-resolution discriminators."""

    def __init__(
        self,
        periods: Sequence[int] = (2, 3, 5),
        resolutions: Sequence[Tuple[int, int]] = ((128, 32), (256, 64)),
    ):
        super().__init__()
        if len(set(periods)) != len(periods) or not all(_is_prime(p) for p in periods):
            raise ValueError(f"periods must be distinct primes, got {periods}")
        self.periods = tuple(periods)
        self.resolutions = tuple(tuple(r) for r in resolutions)
        self.period_discriminators = nn.ModuleList(PeriodDiscriminator(p) for p in periods)
        self.resolution_discriminators = nn.ModuleList(
            ResolutionDiscriminator(n, h) for n, h in self.resolutions
        )

    def forward(self, u: torch.Tensor) -> List[Tuple[torch.Tensor, List[torch.Tensor]]]:
        return discriminate(self, u)


def discriminate(bank: DiscriminatorBank, u: torch.Tensor):
    """Run every discriminator; returns a list of (score, feature maps)."""
    if u.dim() == 1:
        u = u[None]
    return [d(u) for d in bank.period_discriminators] + [
        d(u) for d in bank.resolution_discriminators
    ]


def _is_prime(n: int) -> bool:
    return n >= 2 and all(n % k for k in range(2, int(n**0.5) + 1))


def _as_list(scores):
    return list(scores) if isinstance(scores, (list, tuple)) else [scores]


def gen_adv_loss(scores_fake) -> torch.Tensor:
    """Hinge generator loss: mean over discriminators of mean(-score)."""
    scores = _as_list(scores_fake)
    return sum(torch.mean(-s) for s in scores) / len(scores)


def disc_loss(scores_real, scores_fake) -> torch.Tensor:
    """Hinge discriminator loss, averaged over discriminators."""
    real, fake = _as_list(scores_real), _as_list(scores_fake)
    total = sum(
        torch.mean(F.relu(1 - r)) + torch.mean(F.relu(1 + f)) for r, f in zip(real, fake)
    )
    return total / len(real)


def feature_matching_loss(features_real, features_fake) -> torch.Tensor:
    """Mean |real - fake| over each discriminator's layers, averaged over discriminators.

    Accepts either a list of feature maps (one discriminator) or a list of
    such lists.
    """
    if features_real and isinstance(features_real[0], torch.Tensor):
        features_real, features_fake = [features_real], [features_fake]
    if len(features_real) != len(features_fake):
        raise ShapeMismatch("feature lists differ in discriminator count")
    per_disc = []
    for fr, ff in zip(features_real, features_fake):
        if len(fr) != len(ff):
            raise ShapeMismatch("feature lists differ in layer count")
        layer_losses = []
        for r, f in zip(fr, ff):
            if r.shape != f.shape:
                raise ShapeMismatch(f"feature shapes differ: {tuple(r.shape)} vs {tuple(f.shape)}")
            layer_losses.append(torch.mean(torch.abs(r.detach() - f)))
        per_disc.append(sum(layer_losses) / len(layer_losses))
    return sum(per_disc) / len(per_disc)


def generator_loss(l_mel, l_gan, l_fm, l_ctc, weights: LossWeights = LossWeights()):
    return (
        weights.lambda_mel * l_mel
        + weights.lambda_gan * l_gan
        + weights.lambda_fm * l_fm
        + weights.lambda_ctc * l_ctc
    )
