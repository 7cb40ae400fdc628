"""Recogniser training, discriminator warm-up and joint vocoder training."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch
from torch import nn

from charvoc import checkpoint as ckpt
from charvoc.asr_ctc import CTCRecognizer, freeze
from charvoc.data import TrainingTriplet, Utterance
from charvoc.losses import (
    DiscriminatorBank,
    LossWeights,
    ctc_loss,
    disc_loss,
    feature_matching_loss,
    gen_adv_loss,
    generator_loss,
    mel_loss,
)
from charvoc.symbols import collapse, encode_text
from charvoc.vocoder import Generator

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "lr", "l_mel", "l_gan", "l_fm", "l_ctc", "l_gen", "l_disc")


class StepOutOfRange(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class Schedule:
    total_steps: int = 2000
    initial_lr: float = 5e-4
    weight_decay: float = 1e-2
    batch_size: int = 8
    seed: int = 0
    betas: tuple = (0.9, 0.99)
    eps: float = 1e-8
    grad_clip: Optional[float] = 10.0
    segment_frames: int = 32

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if not self.initial_lr > 0:
            raise ValueError("initial_lr must be > 0")


def cosine_lr(step: int, total_steps: int, initial_lr: float) -> float:
    """Single-cycle cosine annealing from ``initial_lr`` down to 0."""
    if not 0 <= step <= total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {total_steps}]")
    if step == total_steps:
        return 0.0
    return 0.5 * initial_lr * (1.0 + math.cos(math.pi * step / total_steps))


def make_optimizer(params, schedule: Schedule, lr: Optional[float] = None) -> torch.optim.AdamW:
    return torch.optim.AdamW(
        params,
        lr=schedule.initial_lr if lr is None else lr,
        betas=tuple(schedule.betas),
        eps=schedule.eps,
        weight_decay=schedule.weight_decay,
    )


def set_lr(opt: torch.optim.Optimizer, lr: float) -> None:
    for group in opt.param_groups:
        group["lr"] = lr


def parameter_hash(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def seed_everything(seed: int, deterministic: bool = True) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)
    if deterministic:
        torch.use_deterministic_algorithms(True)


# --------------------------------------------------------------------------
# recogniser


def _pad_batch(waves: Sequence[np.ndarray], hop: int) -> torch.Tensor:
    L = max(len(w) for w in waves)
    L -= L % hop
    x = np.zeros((len(waves), L), dtype=np.float32)
    for i, w in enumerate(waves):
        w = w[:L]
        x[i, : len(w)] = w
    return torch.as_tensor(x)


def train_recognizer(
    model: CTCRecognizer,
    utterances: Sequence[Utterance],
    steps: int = 800,
    lr: float = 3e-3,
    batch_size: int = 16,
    seed: int = 0,
    on_step: Optional[Callable[[int, float], None]] = None,
) -> CTCRecognizer:
    """Fit the recogniser with CTC on (audio, transcript) pairs, then freeze it."""
    torch.manual_seed(seed)
    model.train()
    opt = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=1e-2)
    hop = model.config.hop_length
    for step in range(steps):
        rng = np.random.default_rng([seed, step])
        idx = rng.choice(len(utterances), size=min(batch_size, len(utterances)), replace=False)
        x = _pad_batch([utterances[i].audio for i in idx], hop)
        targets = [encode_text(utterances[i].text) for i in idx]
        set_lr(opt, cosine_lr(step, steps, lr))
        loss = ctc_loss(model(x), targets, reduction="mean")
        opt.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(model.parameters(), 10.0)
        opt.step()
        if on_step is not None:
            on_step(step, float(loss))
    return freeze(model)


# --------------------------------------------------------------------------
# vocoder


@dataclass
class Batch:
    u: torch.Tensor  # (B, S * hop)
    c: torch.Tensor  # (B, S)
    a_bar: torch.Tensor  # (B, Q, S)
    targets: List[np.ndarray]
    ids: List[str]


def sample_batch(
    triplets: Sequence[TrainingTriplet], batch_size: int, segment_frames: int, seed: int, step: int
) -> Batch:
    """Random fixed-length crops; a pure function of (seed, step)."""
    rng = np.random.default_rng([seed, step])
    idx = rng.choice(len(triplets), size=batch_size, replace=len(triplets) < batch_size)
    chosen = [triplets[i] for i in idx]
    seg = min([segment_frames] + [t.frames for t in chosen])
    hop = chosen[0].u.shape[0] // chosen[0].frames
    us, cs, As = [], [], []
    for t in chosen:
        off = int(rng.integers(0, t.frames - seg + 1))
        us.append(t.u[off * hop : (off + seg) * hop])
        cs.append(t.c[off : off + seg])
        As.append(t.a_bar[:, off : off + seg])
    c = np.stack(cs)
    return Batch(
        torch.as_tensor(np.stack(us), dtype=torch.float32),
        torch.as_tensor(c, dtype=torch.long),
        torch.as_tensor(np.stack(As), dtype=torch.long),
        [collapse(row) for row in c],
        [t.id for t in chosen],
    )


def _check_finite(losses: Dict[str, torch.Tensor], batch: Batch, dump_dir) -> None:
    bad = [k for k, v in losses.items() if not torch.isfinite(v).all()]
    if bad:
        if dump_dir is not None:
            path = Path(dump_dir) / "nonfinite_batch.pt"
            path.parent.mkdir(parents=True, exist_ok=True)
            torch.save({"u": batch.u, "c": batch.c, "a_bar": batch.a_bar, "ids": batch.ids}, path)
        raise NonFiniteLoss(f"non-finite loss components: {bad} (batch ids {batch.ids})")


def train_step(
    generator: Generator,
    bank: DiscriminatorBank,
    recognizer: CTCRecognizer,
    batch: Batch,
    weights: LossWeights,
    opt_g: torch.optim.Optimizer,
    opt_d: torch.optim.Optimizer,
    grad_clip: Optional[float] = 10.0,
    sample_rate: int = 8000,
    dump_dir=None,
) -> Dict[str, float]:
    """One generator update followed by one discriminator update."""
    u_gen = generator(batch.a_bar, batch.c)

    if weights.lambda_ctc > 0:
        l_ctc = ctc_loss(recognizer(u_gen), batch.targets, reduction="mean")
    else:
        with torch.no_grad():
            l_ctc = ctc_loss(recognizer(u_gen), batch.targets, reduction="mean")

    l_mel = mel_loss(batch.u, u_gen, sample_rate)
    with torch.no_grad():
        real = bank(batch.u)
    fake = bank(u_gen)
    l_gan = gen_adv_loss([s for s, _ in fake])
    l_fm = feature_matching_loss([f for _, f in real], [f for _, f in fake])
    l_gen = generator_loss(l_mel, l_gan, l_fm, l_ctc, weights)
    _check_finite({"l_mel": l_mel, "l_gan": l_gan, "l_fm": l_fm, "l_ctc": l_ctc}, batch, dump_dir)

    opt_g.zero_grad()
    l_gen.backward()
    if grad_clip:
        nn.utils.clip_grad_norm_(generator.parameters(), grad_clip)
    opt_g.step()

    real = bank(batch.u)
    fake = bank(u_gen.detach())
    l_disc = disc_loss([s for s, _ in real], [s for s, _ in fake])
    _check_finite({"l_disc": l_disc}, batch, dump_dir)
    opt_d.zero_grad()
    l_disc.backward()
    if grad_clip:
        nn.utils.clip_grad_norm_(bank.parameters(), grad_clip)
    opt_d.step()

    return {
        "l_mel": l_mel.item(),
        "l_gan": l_gan.item(),
        "l_fm": l_fm.item(),
        "l_ctc": l_ctc.item(),
        "l_gen": l_gen.item(),
        "l_disc": l_disc.item(),
    }


def warmup_discriminators(
    bank: DiscriminatorBank,
    generator: Generator,
    triplets: Sequence[TrainingTriplet],
    schedule: Schedule,
    opt_d: Optional[torch.optim.Optimizer] = None,
) -> List[dict]:
    """Train only the discriminators against a fixed generator.

    Returns one log row per step (step, lr, l_disc).
    """
    before = parameter_hash(generator)
    opt_d = opt_d or make_optimizer(bank.parameters(), schedule)
    generator.eval()
    rows = []
    for step in range(schedule.total_steps):
        lr = cosine_lr(step, schedule.total_steps, schedule.initial_lr)
        set_lr(opt_d, lr)
        batch = sample_batch(triplets, schedule.batch_size, schedule.segment_frames, schedule.seed, step)
        with torch.no_grad():
            u_gen = generator(batch.a_bar, batch.c)
        real = bank(batch.u)
        fake = bank(u_gen)
        loss = disc_loss([s for s, _ in real], [s for s, _ in fake])
        opt_d.zero_grad()
        loss.backward()
        if schedule.grad_clip:
            nn.utils.clip_grad_norm_(bank.parameters(), schedule.grad_clip)
        opt_d.step()
        rows.append({"step": step, "lr": lr, "l_disc": loss.item()})
    generator.train()
    if parameter_hash(generator) != before:
        raise AssertionError("generator parameters changed during discriminator warm-up")
    return rows


class MetricsLog:
    """CSV metrics writer with a fixed header."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.rows: List[dict] = []

    def append(self, row: dict) -> None:
        self.rows.append(row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for r in self.rows:
            w.writerow([r["step"]] + [repr(float(r[k])) for k in METRIC_FIELDS[1:]])
        return buf.getvalue()

    def save(self) -> None:
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(self.to_csv())

    @staticmethod
    def read(path) -> List[dict]:
        with open(path, newline="") as f:
            return [
                {k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(f)
            ]


class Trainer:
    """Joint adversarial training state: models, optimisers and step counter."""

    def __init__(
        self,
        generator: Generator,
        bank: DiscriminatorBank,
        recognizer: CTCRecognizer,
        schedule: Schedule,
        weights: LossWeights = LossWeights(),
        sample_rate: int = 8000,
    ):
        self.generator = generator
        self.bank = bank
        self.recognizer = freeze(recognizer)
        self.schedule = schedule
        self.weights = weights
        self.sample_rate = sample_rate
        self.opt_g = make_optimizer(generator.parameters(), schedule)
        self.opt_d = make_optimizer(bank.parameters(), schedule)
        self.step = 0
        self.metrics = MetricsLog()

    def run(
        self,
        triplets: Sequence[TrainingTriplet],
        until: Optional[int] = None,
        checkpoint_path=None,
        checkpoint_every: int = 0,
        dump_dir=None,
    ) -> MetricsLog:
        s = self.schedule
        until = s.total_steps if until is None else min(until, s.total_steps)
        asr_hash = parameter_hash(self.recognizer)
        while self.step < until:
            lr = cosine_lr(self.step, s.total_steps, s.initial_lr)
            set_lr(self.opt_g, lr)
            set_lr(self.opt_d, lr)
            batch = sample_batch(triplets, s.batch_size, s.segment_frames, s.seed, self.step)
            losses = train_step(
                self.generator, self.bank, self.recognizer, batch, self.weights,
                self.opt_g, self.opt_d, s.grad_clip, self.sample_rate, dump_dir,
            )
            self.metrics.append({"step": self.step, "lr": lr, **losses})
            self.step += 1
            if checkpoint_path and checkpoint_every and self.step % checkpoint_every == 0:
                self.save(checkpoint_path)
        if parameter_hash(self.recognizer) != asr_hash:
            raise AssertionError("recogniser parameters changed during vocoder training")
        return self.metrics

    def save(self, path, extra: Optional[dict] = None) -> None:
        meta = {
            "kind": "vocoder",
            "step": self.step,
            "vocoder": self.generator.config.to_dict(),
            "discriminators": {
                "periods": list(self.bank.periods),
                "resolutions": [list(r) for r in self.bank.resolutions],
            },
            "schedule": asdict(self.schedule),
            "weights": asdict(self.weights),
            "metrics_csv": self.metrics.to_csv(),
            **(extra or {}),
        }
        ckpt.save_checkpoint(
            path,
            {"generator": self.generator, "discriminators": self.bank},
            meta,
            {"generator": self.opt_g, "discriminators": self.opt_d},
        )

    def load_state(self, path) -> dict:
        """Restore weights, optimiser state, step and metrics from ``path``."""
        meta, tensors = ckpt.read_checkpoint(path)
        self.generator.load_state_dict(ckpt.module_state(tensors, "generator"))
        self.bank.load_state_dict(ckpt.module_state(tensors, "discriminators"))
        if meta.get("optimizers", {}).get("generator"):
            ckpt.restore_optimizer(self.opt_g, "generator", meta, tensors)
        if meta.get("optimizers", {}).get("discriminators"):
            ckpt.restore_optimizer(self.opt_d, "discriminators", meta, tensors)
        self.step = int(meta.get("step", 0))
        self.metrics = MetricsLog()
        csv_text = meta.get("metrics_csv", "")
        if csv_text:
            for row in csv.DictReader(io.StringIO(csv_text)):
                self.metrics.append({k: (int(v) if k == "step" else float(v)) for k, v in row.items()})
        return meta
