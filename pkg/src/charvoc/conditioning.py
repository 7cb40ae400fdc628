"""Character conditioning: embedding gathers and the affine modulation.

Given a frame-aligned character sequence ``c`` and a feature map ``x`` of
shape (B, D, T), the layer computes ``w(c) * x + b(c)`` where ``w`` and
``b`` are 31 x D learnable tables.
"""

from __future__ import annotations

import torch
from torch import nn

from charvoc.symbols import NUM_SYMBOLS


class ShapeMismatch(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


def gather(table: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
    """Build the D x T matrix whose column t is row ``c[t]`` of ``table``.

    Args:
        table: (31, D) embedding dictionary.
        c: (T,) or (B, T) integer indices.

    Returns:
        (D, T) or (B, D, T) tensor.
    """
    c = torch.as_tensor(c, dtype=torch.long, device=table.device)
    if c.numel() and (int(c.min()) < 0 or int(c.max()) >= table.shape[0]):
        raise IndexOutOfRange(f"character index outside [0, {table.shape[0]})")
    return table[c].transpose(-1, -2)


def film_apply(x: torch.Tensor, w_c: torch.Tensor, b_c: torch.Tensor) -> torch.Tensor:
    """Element-wise affine modulation ``w_c * x + b_c``."""
    if x.shape != w_c.shape or x.shape != b_c.shape:
        raise ShapeMismatch(
            f"film_apply expects equal shapes, got {tuple(x.shape)}, "
            f"{tuple(w_c.shape)}, {tuple(b_c.shape)}"
        )
    return w_c * x + b_c


class CharConditioning(nn.Module):
    """One conditioning layer with its own scale and shift dictionaries."""

    def __init__(self, channels: int, layer_index: int = 0):
        super().__init__()
        if channels < 1:
            raise ValueError("channels must be >= 1")
        self.layer_index = layer_index
        self.w = nn.Parameter(torch.ones(NUM_SYMBOLS, channels))
        self.b = nn.Parameter(torch.zeros(NUM_SYMBOLS, channels))

    @property
    def channels(self) -> int:
        return self.w.shape[1]

    def reset_identity(self) -> None:
        with torch.no_grad():
            self.w.fill_(1.0)
            self.b.zero_()

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        return film_apply(x, gather(self.w, c), gather(self.b, c))


def init_identity(channels: int, layer_index: int = 0) -> CharConditioning:
    """A conditioning layer that leaves its input untouched (w = 1, b = 0)."""
    return CharConditioning(channels, layer_index)
