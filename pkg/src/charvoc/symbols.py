"""Character vocabulary, CTC collapse and nearest-neighbour resizing.

Index layout: 0 = blank (CTC null), 1 = bos, 2 = eos, 3 = space,
4 = apostrophe, 5..30 = 'a'..'z'.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

BLANK = 0
BOS = 1
EOS = 2
SPACE = 3
APOSTROPHE = 4
NUM_SYMBOLS = 31

SYMBOL_NAMES: Tuple[str, ...] = ("<blank>", "<bos>", "<eos>", "<space>", "'") + tuple(
    string.ascii_lowercase
)


class UnknownSymbol(ValueError):
    def __init__(self, char: str, position: int):
        super().__init__(f"unknown symbol {char!r} at position {position}")
        self.char = char
        self.position = position


class EmptySequence(ValueError):
    pass


@dataclass(frozen=True)
class CharVocabulary:
    """The 31-entry CTC character set."""

    symbols: Tuple[str, ...] = SYMBOL_NAMES
    index_of: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.symbols) != NUM_SYMBOLS or len(set(self.symbols)) != NUM_SYMBOLS:
            raise ValueError("vocabulary needs exactly 31 distinct symbols")
        object.__setattr__(self, "index_of", {s: i for i, s in enumerate(self.symbols)})

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def blank(self) -> int:
        return self.index_of["<blank>"]

    def char_of(self, index: int) -> str:
        """Printable character for ``index`` ('' for blank/bos/eos)."""
        name = self.symbols[index]
        if name == "<space>":
            return " "
        if name.startswith("<"):
            return ""
        return name

    def index_of_char(self, char: str) -> int:
        if char == " ":
            return self.index_of["<space>"]
        if char.startswith("<") or char not in self.index_of:
            raise KeyError(char)
        return self.index_of[char]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.symbols) + "\n")

    @classmethod
    def load(cls, path) -> "CharVocabulary":
        lines = [ln for ln in Path(path).read_text().splitlines() if ln]
        return cls(tuple(lines))


DEFAULT_VOCAB = CharVocabulary()


def encode_text(text: str, vocab: CharVocabulary = DEFAULT_VOCAB) -> np.ndarray:
    """Map lowercased ``text`` to one label index per character.

    Raises:
        UnknownSymbol: if a character has no vocabulary entry.
    """
    out = []
    for pos, ch in enumerate(text.lower()):
        try:
            out.append(vocab.index_of_char(ch))
        except KeyError:
            raise UnknownSymbol(ch, pos) from None
    return np.asarray(out, dtype=np.int64)


def collapse(c: Sequence[int], blank: int = BLANK) -> np.ndarray:
    """Merge consecutive repeats, then drop blanks."""
    c = np.asarray(c, dtype=np.int64).reshape(-1)
    if c.size == 0:
        return c
    keep = np.ones(c.size, dtype=bool)
    keep[1:] = c[1:] != c[:-1]
    merged = c[keep]
    return merged[merged != blank]


def resize_indices(src_len: int, target_len: int) -> np.ndarray:
    """Source index used for each output frame: floor((i + 0.5) * L / T)."""
    i = np.arange(target_len, dtype=np.int64)
    # integer form of floor((i + 0.5) * L / T), exact for any size
    return ((2 * i + 1) * src_len) // (2 * target_len)


def resize_nearest(c: Sequence[int], target_len: int) -> np.ndarray:
    """Nearest-neighbour resize of a frame sequence to ``target_len`` frames."""
    c = np.asarray(c, dtype=np.int64).reshape(-1)
    if c.size == 0:
        raise EmptySequence("cannot resize an empty sequence")
    if target_len < 1:
        raise ValueError(f"target length must be >= 1, got {target_len}")
    if c.size == target_len:
        return c.copy()
    return c[resize_indices(c.size, target_len)]


def to_text(labels: Iterable[int], vocab: CharVocabulary = DEFAULT_VOCAB) -> str:
    return "".join(vocab.char_of(int(i)) for i in labels)


def decode_frames(c: Sequence[int], vocab: CharVocabulary = DEFAULT_VOCAB) -> str:
    """Frame sequence -> text via collapse and ``to_text``."""
    return to_text(collapse(c, vocab.blank), vocab)


def printable_characters(vocab: CharVocabulary = DEFAULT_VOCAB) -> List[str]:
    return [vocab.char_of(i) for i in range(len(vocab)) if vocab.char_of(i)]
