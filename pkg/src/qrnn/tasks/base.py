from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

VALIDATION_STREAM = 1
TRAIN_STREAM = 0


@dataclass(frozen=True)
class TaskSample:
    """One sequence: input words, optional per-step targets, optional label.

    ``label_steps`` says how many of the final target-bearing steps spell
    the label (little-endian, ``I`` bits per step).
    """

    inputs: tuple[int, ...]
    targets: tuple[Optional[int], ...]
    label: Optional[int] = None
    label_steps: int = 0

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(int(x) for x in self.inputs))
        object.__setattr__(self, "targets",
                           tuple(None if y is None else int(y) for y in self.targets))
        if len(self.inputs) != len(self.targets):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.targets)} targets")

    def __len__(self):
        return len(self.inputs)

    def check_width(self, io_bits: int):
        top = 1 << io_bits
        for w in self.inputs + tuple(y for y in self.targets if y is not None):
            if not 0 <= w < top:
                raise ValueError(f"word {w} does not fit {io_bits} bits")

    @property
    def target_steps(self) -> int:
        return sum(y is not None for y in self.targets)


class TokenCodec:
    """Symbols <-> integer words of ``bits`` bits (index in the alphabet)."""

    def __init__(self, alphabet: Sequence[str]):
        self.alphabet = tuple(alphabet)
        if len(set(self.alphabet)) != len(self.alphabet) or not self.alphabet:
            raise ValueError("alphabet must be nonempty and free of duplicates")
        self.bits = max(1, math.ceil(math.log2(len(self.alphabet))))
        self._index = {s: i for i, s in enumerate(self.alphabet)}

    def encode(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise ValueError(f"symbol {symbol!r} not in alphabet {''.join(self.alphabet)!r}") from None

    def decode(self, word: int) -> str:
        if not 0 <= word < len(self.alphabet):
            raise ValueError(f"word {word} has no symbol")
        return self.alphabet[word]

    def encode_all(self, text) -> tuple[int, ...]:
        return tuple(self.encode(s) for s in text)

    def decode_all(self, words) -> str:
        return "".join(self.decode(w) for w in words)

    def __repr__(self):
        return f"TokenCodec({''.join(self.alphabet)!r}, bits={self.bits})"


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


class Task:
    """A sample source plus a fixed validation set.

    Subclasses implement :meth:`sample`; tasks backed by a fixed dataset
    override :meth:`batch` and :meth:`validation_set` instead.
    """

    name = "task"
    io_bits: int = 1

    def sample(self, rng: np.random.Generator) -> TaskSample:
        raise NotImplementedError

    def batch(self, rng: np.random.Generator, n: int) -> list[TaskSample]:
        return [self.sample(rng) for _ in range(n)]

    def validation_set(self, n: int = 64, seed: int = 0) -> list[TaskSample]:
        """``n`` samples from a stream disjoint from every training stream."""
        return self.batch(stream_rng(seed, VALIDATION_STREAM), n)

    def test_set(self, n: int = 64, seed: int = 0) -> list[TaskSample]:
        return self.validation_set(n, seed + 1_000_003)
