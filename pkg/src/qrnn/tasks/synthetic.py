"""Synthetic sequence tasks: memorization, Elman XOR, words, DNA."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .base import Task, TaskSample, TokenCodec

MEMORIZE_CODEC = TokenCodec("1234")
XOR_CODEC = TokenCodec("01")
WORDS_CODEC = TokenCodec("badigu")
WORDS = ("ba", "dii", "guuu")
DNA_CODEC = TokenCodec("GATCU")
DNA_BASES = "GATC"


def _rng(seed, rng):
    return rng if rng is not None else np.random.default_rng(seed)


def next_token_sample(words: Sequence[int], supervised: Sequence[bool] | None = None) -> TaskSample:
    """Input ``words[t]``, target ``words[t+1]``; the last step has no target.

    ``supervised[t]`` (default all true) masks the target at step ``t``.
    """
    words = tuple(words)
    targets = []
    for t in range(len(words)):
        nxt = words[t + 1] if t + 1 < len(words) else None
        if supervised is not None and not supervised[t]:
            nxt = None
        targets.append(nxt)
    return TaskSample(words, tuple(targets))


def gen_memorize(pattern: str, length: int, codec: TokenCodec = MEMORIZE_CODEC) -> TaskSample:
    """Cyclic repetition of ``pattern``; every step predicts the next token."""
    if not pattern:
        raise ValueError("pattern must be nonempty")
    words = codec.encode_all(pattern)
    inputs = tuple(words[t % len(words)] for t in range(length))
    targets = tuple(words[(t + 1) % len(words)] for t in range(length))
    return TaskSample(inputs, targets)


def xor_bits(triplets) -> tuple[int, ...]:
    bits = []
    for a, b in triplets:
        bits += [int(a), int(b), int(a) ^ int(b)]
    return tuple(bits)


def gen_xor(triplet_count: int = 5, seed: int | None = None, rng=None,
            supervise: str = "determined") -> TaskSample:
    """Random bit pairs each followed by their XOR.

    Next-bit targets; with ``supervise="determined"`` only the XOR bits (the
    predictable positions) carry a target, with ``"all"`` every step does.
    """
    pairs = _rng(seed, rng).integers(0, 2, size=(triplet_count, 2))
    bits = xor_bits(pairs)
    mask = None
    if supervise == "determined":
        mask = [(t + 1) % 3 == 2 for t in range(len(bits))]
    elif supervise != "all":
        raise ValueError(f"supervise must be 'determined' or 'all', got {supervise!r}")
    return next_token_sample(bits, mask)


def words_letters(words: Sequence[str]) -> str:
    return "".join(words)


def gen_words(sentence_length: int = 5, seed: int | None = None, rng=None,
              supervise: str = "determined", words: Sequence[str] | None = None) -> TaskSample:
    """Sentence of random words from ``ba``/``dii``/``guuu`` as letters.

    With ``supervise="determined"`` only letters inside a word (never a
    word's first letter) are targets.
    """
    if words is None:
        picks = _rng(seed, rng).integers(0, len(WORDS), size=sentence_length)
        words = [WORDS[i] for i in picks]
    letters = words_letters(words)
    starts = set(np.cumsum([0] + [len(w) for w in words])[:-1].tolist())
    mask = None
    if supervise == "determined":
        mask = [(t + 1) not in starts for t in range(len(letters))]
    elif supervise != "all":
        raise ValueError(f"supervise must be 'determined' or 'all', got {supervise!r}")
    return next_token_sample(WORDS_CODEC.encode_all(letters), mask)


def dna_label(text: str) -> str:
    """The base right after the single ``U``."""
    if text.count("U") != 1:
        raise ValueError("sequence must contain exactly one U")
    k = text.index("U")
    if k + 1 >= len(text):
        raise ValueError("U is the last symbol")
    return text[k + 1]


def dna_sample(text: str) -> TaskSample:
    words = DNA_CODEC.encode_all(text)
    label = DNA_CODEC.encode(dna_label(text))
    targets = (None,) * (len(words) - 1) + (label,)
    return TaskSample(words, targets, label=label, label_steps=1)


def gen_dna(length: int = 20, seed: int | None = None, rng=None) -> TaskSample:
    """Random G/A/T/C string with one U in the first half; label = base after U."""
    if length < 4:
        raise ValueError("length must be >= 4")
    rng = _rng(seed, rng)
    bases = rng.integers(0, 4, size=length)
    pos = int(rng.integers(0, math.ceil(length / 2)))
    text = [DNA_BASES[b] for b in bases]
    text[pos] = "U"
    return dna_sample("".join(text))


class MemorizeTask(Task):
    name = "memorize"

    def __init__(self, pattern: str = "4", length: int = 10):
        self.pattern = pattern
        self.length = length
        self.codec = MEMORIZE_CODEC
        self.io_bits = self.codec.bits
        self._sample = gen_memorize(pattern, length, self.codec)

    def sample(self, rng):
        return self._sample


class XorTask(Task):
    name = "xor"

    def __init__(self, triplets: int = 5, supervise: str = "determined"):
        self.triplets = triplets
        self.supervise = supervise
        self.codec = XOR_CODEC
        self.io_bits = 1

    def sample(self, rng):
        return gen_xor(self.triplets, rng=rng, supervise=self.supervise)


class WordsTask(Task):
    name = "words"

    def __init__(self, sentence_length: int = 5, supervise: str = "determined"):
        self.sentence_length = sentence_length
        self.supervise = supervise
        self.codec = WORDS_CODEC
        self.io_bits = self.codec.bits

    def sample(self, rng):
        return gen_words(self.sentence_length, rng=rng, supervise=self.supervise)


class DnaTask(Task):
    name = "dna"

    def __init__(self, length: int = 20):
        if length < 4:
            raise ValueError(f"DNA sequences need length >= 4, got {length}")
        self.length = length
        self.codec = DNA_CODEC
        self.io_bits = self.codec.bits

    def sample(self, rng):
        return gen_dna(self.length, rng=rng)
