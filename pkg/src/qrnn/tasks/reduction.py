"""Dimensionality-reduced inputs: PCA, Gaussian-CDF discretization and
precomputed embeddings read from CSV."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr

from ..errors import ConfigError, EmbeddingFormatError
from .base import Task, TaskSample
from .mnist import label_words


@dataclass(frozen=True)
class Pca:
    mean: np.ndarray
    components: np.ndarray   # (k, features)
    variances: np.ndarray    # (k,)

    @property
    def k(self):
        return len(self.components)


def pca_fit(train: np.ndarray, k: int) -> Pca:
    """Top-``k`` principal axes of the training data.

    Each axis is signed so that its largest-magnitude entry is positive.
    """
    x = np.asarray(train, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a (samples, features) array")
    if not 1 <= k <= x.shape[1]:
        raise ValueError(f"k={k} must lie in [1, {x.shape[1]}]")
    mean = x.mean(axis=0)
    cov = np.cov(x - mean, rowvar=False, bias=False).reshape(x.shape[1], x.shape[1])
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:k]
    comps = vecs[:, order].T.copy()
    flip = comps[np.arange(k), np.argmax(np.abs(comps), axis=1)] < 0
    comps[flip] *= -1
    return Pca(mean, comps, np.clip(vals[order], 0.0, None))


def pca_apply(pca: Pca, x: np.ndarray) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - pca.mean) @ pca.components.T


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, train: np.ndarray) -> Standardizer:
        train = np.asarray(train, dtype=np.float64)
        return cls(train.mean(axis=0), train.std(axis=0))


def discretize(coords: np.ndarray, bits: int, stats: Standardizer) -> np.ndarray:
    """``floor(Phi((x - mean) / std) * 2**bits)``, clamped to the code range."""
    if np.any(stats.std <= 0):
        bad = np.flatnonzero(stats.std <= 0).tolist()
        raise ValueError(f"zero standard deviation in dimensions {bad}")
    u = ndtr((np.asarray(coords, dtype=np.float64) - stats.mean) / stats.std)
    return np.clip(np.floor(u * (1 << bits)), 0, (1 << bits) - 1).astype(np.int64)


def code_words(codes: np.ndarray, bits: int, io_bits: int) -> list[tuple[int, ...]]:
    """Each row's codes as a bit stream (dimension by dimension, low bit
    first), packed ``io_bits`` per step."""
    codes = np.atleast_2d(codes)
    stream = (codes[:, :, None] >> np.arange(bits)) & 1
    stream = stream.reshape(len(codes), -1)
    pad = (-stream.shape[1]) % io_bits
    stream = np.pad(stream, ((0, 0), (0, pad)))
    packed = (stream.reshape(len(codes), -1, io_bits) << np.arange(io_bits)).sum(axis=2)
    return [tuple(int(w) for w in row) for row in packed]


def embedding_sample(words, label: int, io_bits: int, label_bits: int = 4) -> TaskSample:
    """Code words in, then label steps with zero input carrying the label."""
    lw = label_words(label, io_bits, label_bits)
    inputs = tuple(words) + (0,) * len(lw)
    targets = (None,) * len(words) + lw
    return TaskSample(inputs, targets, label=int(label), label_steps=len(lw))


@dataclass
class EmbeddingSplit:
    ids: list
    coords: np.ndarray
    labels: np.ndarray


def load_embedding_csv(path) -> dict[str, EmbeddingSplit]:
    """Read ``id,dim0..dimk,label,split`` rows, grouped by split."""
    rows: dict[str, tuple[list, list, list]] = {}
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmbeddingFormatError("missing header", 1) from None
        dims = header[1:-2]
        if (len(header) < 4 or header[0] != "id" or header[-2:] != ["label", "split"]
                or dims != [f"dim{i}" for i in range(len(dims))]):
            raise EmbeddingFormatError(f"bad header {header}", 1)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise EmbeddingFormatError(f"expected {len(header)} fields, got {len(row)}", line)
            rid = row[0]
            if rid in seen:
                raise EmbeddingFormatError(f"duplicate id {rid!r}", line)
            seen.add(rid)
            try:
                coords = [float(v) for v in row[1:-2]]
                label = int(row[-2])
            except ValueError as exc:
                raise EmbeddingFormatError(str(exc), line) from None
            if not all(math.isfinite(c) for c in coords):
                raise EmbeddingFormatError("non-finite coordinate", line)
            ids, cs, ls = rows.setdefault(row[-1], ([], [], []))
            ids.append(rid)
            cs.append(coords)
            ls.append(label)
    return {split: EmbeddingSplit(ids, np.array(cs, dtype=np.float64).reshape(len(ids), len(dims)),
                                  np.array(ls, dtype=np.int64))
            for split, (ids, cs, ls) in rows.items()}


class EmbeddingTask(Task):
    """Classification of discretized low-dimensional coordinates.

    Statistics for discretization come from the training split only.
    """

    name = "embedding"

    def __init__(self, splits: dict[str, EmbeddingSplit], bits: int = 4, io_bits: int = 2,
                 label_bits: int = 4, digits: Optional[tuple[int, ...]] = None):
        if "train" not in splits:
            raise ConfigError(["embedding data has no 'train' split"])
        self.bits, self.io_bits, self.label_bits = bits, io_bits, label_bits

        def keep(split):
            if digits is None:
                return split
            m = np.isin(split.labels, digits)
            return EmbeddingSplit([i for i, k in zip(split.ids, m) if k], split.coords[m],
                                  split.labels[m])

        splits = {k: keep(v) for k, v in splits.items()}
        self.stats = Standardizer.fit(splits["train"].coords)
        self.samples = {name: self._encode(split) for name, split in splits.items()}
        self.train = self.samples["train"]
        self.val = self.samples.get("val", self.samples.get("validation", self.train[:64]))
        self.test = self.samples.get("test", self.val)

    def _encode(self, split):
        codes = discretize(split.coords, self.bits, self.stats)
        words = code_words(codes, self.bits, self.io_bits)
        return [embedding_sample(w, int(l), self.io_bits, self.label_bits)
                for w, l in zip(words, split.labels)]

    @classmethod
    def from_pca(cls, train_x, train_y, test_x, test_y, k: int = 30, bits: int = 1,
                 io_bits: int = 2, n_val: int = 64, **kw) -> EmbeddingTask:
        """PCA fitted on the training images only, then discretized."""
        n = len(train_x) - n_val
        pca = pca_fit(np.asarray(train_x)[:n], k)
        tr = pca_apply(pca, train_x)
        te = pca_apply(pca, test_x)
        ids = [str(i) for i in range(len(tr) + len(te))]
        splits = {
            "train": EmbeddingSplit(ids[:n], tr[:n], np.asarray(train_y[:n])),
            "val": EmbeddingSplit(ids[n:len(tr)], tr[n:], np.asarray(train_y[n:])),
            "test": EmbeddingSplit(ids[len(tr):], te, np.asarray(test_y)),
        }
        task = cls(splits, bits=bits, io_bits=io_bits, **kw)
        task.pca = pca
        return task

    def batch(self, rng, n):
        idx = rng.integers(0, len(self.train), size=n)
        return [self.train[i] for i in idx]

    def validation_set(self, n=64, seed=0):
        return list(self.val[:n])

    def test_set(self, n=None, seed=0):
        return list(self.test if n is None else self.test[:n])
