"""MNIST: IDX parsing, preprocessing to bit scanlines, and the two tasks."""

from __future__ import annotations

import gzip
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..errors import BadMagicError, ConfigError, CountMismatchError, TruncatedFileError
from .base import Task, TaskSample

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

TRAIN_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
TEST_FILES = ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


@dataclass
class MnistRaw:
    images: np.ndarray   # (N, rows, cols) uint8
    labels: np.ndarray   # (N,) uint8

    def __len__(self):
        return len(self.labels)

    def select(self, index) -> MnistRaw:
        return MnistRaw(self.images[index], self.labels[index])


def _read_bytes(path) -> bytes:
    data = Path(path).read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _parse_idx(data: bytes, magic: int, ndim: int, path) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(data) < header:
        raise TruncatedFileError(f"{path}: header truncated at byte offset {len(data)}", len(data))
    found = int.from_bytes(data[:4], "big")
    if found != magic:
        raise BadMagicError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = [int.from_bytes(data[4 + 4 * i:8 + 4 * i], "big") for i in range(ndim)]
    need = header + math.prod(dims)
    if len(data) < need:
        raise TruncatedFileError(
            f"{path}: truncated at byte offset {len(data)}, expected {need} bytes", len(data))
    return np.frombuffer(data, dtype=np.uint8, count=need - header, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path) -> MnistRaw:
    """Parse a pair of IDX files (optionally gzip-compressed)."""
    images = _parse_idx(_read_bytes(images_path), IMAGES_MAGIC, 3, images_path)
    labels = _parse_idx(_read_bytes(labels_path), LABELS_MAGIC, 1, labels_path)
    if len(images) != len(labels):
        raise CountMismatchError(f"{len(images)} images but {len(labels)} labels")
    return MnistRaw(images, labels)


def write_idx(path, array: np.ndarray):
    """Write a uint8 array as IDX (magic ``0x08, ndim``)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x0800 | array.ndim
    header = magic.to_bytes(4, "big") + b"".join(int(n).to_bytes(4, "big") for n in array.shape)
    Path(path).write_bytes(header + array.tobytes())


def _find(data_dir, name):
    for candidate in (name, name + ".gz", name.replace("-idx", ".idx")):
        p = Path(data_dir) / candidate
        if p.exists():
            return p
    raise FileNotFoundError(f"no {name}[.gz] under {data_dir}")


def load_mnist_dir(data_dir, split: str = "train") -> MnistRaw:
    names = TRAIN_FILES if split == "train" else TEST_FILES
    return load_mnist_idx(_find(data_dir, names[0]), _find(data_dir, names[1]))


@dataclass(frozen=True)
class MnistConfig:
    crop: int = 20
    size: int = 10
    threshold: float = 0.5
    digits: tuple[int, ...] = (0, 1)
    n_train: int = 2000
    n_val: int = 64
    n_test: int = 500
    io_bits: int = 2
    label_bits: int = 4
    seed: int = 0

    def problems(self) -> list[str]:
        out = []
        if not 0 < self.threshold < 1:
            out.append("task.threshold must lie in (0, 1)")
        if self.crop % self.size:
            out.append("task.crop must be a multiple of task.size")
        if self.io_bits != 2:
            out.append("task.io_bits must be 2 (one bit per scanline)")
        if not set(self.digits) <= set(range(10)) or not self.digits:
            out.append("task.digits must be a nonempty subset of 0..9")
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self, name) < 0:
                out.append(f"task.{name} must be >= 0")
        return out


def binarize(images: np.ndarray, config: MnistConfig = MnistConfig()) -> np.ndarray:
    """Center-crop, mean-pool and threshold to ``(N, size, size)`` bits."""
    images = np.asarray(images, dtype=np.float64) / 255.0
    n, rows, cols = images.shape
    r0 = (rows - config.crop) // 2
    c0 = (cols - config.crop) // 2
    crop = images[:, r0:r0 + config.crop, c0:c0 + config.crop]
    f = config.crop // config.size
    pooled = crop.reshape(n, config.size, f, config.size, f).mean(axis=(2, 4))
    return (pooled >= config.threshold).astype(np.uint8)


def scanline_words(bits: np.ndarray) -> np.ndarray:
    """Per step ``t``: row-major pixel ``t`` in bit 0, column-major in bit 1."""
    return bits.reshape(len(bits), -1) | (bits.transpose(0, 2, 1).reshape(len(bits), -1) << 1)


def label_words(label: int, io_bits: int, label_bits: int = 4) -> tuple[int, ...]:
    steps = math.ceil(label_bits / io_bits)
    mask = (1 << io_bits) - 1
    return tuple((int(label) >> (io_bits * k)) & mask for k in range(steps))


def classification_sample(words: Sequence[int], label: int, io_bits: int = 2,
                          label_bits: int = 4) -> TaskSample:
    lw = label_words(label, io_bits, label_bits)
    targets = (None,) * (len(words) - len(lw)) + lw
    return TaskSample(tuple(int(w) for w in words), targets, label=int(label), label_steps=len(lw))


def preprocess_mnist(raw: MnistRaw, config: MnistConfig = MnistConfig()) -> list[TaskSample]:
    """Classification samples: pixel scanlines in, label on the last steps."""
    words = scanline_words(binarize(raw.images, config))
    return [classification_sample(w, int(lbl), config.io_bits, config.label_bits)
            for w, lbl in zip(words, raw.labels)]


def generative_sample(bits: np.ndarray, digit: int) -> TaskSample:
    """Input the digit, then the row-major pixels; predict the next pixel."""
    pixels = tuple(int(b) for b in bits.reshape(-1))
    return TaskSample((int(digit),) + pixels[:-1], pixels)


def image_from_words(words: Sequence[int], size: int = 10) -> np.ndarray:
    """Row-major bit 0 of each word, as a ``size x size`` 0/1 image."""
    bits = np.array([int(w) & 1 for w in words[:size * size]], dtype=np.uint8)
    if bits.size < size * size:
        bits = np.pad(bits, (0, size * size - bits.size))
    return bits.reshape(size, size)


def write_pgm(path, image: np.ndarray):
    """Binary P5 PGM, maxval 255, with 0/1 pixels mapped to 0/255."""
    img = (np.asarray(image) > 0).astype(np.uint8) * 255
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def duplicate_count(train: Sequence[TaskSample], test: Sequence[TaskSample]) -> int:
    """Test samples whose preprocessed input sequence also occurs in train."""
    seen = {s.inputs for s in train}
    return sum(s.inputs in seen for s in test)


@dataclass
class IngestionReport:
    n_train: int
    n_val: int
    n_test: int
    duplicates: int
    empty_images: int

    def __str__(self):
        return (f"train={self.n_train} val={self.n_val} test={self.n_test} "
                f"train/test duplicates after preprocessing={self.duplicates} "
                f"blank images={self.empty_images}")


def _split(raw_train, raw_test, config):
    problems = config.problems()
    if problems:
        raise ConfigError(problems)
    rng = np.random.default_rng(config.seed)
    keep = np.flatnonzero(np.isin(raw_train.labels, config.digits))
    keep = keep[rng.permutation(keep.size)]
    need = config.n_train + config.n_val
    if need > keep.size:
        raise ConfigError([f"train split needs {need} images of digits {config.digits}, "
                           f"only {keep.size} available"])
    test_keep = np.flatnonzero(np.isin(raw_test.labels, config.digits))
    if config.n_test > test_keep.size:
        raise ConfigError([f"test split needs {config.n_test} images, only {test_keep.size} available"])
    test_keep = test_keep[rng.permutation(test_keep.size)][:config.n_test]
    return (raw_train.select(np.sort(keep[:config.n_train])),
            raw_train.select(np.sort(keep[config.n_train:need])),
            raw_test.select(np.sort(test_keep)))


class _FixedSplitTask(Task):
    def batch(self, rng, n):
        idx = rng.integers(0, len(self.train), size=n)
        return [self.train[i] for i in idx]

    def validation_set(self, n=64, seed=0):
        return list(self.val[:n])

    def test_set(self, n=None, seed=0):
        return list(self.test if n is None else self.test[:n])


class MnistTask(_FixedSplitTask):
    """Pixel-by-pixel classification of binarized 10x10 digits."""

    name = "mnist"

    def __init__(self, raw_train: MnistRaw, raw_test: MnistRaw, config: MnistConfig = MnistConfig()):
        self.config = config
        self.io_bits = config.io_bits
        tr, va, te = _split(raw_train, raw_test, config)
        self.train = preprocess_mnist(tr, config)
        self.val = preprocess_mnist(va, config)
        self.test = preprocess_mnist(te, config)
        blank = int(np.sum(binarize(tr.images, config).reshape(len(tr), -1).sum(axis=1) == 0))
        self.report = IngestionReport(len(self.train), len(self.val), len(self.test),
                                      duplicate_count(self.train, self.test), blank)

    @classmethod
    def from_dir(cls, data_dir, config: MnistConfig = MnistConfig()) -> MnistTask:
        return cls(load_mnist_dir(data_dir, "train"), load_mnist_dir(data_dir, "test"), config)


class MnistGenerativeTask(_FixedSplitTask):
    """Next-pixel prediction of row-major scanlines, primed with the digit."""

    name = "mnist_generate"

    def __init__(self, raw_train: MnistRaw, raw_test: MnistRaw, config: MnistConfig = MnistConfig()):
        if max(config.digits) >= 1 << config.io_bits:
            raise ConfigError([f"digits {config.digits} do not fit {config.io_bits} i/o bits"])
        self.config = config
        self.io_bits = config.io_bits
        tr, va, te = _split(raw_train, raw_test, config)
        self.train = [generative_sample(b, d) for b, d in zip(binarize(tr.images, config), tr.labels)]
        self.val = [generative_sample(b, d) for b, d in zip(binarize(va.images, config), va.labels)]
        self.test = [generative_sample(b, d) for b, d in zip(binarize(te.images, config), te.labels)]

    @classmethod
    def from_dir(cls, data_dir, config: MnistConfig = MnistConfig()) -> MnistGenerativeTask:
        return cls(load_mnist_dir(data_dir, "train"), load_mnist_dir(data_dir, "test"), config)
