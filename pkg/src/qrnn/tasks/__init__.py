"""Datasets and sequence tasks."""

from __future__ import annotations

from .base import Task, TaskSample, TokenCodec, stream_rng
from .mnist import (
    MnistConfig,
    MnistGenerativeTask,
    MnistRaw,
    MnistTask,
    load_mnist_idx,
    preprocess_mnist,
)
from .reduction import (
    EmbeddingTask,
    Standardizer,
    discretize,
    load_embedding_csv,
    pca_apply,
    pca_fit,
)
from .synthetic import (
    DnaTask,
    MemorizeTask,
    WordsTask,
    XorTask,
    gen_dna,
    gen_memorize,
    gen_words,
    gen_xor,
)

SYNTHETIC = {"memorize": MemorizeTask, "xor": XorTask, "words": WordsTask, "dna": DnaTask}
TASK_NAMES = tuple(SYNTHETIC) + ("mnist", "mnist_generate", "embedding")


def build_task(spec: dict, data_dir=None) -> Task:
    """Task from a config mapping ``{"name": ..., <task parameters>}``."""
    from dataclasses import fields
    from pathlib import Path

    from ..errors import ConfigError

    params = dict(spec)
    name = params.pop("name", None)
    if name in SYNTHETIC:
        try:
            return SYNTHETIC[name](**params)
        except (TypeError, ValueError) as exc:
            raise ConfigError([f"task: {exc}"]) from None
    if name in ("mnist", "mnist_generate"):
        if data_dir is None:
            raise ConfigError(["paths.data_dir is required for MNIST tasks"])
        known = {f.name for f in fields(MnistConfig)}
        unknown = set(params) - known
        if unknown:
            raise ConfigError([f"task.{k} is not an MNIST option" for k in sorted(unknown)])
        if "digits" in params:
            params["digits"] = tuple(params["digits"])
        cfg = MnistConfig(**params)
        cls = MnistTask if name == "mnist" else MnistGenerativeTask
        return cls.from_dir(data_dir, cfg)
    if name == "embedding":
        path = params.pop("path", None)
        if path is None:
            raise ConfigError(["task.path is required for the embedding task"])
        if data_dir is not None and not Path(path).is_absolute():
            path = Path(data_dir) / path
        if "digits" in params:
            params["digits"] = tuple(params["digits"])
        return EmbeddingTask(load_embedding_csv(path), **params)
    raise ConfigError([f"task.name must be one of {', '.join(TASK_NAMES)} (got {name!r})"])
