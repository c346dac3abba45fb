"""Losses, optimizers, batched gradients and the training loop."""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ImpossibleOutcomeError, NonFiniteGradientError
from .kernels import backend as _k
from .kernels import opcodes as op
from .model import InitConfig, QrnnModel, StepOutput
from .statevector import DEFAULT_FLOOR

METRICS_HEADER = ("step", "train_loss", "val_loss", "accuracy", "min_postselect_p", "overhead",
                  "seconds")


def sequence_loss(outputs: Sequence, targets: Sequence[Optional[int]]) -> float:
    """Mean of ``-ln p(target)`` over the steps that carry a target.

    ``outputs`` holds :class:`StepOutput` objects or bare distributions.
    """
    terms = []
    for out, y in zip(outputs, targets):
        if y is None:
            continue
        dist = out.distribution if isinstance(out, StepOutput) else out
        p = float(dist[y])
        if p <= 0.0:
            raise ImpossibleOutcomeError(f"target word {y} has probability {p}", p)
        terms.append(-math.log(p))
    if not terms:
        raise ValueError("no step carries a target")
    return float(np.mean(terms))


# -- optimizers ---------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 0.9
    rms_eps: float = 1e-8

    def problems(self) -> list[str]:
        out = []
        if self.kind not in OPTIMIZERS:
            out.append(f"train.optimizer.kind must be one of {sorted(OPTIMIZERS)} (got {self.kind!r})")
        if not self.learning_rate > 0:
            out.append("train.optimizer.learning_rate must be > 0")
        for name in ("beta1", "beta2", "decay"):
            if not 0 <= getattr(self, name) < 1:
                out.append(f"train.optimizer.{name} must lie in [0, 1)")
        for name in ("eps", "rms_eps"):
            if not getattr(self, name) > 0:
                out.append(f"train.optimizer.{name} must be > 0")
        return out


def _check_finite(grad):
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        raise NonFiniteGradientError(
            f"{bad.size} non-finite gradient entries, first at index {bad[0]} ({grad[bad[0]]})")


class SGD:
    def __init__(self, config: OptimizerConfig, size: int):
        self.lr = config.learning_rate

    def step(self, params, grad):
        _check_finite(grad)
        return params - self.lr * grad


class RMSprop:
    def __init__(self, config: OptimizerConfig, size: int):
        self.lr = config.learning_rate
        self.decay = config.decay
        self.eps = config.rms_eps
        self.sq = np.zeros(size)

    def step(self, params, grad):
        _check_finite(grad)
        self.sq = self.decay * self.sq + (1 - self.decay) * grad * grad
        return params - self.lr * grad / (np.sqrt(self.sq) + self.eps)


class Adam:
    def __init__(self, config: OptimizerConfig, size: int):
        self.lr = config.learning_rate
        self.b1, self.b2, self.eps = config.beta1, config.beta2, config.eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grad):
        _check_finite(grad)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1 ** self.t)
        v_hat = self.v / (1 - self.b2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


OPTIMIZERS = {"sgd": SGD, "rmsprop": RMSprop, "adam": Adam}


def make_optimizer(config: OptimizerConfig, size: int):
    problems = config.problems()
    if problems:
        raise ConfigError(problems)
    return OPTIMIZERS[config.kind](config, size)


def optimizer_step(optimizer, params, grad):
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != np.shape(params):
        raise ValueError(f"gradient shape {grad.shape} does not match parameters {np.shape(params)}")
    return optimizer.step(np.asarray(params, dtype=np.float64), grad)


# -- batched evaluation -------------------------------------------------------


def _exp(logo):
    # overheads of long runs legitimately exceed the float range
    with np.errstate(over="ignore"):
        return np.exp(logo)


def _mean(overheads) -> float:
    with np.errstate(over="ignore"):
        return float(np.mean(overheads))


def _weight(sample) -> float:
    n = sum(y is not None for y in sample.targets)
    return 1.0 / n if n else 0.0


def _unique(samples):
    """First-occurrence order of distinct sequences, and their multiplicities."""
    index = {}
    order = []
    counts = []
    for s in samples:
        key = (tuple(s.inputs), tuple(s.targets))
        if key in index:
            counts[index[key]] += 1
        else:
            index[key] = len(order)
            order.append(s)
            counts.append(1)
    return order, np.array(counts, dtype=np.float64)


def _pack(programs):
    ops = [p.ops for p in programs]
    op_off = np.zeros(len(ops) + 1, dtype=np.int64)
    op_off[1:] = np.cumsum([len(o) for o in ops])
    aux = [p.aux for p in programs]
    aux_off = np.zeros(len(aux) + 1, dtype=np.int64)
    aux_off[1:] = np.cumsum([len(a) for a in aux])
    ops_all = np.concatenate(ops) if ops else np.zeros((0, op.WIDTH), dtype=np.int64)
    aux_all = np.concatenate(aux) if aux else np.zeros(0, dtype=np.int64)
    n_ckpt = np.array([p.n_ckpt for p in programs], dtype=np.int64)
    n_out = np.array([p.n_out for p in programs], dtype=np.int64)
    return np.ascontiguousarray(ops_all), op_off, aux_all, aux_off, n_ckpt, n_out


def _chunks(n, workers):
    workers = max(1, min(workers, n))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _run_chunks(fn, n, workers):
    parts = _chunks(n, workers)
    if len(parts) <= 1:
        return [fn(a, b) for a, b in parts]
    with ThreadPoolExecutor(max_workers=len(parts)) as pool:
        return list(pool.map(lambda ab: fn(*ab), parts))


def _raise_failed(status, samples, events):
    bad = np.flatnonzero(status != op.OK)
    if bad.size:
        k = int(bad[0])
        raise ImpossibleOutcomeError(
            f"sample {k}: postselection at op {int(status[k])} has probability "
            f"{events[k]:.3g}", float(events[k]))


@dataclass
class BatchGradient:
    loss: float
    grad: np.ndarray
    losses: np.ndarray            # per distinct sequence
    overheads: np.ndarray         # per sample, all postselection events
    output_overheads: np.ndarray  # per sample, output events only
    min_p: float


def batch_value_and_grad(model: QrnnModel, samples, workers: int = 1,
                         floor: float = DEFAULT_FLOOR) -> BatchGradient:
    """Mean sequence loss over ``samples`` and its gradient.

    Identical sequences are evaluated once and weighted by multiplicity;
    per-sample results are reduced in a fixed order, so the result does not
    depend on ``workers``.
    """
    unique, counts = _unique(samples)
    programs = [model.compile(s.inputs, s.targets) for s in unique]
    weights = np.array([_weight(s) for s in unique])
    tables = model.tables()
    flat = model.flat
    n_lanes = model.topology.num_lanes

    def work(a, b):
        ops, op_off, aux, aux_off, n_ckpt, n_out = _pack(programs[a:b])
        return _k.batch_value_and_grad(ops, op_off, aux, aux_off, n_ckpt, n_out, weights[a:b],
                                       flat, np.zeros(0), tables.target, tables.bmap,
                                       tables.alpha, tables.beta, n_lanes, floor)

    parts = _run_chunks(work, len(unique), workers)
    status, loss, grads, dal, dbe, logo, minp = (np.concatenate([p[i] for p in parts])
                                                 for i in range(7))
    _raise_failed(status, unique, minp)
    total = counts.sum()
    grad = counts @ grads
    dal_sum = counts @ dal
    dbe_sum = counts @ dbe
    tables.param_gradient(model.bindings, dal_sum, dbe_sum, flat.size, out=grad)
    grad /= total
    expand = np.repeat(np.arange(len(unique)), counts.astype(int))
    # output events have p = distribution[target], so their log-overhead is
    # half the summed (unweighted) cross-entropy
    n_targets = np.array([s.target_steps for s in unique], dtype=np.float64)
    out_logo = 0.5 * loss * n_targets
    return BatchGradient(
        loss=float(counts @ loss / total),
        grad=grad,
        losses=loss,
        overheads=_exp(logo)[expand],
        output_overheads=_exp(out_logo)[expand],
        min_p=float(minp.min()) if minp.size else 1.0,
    )


@dataclass
class ForwardResult:
    losses: np.ndarray            # per sample
    distributions: list           # per sample: (n_target_steps, 2**I)
    overheads: np.ndarray
    min_p: np.ndarray


def batch_forward(model: QrnnModel, samples, workers: int = 1,
                  floor: float = DEFAULT_FLOOR) -> ForwardResult:
    """Teacher-forced forward pass: losses and the distribution at every
    target-bearing step."""
    programs = [model.compile(s.inputs, s.targets) for s in samples]
    weights = np.array([_weight(s) for s in samples])
    tables = model.tables()
    flat = model.flat
    n_lanes = model.topology.num_lanes
    n_out_all = np.array([p.n_out for p in programs], dtype=np.int64)
    out_off = np.zeros(len(programs) + 1, dtype=np.int64)
    out_off[1:] = np.cumsum(n_out_all)

    def work(a, b):
        ops, op_off, aux, aux_off, _, n_out = _pack(programs[a:b])
        local_off = out_off[a:b + 1] - out_off[a]
        return _k.batch_evaluate(ops, op_off, aux, aux_off, n_out, local_off, weights[a:b],
                                 flat, np.zeros(0), tables.target, tables.bmap,
                                 tables.alpha, tables.beta, n_lanes, floor)

    parts = _run_chunks(work, len(samples), workers)
    if parts:
        status, loss, outs, logo, minp = (np.concatenate([p[i] for p in parts]) for i in range(5))
    else:
        status = loss = outs = logo = minp = np.zeros(0)
    _raise_failed(status, samples, minp)
    size = 1 << model.topology.I
    dists = []
    for k, prog in enumerate(programs):
        rows = prog.ops[prog.ops[:, 0] == op.MARGINAL]
        base = out_off[k]
        dists.append(np.array([outs[base + c:base + c + size] for c in rows[:, 3]]).reshape(-1, size))
    return ForwardResult(loss, dists, _exp(logo), minp)


# -- evaluation ---------------------------------------------------------------


@dataclass
class Evaluation:
    accuracy: float
    loss: float
    overhead: float
    min_p: float


def decode_label(dists, label_steps: int, io_bits: int) -> int:
    """Little-endian label from the argmax words of the final label steps.

    ``np.argmax`` returns the first maximum, so ties go to the smaller word.
    """
    label = 0
    for k, dist in enumerate(dists[len(dists) - label_steps:]):
        label |= int(np.argmax(dist)) << (io_bits * k)
    return label


def evaluate(models, samples, workers: int = 1) -> Evaluation:
    """Accuracy and mean loss of one model or a distribution-averaged ensemble."""
    if isinstance(models, QrnnModel):
        models = [models]
    models = list(models)
    shapes = {m.topology for m in models}
    if len(shapes) > 1:
        raise ConfigError(["ensemble topologies differ: " + " vs ".join(t.shape_str() for t in shapes)])
    runs = [batch_forward(m, samples, workers) for m in models]
    io_bits = models[0].topology.I
    losses = []
    correct = 0
    labelled = 0
    for k, s in enumerate(samples):
        dists = sum(r.distributions[k] for r in runs) / len(runs)
        ys = [y for y in s.targets if y is not None]
        if ys:
            losses.append(-np.mean(np.log(dists[np.arange(len(ys)), ys])))
        if s.label is not None:
            labelled += 1
            correct += decode_label(dists, s.label_steps, io_bits) == s.label
    overheads = np.concatenate([r.overheads for r in runs])
    minps = np.concatenate([r.min_p for r in runs])
    return Evaluation(
        accuracy=correct / labelled if labelled else float("nan"),
        loss=float(np.mean(losses)) if losses else float("nan"),
        overhead=_mean(overheads) if overheads.size else 1.0,
        min_p=float(np.min(minps)) if minps.size else 1.0,
    )


# -- training loop ------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    max_steps: int = 500
    validation_threshold: float = 1e-3
    validation_interval: int = 10
    validation_size: int = 64
    seed: int = 0
    init: InitConfig = InitConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    clip_norm: Optional[float] = None
    workers: int = 1
    timing: bool = False

    def problems(self) -> list[str]:
        out = []
        if self.batch_size < 1:
            out.append("train.batch_size must be >= 1")
        if self.max_steps < 0:
            out.append("train.max_steps must be >= 0")
        if not self.validation_threshold > 0:
            out.append("train.validation_threshold must be > 0")
        if self.validation_interval < 1:
            out.append("train.validation_interval must be >= 1")
        if self.validation_size < 1:
            out.append("train.validation_size must be >= 1")
        if self.clip_norm is not None and not self.clip_norm > 0:
            out.append("train.clip_norm must be > 0 when set")
        if self.workers < 1:
            out.append("train.workers must be >= 1")
        return out + self.optimizer.problems()


@dataclass
class MetricsRow:
    step: int
    train_loss: float
    val_loss: float
    accuracy: float
    min_postselect_p: float
    overhead: float
    seconds: float

    def values(self):
        return (self.step, self.train_loss, self.val_loss, self.accuracy, self.min_postselect_p,
                self.overhead, self.seconds)


@dataclass(frozen=True)
class StepRecord:
    """One optimizer step; overheads are batch means of per-sample values."""

    train_loss: float
    overhead: float
    output_overhead: float
    min_p: float


@dataclass
class Metrics:
    rows: list[MetricsRow] = field(default_factory=list)
    history: list[StepRecord] = field(default_factory=list)

    def append(self, row: MetricsRow):
        if self.rows and row.step <= self.rows[-1].step:
            raise ValueError("metrics steps must increase")
        self.rows.append(row)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_HEADER)
            for row in self.rows:
                w.writerow([row.step] + [repr(float(v)) for v in row.values()[1:]])

    @staticmethod
    def read_csv(path) -> list[dict]:
        with open(path, newline="") as fh:
            return [{k: (int(v) if k == "step" else float(v)) for k, v in r.items()}
                    for r in csv.DictReader(fh)]


@dataclass
class TrainResult:
    model: QrnnModel
    metrics: Metrics
    converged: bool
    steps: int

    @property
    def final_val_loss(self) -> float:
        return self.metrics.rows[-1].val_loss


def train(model: QrnnModel, task, config: TrainConfig = TrainConfig(),
          metrics_path=None, log=None) -> TrainResult:
    """Minimize the mean sequence loss on batches drawn from ``task``.

    Validation runs at step 0, every ``validation_interval`` steps and at the
    last step; training stops as soon as the validation loss drops below the
    threshold.  Fully deterministic for a fixed ``config.seed``.
    """
    problems = config.problems()
    if problems:
        raise ConfigError(problems)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    val_set = task.validation_set(config.validation_size, config.seed)
    optimizer = make_optimizer(config.optimizer, model.flat.size)
    metrics = Metrics()
    start = time.perf_counter()
    current = model.with_flat(model.flat.copy())

    def validate(step, train_loss):
        ev = evaluate(current, val_set, config.workers)
        seconds = time.perf_counter() - start if config.timing else float("nan")
        metrics.append(MetricsRow(step, train_loss, ev.loss, ev.accuracy, ev.min_p, ev.overhead,
                                  seconds))
        if metrics_path is not None:
            metrics.write_csv(metrics_path)
        if log is not None:
            log(metrics.rows[-1])
        return ev.loss

    converged = validate(0, float("nan")) < config.validation_threshold
    step = 0
    while not converged and step < config.max_steps:
        step += 1
        batch = task.batch(rng, config.batch_size)
        res = batch_value_and_grad(current, batch, config.workers)
        grad = res.grad
        _check_finite(grad)
        if config.clip_norm is not None:
            norm = float(np.linalg.norm(grad))
            if norm > config.clip_norm:
                grad = grad * (config.clip_norm / norm)
        flat = optimizer.step(current.flat, grad)
        current = current.with_flat(flat)
        metrics.history.append(StepRecord(res.loss, _mean(res.overheads),
                                          _mean(res.output_overheads), res.min_p))
        if step % config.validation_interval == 0 or step == config.max_steps:
            converged = validate(step, res.loss) < config.validation_threshold
    current.step_count = model.step_count + step
    current.rng_seed = model.rng_seed
    return TrainResult(current, metrics, converged, step)
