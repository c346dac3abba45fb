"""The recurrent cell, the unrolled model and its parameters.

Lanes ``0..H-1`` hold the workspace (the recurrent state) and lanes
``H..H+I-1`` the input/output word, with word bit ``j`` on lane ``H + j``.
One cell step:

1. flip the i/o lanes to the input word;
2. input stage: neuron per workspace lane, controlled by the i/o lanes;
3. ``S`` work stages: ``R(phi)`` on every workspace lane, then a neuron per
   workspace lane controlled by the other workspace lanes and the i/o lanes;
4. flip the i/o lanes back to zero;
5. if the step has a target: output neuron per i/o lane controlled by the
   workspace, read the i/o distribution, postselect (or sample) a word and
   flip it back out.

Training runs compile a whole sequence into one opcode program (see
:mod:`qrnn.kernels`); :func:`cell_step` is the eager, step-at-a-time path
that also supports sampling.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import CheckpointError, ConfigError, ImpossibleOutcomeError, LaneError
from .gradient import CompiledProgram, NeuronBinding, NeuronTables, OutputSlot, branch_maps
from .kernels import backend as _k
from .kernels import opcodes as op
from .neuron import NeuronSpec, param_count
from .statevector import DEFAULT_FLOOR, MAX_LANES, StateVector, new_basis

FORMAT_VERSION = 1


@dataclass(frozen=True)
class CellTopology:
    H: int
    I: int
    S: int
    d: int
    ord: int = 2

    def __post_init__(self):
        problems = [f"{k} must be >= 1 (got {v})" for k, v in asdict(self).items()
                    if not isinstance(v, (int, np.integer)) or v < 1]
        if problems:
            raise ConfigError(problems)
        if self.H + self.I > MAX_LANES:
            raise ConfigError([f"H + I = {self.H + self.I} exceeds {MAX_LANES} lanes"])

    @property
    def num_lanes(self) -> int:
        return self.H + self.I

    @property
    def workspace(self) -> tuple[int, ...]:
        return tuple(range(self.H))

    @property
    def io_lanes(self) -> tuple[int, ...]:
        return tuple(range(self.H, self.H + self.I))

    def stage_controls(self, h: int) -> tuple[int, ...]:
        return tuple(l for l in self.workspace if l != h) + self.io_lanes

    @property
    def group_shapes(self) -> dict[str, tuple[int, ...]]:
        H, I, S, d = self.H, self.I, self.S, self.d
        return {
            "input_neurons": (H, param_count(I, d)),
            "stage_rotations": (S, H),
            "stage_neurons": (S, H, param_count(H - 1 + I, d)),
            "output_neurons": (I, param_count(H, d)),
        }

    def shape_str(self) -> str:
        return f"H={self.H} I={self.I} S={self.S} d={self.d} ord={self.ord}"


GROUPS = ("input_neurons", "stage_rotations", "stage_neurons", "output_neurons")


def parameter_count(topology: CellTopology) -> int:
    return sum(math.prod(s) for s in topology.group_shapes.values())


@dataclass(frozen=True)
class InitConfig:
    bias_mean: float = math.pi / 4
    bias_sigma: float = 0.1
    weight_sigma: float = 0.1
    unitary_sigma: float = 0.1

    def __post_init__(self):
        bad = [f"init.{k} must be >= 0" for k in ("bias_sigma", "weight_sigma", "unitary_sigma")
               if not getattr(self, k) >= 0]
        if bad:
            raise ConfigError(bad)


class ParameterSet:
    """Flat parameter vector with structured views of the four groups.

    Flat layout, group after group: input neurons ``(H, D_in)``, stage
    rotations ``(S, H)``, stage neurons ``(S, H, D_stage)``, output neurons
    ``(I, D_out)``.  Each neuron's row starts with its bias.
    """

    def __init__(self, topology: CellTopology, flat=None):
        self.topology = topology
        n = parameter_count(topology)
        self.flat = np.zeros(n) if flat is None else np.array(flat, dtype=np.float64)
        if self.flat.shape != (n,):
            raise ConfigError([f"expected {n} parameters, got shape {self.flat.shape}"])
        self.slices = {}
        start = 0
        for name in GROUPS:
            size = math.prod(topology.group_shapes[name])
            self.slices[name] = slice(start, start + size)
            start += size

    def group(self, name: str) -> np.ndarray:
        """Writable view of one group in its structured shape."""
        return self.flat[self.slices[name]].reshape(self.topology.group_shapes[name])

    @property
    def groups(self) -> dict[str, np.ndarray]:
        return {name: self.group(name) for name in GROUPS}

    @classmethod
    def from_groups(cls, topology: CellTopology, groups: dict) -> ParameterSet:
        shapes = topology.group_shapes
        parts = []
        for name in GROUPS:
            arr = np.asarray(groups[name], dtype=np.float64)
            if arr.shape != shapes[name]:
                raise ConfigError([f"group {name} has shape {arr.shape}, expected {shapes[name]}"])
            parts.append(arr.ravel())
        return cls(topology, np.concatenate(parts))

    def bias_mask(self) -> np.ndarray:
        mask = np.zeros(self.flat.size, dtype=bool)
        for name in ("input_neurons", "stage_neurons", "output_neurons"):
            view = mask[self.slices[name]].reshape(self.topology.group_shapes[name])
            view[..., 0] = True
        return mask

    def neuron_mask(self) -> np.ndarray:
        mask = np.ones(self.flat.size, dtype=bool)
        mask[self.slices["stage_rotations"]] = False
        return mask

    def neuron_specs(self) -> list[NeuronSpec]:
        """All neurons in application order, as standalone specs."""
        t = self.topology
        specs = []
        for b in neuron_bindings(t):
            specs.append(NeuronSpec(b.controls, b.target, b.degree, b.order,
                                    self.flat[b.start:b.start + b.size]))
        return specs

    def copy(self) -> ParameterSet:
        return ParameterSet(self.topology, self.flat.copy())


def neuron_bindings(t: CellTopology) -> tuple[NeuronBinding, ...]:
    """Neurons in flat-parameter order: input, stage (s, h), output."""
    ps_slices = ParameterSet(t).slices
    out = []
    d_in = param_count(t.I, t.d)
    start = ps_slices["input_neurons"].start
    for h in range(t.H):
        out.append(NeuronBinding(t.io_lanes, h, t.d, t.ord, start + h * d_in))
    d_st = param_count(t.H - 1 + t.I, t.d)
    start = ps_slices["stage_neurons"].start
    for s in range(t.S):
        for h in range(t.H):
            out.append(NeuronBinding(t.stage_controls(h), h, t.d, t.ord,
                                     start + (s * t.H + h) * d_st))
    d_out = param_count(t.H, t.d)
    start = ps_slices["output_neurons"].start
    for i in range(t.I):
        out.append(NeuronBinding(t.workspace, t.H + i, t.d, t.ord, start + i * d_out))
    return tuple(out)


def init_parameters(topology: CellTopology, init: InitConfig = InitConfig(),
                    seed: int = 0) -> ParameterSet:
    ps = ParameterSet(topology)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(ps.flat.size)
    bias = ps.bias_mask()
    neuron = ps.neuron_mask()
    ps.flat[bias] = init.bias_mean + init.bias_sigma * noise[bias]
    weights = neuron & ~bias
    ps.flat[weights] = init.weight_sigma * noise[weights]
    ps.flat[~neuron] = init.unitary_sigma * noise[~neuron]
    return ps


# -- overhead accounting ------------------------------------------------------


@dataclass
class OverheadMonitor:
    """Postselection probabilities of one run, tagged ``neuron``/``output``."""

    events: list[tuple[str, float]] = field(default_factory=list)

    def add(self, tag: str, p: float):
        self.events.append((tag, float(p)))

    def extend(self, events):
        for tag, p in events:
            self.add(tag, p)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for _, p in self.events])

    @property
    def min_probability(self) -> float:
        return float(self.probabilities.min()) if self.events else 1.0

    @property
    def log_overhead(self) -> float:
        return -0.5 * float(np.sum(np.log(self.probabilities))) if self.events else 0.0

    @property
    def overhead(self) -> float:
        """Estimated amplification cost ``prod p**-0.5`` over all events (inf on overflow)."""
        logo = self.log_overhead
        return math.exp(logo) if logo < 709.0 else math.inf


@dataclass
class StepOutput:
    distribution: Optional[np.ndarray]
    postselect_probability: Optional[float] = None
    sampled_word: Optional[int] = None


# -- the model ----------------------------------------------------------------


def _io_word_mask(t: CellTopology, word: int) -> int:
    return int(word) << t.H


class QrnnModel:
    """Topology plus parameters, with cached program pieces and branch maps."""

    _CACHE_SIZE = 8192

    def __init__(self, topology: CellTopology, params: ParameterSet | None = None,
                 rng_seed: int = 0, step_count: int = 0):
        self.topology = topology
        self.params = ParameterSet(topology) if params is None else params
        if self.params.topology != topology:
            raise ConfigError(["parameter set topology differs from model topology"])
        self.rng_seed = rng_seed
        self.step_count = step_count
        self.bindings = neuron_bindings(topology)
        self._bmaps = None
        self._programs: OrderedDict = OrderedDict()
        self._build_templates()

    @classmethod
    def initialized(cls, topology, init: InitConfig = InitConfig(), seed: int = 0) -> QrnnModel:
        return cls(topology, init_parameters(topology, init, seed), rng_seed=seed)

    @property
    def flat(self) -> np.ndarray:
        return self.params.flat

    def with_flat(self, flat) -> QrnnModel:
        """Same topology and caches, new parameter vector."""
        other = object.__new__(QrnnModel)
        other.__dict__.update(self.__dict__)
        other.params = ParameterSet(self.topology, flat)
        return other

    @property
    def bmaps(self) -> np.ndarray:
        if self._bmaps is None:
            self._bmaps = branch_maps(self.topology.num_lanes, self.bindings)
        return self._bmaps

    def tables(self, flat=None) -> NeuronTables:
        flat = self.flat if flat is None else flat
        return NeuronTables.build(self.topology.num_lanes, self.bindings, flat, self.bmaps)

    # -- compiled programs --------------------------------------------------

    def _build_templates(self):
        t = self.topology
        nid = 0
        rows = []
        for h in range(t.H):
            rows.append((op.NEURON, nid, 0, 0, 0, 0))
            nid += 1
        rot = self.params.slices["stage_rotations"].start
        for s in range(t.S):
            for h in range(t.H):
                rows.append((op.ROT, h, rot + s * t.H + h, 0, 0, 0))
            for h in range(t.H):
                rows.append((op.NEURON, nid, 0, 0, 0, 0))
                nid += 1
        self._body = np.array(rows, dtype=np.int64).reshape(-1, op.WIDTH)
        self._output = np.array([(op.NEURON, nid + i, 0, 0, 0, 0) for i in range(t.I)],
                                dtype=np.int64).reshape(-1, op.WIDTH)
        self._aux = np.array(t.io_lanes, dtype=np.int64)
        self._io_mask = ((1 << t.I) - 1) << t.H

    def _flips(self, word):
        t = self.topology
        lanes = [t.H + j for j in range(t.I) if (word >> j) & 1]
        rows = np.zeros((len(lanes), op.WIDTH), dtype=np.int64)
        rows[:, 0] = op.FLIP
        rows[:, 1] = lanes
        return rows

    def compile(self, inputs: Sequence[int], targets: Sequence[Optional[int]]) -> CompiledProgram:
        """Opcode program of a teacher-forced run (cached per sequence)."""
        key = (tuple(int(x) for x in inputs),
               tuple(-1 if y is None else int(y) for y in targets))
        hit = self._programs.get(key)
        if hit is not None:
            self._programs.move_to_end(key)
            return hit
        prog = self._compile(*key)
        self._programs[key] = prog
        if len(self._programs) > self._CACHE_SIZE:
            self._programs.popitem(last=False)
        return prog

    def _compile(self, inputs, targets):
        t = self.topology
        if len(inputs) != len(targets):
            raise ValueError("inputs and targets differ in length")
        size = 1 << t.I
        pieces = []
        for x, y in zip(inputs, targets):
            if not 0 <= x < size or not -1 <= y < size:
                raise LaneError(f"word out of range for I={t.I}: input {x}, target {y}")
            flips = self._flips(x)
            pieces += [flips, self._body, flips]
            if y >= 0:
                tail = np.zeros((2, op.WIDTH), dtype=np.int64)
                tail[0] = (op.MARGINAL, 0, t.I, 0, y, 0)
                tail[1] = (op.PROJECT, self._io_mask, _io_word_mask(t, y), 0, 0, 0)
                pieces += [self._output, tail, self._flips(y)]
        if pieces:
            ops = np.concatenate(pieces)
        else:
            ops = np.zeros((0, op.WIDTH), dtype=np.int64)
        code = ops[:, 0]
        events = (code == op.NEURON) | (code == op.PROJECT)
        ops[events, 5] = np.arange(int(events.sum()))
        width = np.where(code == op.MARGINAL, size, np.where(code == op.PROJECT, 1, 0))
        offsets = np.cumsum(width) - width
        outs = width > 0
        ops[outs, 3] = offsets[outs]
        ops.setflags(write=False)
        slots = tuple(OutputSlot("distribution" if c == op.MARGINAL else "probability", int(o), int(w))
                      for c, o, w in zip(code[outs], offsets[outs], width[outs]))
        return CompiledProgram(
            num_lanes=t.num_lanes, ops=ops, aux=self._aux, consts=np.zeros(0),
            neurons=self.bindings, outputs=slots, n_ckpt=int(events.sum()),
            n_out=int(width.sum()), n_params=self.flat.size)

    # -- checkpoints ---------------------------------------------------------

    def to_json(self) -> str:
        return _dump_checkpoint(self)

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> QrnnModel:
        return _load_checkpoint(text)

    @classmethod
    def load(cls, path) -> QrnnModel:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        return cls.from_json(text)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _nested(arr) -> str:
    if arr.ndim == 1:
        return "[" + ", ".join(_fmt(v) for v in arr) + "]"
    return "[" + ", ".join(_nested(a) for a in arr) + "]"


def _dump_checkpoint(model: QrnnModel) -> str:
    if not np.all(np.isfinite(model.flat)):
        raise CheckpointError("refusing to save non-finite parameters")
    t = model.topology
    groups = ",\n".join(f'    "{name}": {_nested(model.params.group(name))}' for name in GROUPS)
    return (
        "{\n"
        f'  "format_version": {FORMAT_VERSION},\n'
        f'  "topology": {json.dumps(asdict(t))},\n'
        f'  "groups": {{\n{groups}\n  }},\n'
        f'  "rng_seed": {int(model.rng_seed)},\n'
        f'  "step_count": {int(model.step_count)}\n'
        "}\n"
    )


def _load_checkpoint(text: str) -> QrnnModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    if not isinstance(doc, dict):
        raise CheckpointError("corrupt checkpoint: top level is not an object")
    missing = [k for k in ("format_version", "topology", "groups", "rng_seed", "step_count")
               if k not in doc]
    if missing:
        raise CheckpointError(f"checkpoint missing fields: {', '.join(missing)}")
    if doc["format_version"] != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {doc['format_version']!r}")
    try:
        topology = CellTopology(**doc["topology"])
        params = ParameterSet.from_groups(topology, doc["groups"])
    except (TypeError, KeyError, ValueError, ConfigError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    return QrnnModel(topology, params, rng_seed=int(doc["rng_seed"]),
                     step_count=int(doc["step_count"]))


# -- eager execution ----------------------------------------------------------


def _apply_neuron(model, tables, k, amps, monitor, floor):
    _k.branch_rotate(amps, int(tables.target[k]), tables.bmap[k], tables.alpha, tables.beta)
    p = float(_k.renormalize(amps))
    if p < floor:
        raise ImpossibleOutcomeError(f"neuron {k} success probability {p:.3g} below floor", p)
    monitor.add("neuron", p)


def _io_stray_weight(model, amps, word):
    t = model.topology
    idx = np.arange(amps.size)
    off = (idx & (((1 << t.I) - 1) << t.H)) != (int(word) << t.H)
    return float(np.dot(amps[off], amps[off]))


class Train:
    """Training mode: postselect the i/o lanes on ``target`` (or skip output)."""

    def __init__(self, target: Optional[int] = None):
        self.target = target


class Sample:
    """Inference mode: draw the output word from the distribution."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng


def cell_step(model: QrnnModel, state: StateVector, input_word: int, mode,
              monitor: OverheadMonitor | None = None, tables: NeuronTables | None = None,
              floor: float = DEFAULT_FLOOR) -> tuple[StateVector, StepOutput]:
    t = model.topology
    if state.num_lanes != t.num_lanes:
        raise LaneError(f"state has {state.num_lanes} lanes, model needs {t.num_lanes}")
    monitor = OverheadMonitor() if monitor is None else monitor
    tables = model.tables() if tables is None else tables
    amps = state.amplitudes.copy()
    if _io_stray_weight(model, amps, 0) > 1e-9:
        raise LaneError("i/o lanes are not clean at cell entry")
    input_word = int(input_word)
    if not 0 <= input_word < 1 << t.I:
        raise LaneError(f"input word {input_word} does not fit {t.I} lanes")
    flips = [t.H + j for j in range(t.I) if (input_word >> j) & 1]
    for lane in flips:
        _k.flip(amps, lane)
    k = 0
    for h in range(t.H):
        _apply_neuron(model, tables, k, amps, monitor, floor)
        k += 1
    phi = model.params.group("stage_rotations")
    for s in range(t.S):
        for h in range(t.H):
            _k.rotate(amps, h, math.cos(phi[s, h]), math.sin(phi[s, h]))
        for h in range(t.H):
            _apply_neuron(model, tables, k, amps, monitor, floor)
            k += 1
    for lane in flips:
        _k.flip(amps, lane)
    if isinstance(mode, Train) and mode.target is None:
        return StateVector(t.num_lanes, amps), StepOutput(None)
    for i in range(t.I):
        _apply_neuron(model, tables, k + i, amps, monitor, floor)
    dist = _k.marginal(amps, model._aux)
    if isinstance(mode, Train):
        word = int(mode.target)
        sampled = None
    elif isinstance(mode, Sample):
        cdf = np.cumsum(dist)
        word = int(min(np.searchsorted(cdf, mode.rng.random() * cdf[-1], side="right"),
                       dist.size - 1))
        sampled = word
    else:
        raise TypeError(f"unknown mode {mode!r}")
    p = _k.project(amps, model._io_mask, _io_word_mask(t, word))
    if p < floor:
        raise ImpossibleOutcomeError(f"output word {word} has probability {p:.3g}", p)
    monitor.add("output", p)
    for j in range(t.I):
        if (word >> j) & 1:
            _k.flip(amps, t.H + j)
    return StateVector(t.num_lanes, amps), StepOutput(dist, p, sampled)


def run_sequence(model: QrnnModel, inputs: Sequence[int], targets: Sequence[Optional[int]],
                 mode="train", rng: np.random.Generator | None = None,
                 floor: float = DEFAULT_FLOOR) -> tuple[list[StepOutput], OverheadMonitor]:
    """Fold :func:`cell_step` over a sequence from the all-zero state.

    ``mode="train"`` postselects on the targets; ``mode="sample"`` draws
    every step that carries a target (pass ``rng``).
    """
    if len(inputs) != len(targets):
        raise ValueError("inputs and targets differ in length")
    t = model.topology
    tables = model.tables()
    monitor = OverheadMonitor()
    state = new_basis(t.num_lanes, 0)
    outputs = []
    for x, y in zip(inputs, targets):
        if mode == "train":
            m = Train(y)
        elif y is None:
            m = Train(None)
        else:
            m = Sample(rng)
        state, out = cell_step(model, state, x, m, monitor, tables, floor)
        outputs.append(out)
    return outputs, monitor


def generate(model: QrnnModel, primer: Sequence[int], total_steps: int,
             rng: np.random.Generator) -> list[int]:
    """Sample ``total_steps`` words, feeding each back as the next input
    once the primer is used up."""
    if len(primer) < 1:
        raise ValueError("primer needs at least one word")
    t = model.topology
    tables = model.tables()
    monitor = OverheadMonitor()
    state = new_basis(t.num_lanes, 0)
    words = []
    for step in range(total_steps):
        x = primer[step] if step < len(primer) else words[-1]
        state, out = cell_step(model, state, x, Sample(rng), monitor, tables)
        words.append(out.sampled_word)
    return words
