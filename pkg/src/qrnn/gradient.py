"""Tape-based reverse-mode differentiation of statevector programs.

A :class:`Program` is a straight-line list of primitives (bit flips,
rotations, neurons, projections, marginals) whose angles may be bound to
slots of a flat parameter vector.  :func:`record` runs it forward and keeps
what the reverse sweep needs: the state before every neuron and projection.
Rotations and flips in between are undone exactly on the way back.

Programs may expose differentiable outputs: the probability of each
projection and the distribution of each marginal.  A loss is any scalar
function of those outputs; :func:`backward` takes its gradient with respect
to the outputs and returns the gradient with respect to every parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ImpossibleOutcomeError, LaneError, ParameterError
from .kernels import backend as _k
from .kernels import opcodes as op
from .neuron import amplitude_pair, monomial_matrix, param_count
from .statevector import (
    DEFAULT_FLOOR,
    StateVector,
    check_lanes,
    lanes_mask_value,
    new_basis,
    pair_branch_map,
    word_to_int,
)


class ParameterRegistry:
    """Named blocks of a flat parameter vector."""

    def __init__(self):
        self._blocks: dict[str, slice] = {}
        self.size = 0

    def add(self, name: str, size: int = 1) -> slice:
        if name in self._blocks:
            raise ParameterError(f"parameter block {name!r} already registered")
        block = slice(self.size, self.size + size)
        self._blocks[name] = block
        self.size += size
        return block

    def __getitem__(self, name: str) -> slice:
        try:
            return self._blocks[name]
        except KeyError:
            raise ParameterError(f"unregistered parameter {name!r}") from None

    def __contains__(self, name):
        return name in self._blocks

    def names(self):
        return list(self._blocks)

    def slot(self, ref) -> int:
        """Resolve ``name``, ``(name, offset)`` or an integer slot."""
        if isinstance(ref, (int, np.integer)):
            if not 0 <= ref < self.size:
                raise ParameterError(f"parameter slot {ref} out of range")
            return int(ref)
        if isinstance(ref, tuple):
            name, offset = ref
            block = self[name]
            if not 0 <= offset < block.stop - block.start:
                raise ParameterError(f"offset {offset} outside block {name!r}")
            return block.start + offset
        block = self[ref]
        return block.start


@dataclass(frozen=True)
class NeuronBinding:
    controls: tuple[int, ...]
    target: int
    degree: int
    order: int
    start: int

    @property
    def size(self):
        return param_count(len(self.controls), self.degree)


@dataclass(frozen=True)
class OutputSlot:
    kind: str
    offset: int
    size: int


class Program:
    """Builder for a straight-line statevector program."""

    def __init__(self, num_lanes: int, registry: ParameterRegistry | None = None):
        self.num_lanes = num_lanes
        self.registry = registry if registry is not None else ParameterRegistry()
        self.rows: list[tuple[int, int, int, int, int, int]] = []
        self.aux: list[int] = []
        self.consts: list[float] = []
        self.neurons: list[NeuronBinding] = []
        self.outputs: list[OutputSlot] = []
        self._n_out = 0
        self._n_ckpt = 0

    def __len__(self):
        return len(self.rows)

    def _lane(self, lane):
        return check_lanes(self.num_lanes, (lane,))[0]

    def bitflip(self, lane: int) -> Program:
        self.rows.append((op.FLIP, self._lane(lane), 0, 0, 0, 0))
        return self

    def rotation(self, lane: int, param=None, angle: float | None = None) -> Program:
        """Rotation bound to a parameter slot, or by a constant ``angle``."""
        if (param is None) == (angle is None):
            raise ValueError("give exactly one of param or angle")
        if param is not None:
            ref = self.registry.slot(param)
        else:
            self.consts.append(float(angle))
            ref = -len(self.consts)
        self.rows.append((op.ROT, self._lane(lane), ref, 0, 0, 0))
        return self

    def neuron(self, controls: Sequence[int], target: int, degree: int, order: int,
               param) -> Program:
        """Effective neuron whose parameters start at the given slot or block."""
        controls = check_lanes(self.num_lanes, controls)
        target = self._lane(target)
        if target in controls:
            raise LaneError(f"target lane {target} is also a control")
        start = self.registry.slot(param)
        binding = NeuronBinding(controls, target, degree, order, start)
        if start + binding.size > self.registry.size:
            raise ParameterError("neuron parameters run past the registry")
        self.neurons.append(binding)
        self.rows.append((op.NEURON, len(self.neurons) - 1, 0, 0, 0, self._n_ckpt))
        self._n_ckpt += 1
        return self

    def project(self, lanes: Sequence[int], outcome) -> int:
        """Postselect; returns the output index of the (differentiable) probability."""
        lanes = check_lanes(self.num_lanes, lanes)
        mask, value = lanes_mask_value(lanes, word_to_int(outcome))
        self.outputs.append(OutputSlot("probability", self._n_out, 1))
        self.rows.append((op.PROJECT, mask, value, self._n_out, 0, self._n_ckpt))
        self._n_out += 1
        self._n_ckpt += 1
        return len(self.outputs) - 1

    def marginal(self, lanes: Sequence[int], ce_target: int = -1) -> int:
        """Record the distribution over ``lanes``; returns its output index."""
        lanes = check_lanes(self.num_lanes, lanes)
        size = 1 << len(lanes)
        self.outputs.append(OutputSlot("distribution", self._n_out, size))
        self.rows.append((op.MARGINAL, len(self.aux), len(lanes), self._n_out, ce_target, 0))
        self.aux.extend(lanes)
        self._n_out += size
        return len(self.outputs) - 1

    def reset(self, lanes: Sequence[int], known) -> Program:
        """Flip lanes known to hold ``known`` back to zero."""
        value = word_to_int(known)
        for j, lane in enumerate(check_lanes(self.num_lanes, lanes)):
            if (value >> j) & 1:
                self.bitflip(lane)
        return self

    def sample(self, *args, **kwargs):
        raise ParameterError("sampling is not differentiable and cannot be recorded")

    def compile(self) -> CompiledProgram:
        ops = np.array(self.rows, dtype=np.int64).reshape(-1, op.WIDTH)
        return CompiledProgram(
            num_lanes=self.num_lanes,
            ops=ops,
            aux=np.array(self.aux, dtype=np.int64),
            consts=np.array(self.consts, dtype=np.float64),
            neurons=tuple(self.neurons),
            outputs=tuple(self.outputs),
            n_ckpt=self._n_ckpt,
            n_out=self._n_out,
            n_params=self.registry.size,
        )


@dataclass(frozen=True)
class CompiledProgram:
    num_lanes: int
    ops: np.ndarray
    aux: np.ndarray
    consts: np.ndarray
    neurons: tuple[NeuronBinding, ...]
    outputs: tuple[OutputSlot, ...]
    n_ckpt: int
    n_out: int
    n_params: int


@dataclass
class NeuronTables:
    """Per-branch neuron amplitudes for one parameter vector.

    ``bmap[k]`` maps each amplitude pair of neuron ``k``'s target to a global
    index into ``alpha``/``beta``.
    """

    target: np.ndarray
    bmap: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    dalpha_deta: np.ndarray
    dbeta_deta: np.ndarray
    offsets: np.ndarray

    @classmethod
    def build(cls, num_lanes, neurons, params, bmaps=None):
        sizes = [1 << len(nb.controls) for nb in neurons]
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        total = int(offsets[-1])
        alpha = np.empty(total)
        beta = np.empty(total)
        dal = np.empty(total)
        dbe = np.empty(total)
        for k, nb in enumerate(neurons):
            mono = monomial_matrix(len(nb.controls), nb.degree)
            eta = mono @ params[nb.start:nb.start + mono.shape[1]]
            lo, hi = offsets[k], offsets[k + 1]
            alpha[lo:hi], beta[lo:hi], dal[lo:hi], dbe[lo:hi] = amplitude_pair(eta, nb.order)
        if bmaps is None:
            bmaps = branch_maps(num_lanes, neurons)
        target = np.array([nb.target for nb in neurons], dtype=np.int64)
        return cls(target, bmaps, alpha, beta, dal, dbe, offsets)

    def param_gradient(self, neurons, dalpha, dbeta, n_params, out=None):
        """Chain per-branch amplitude gradients through eta to the parameters."""
        grad = np.zeros(n_params) if out is None else out
        deta = dalpha * self.dalpha_deta + dbeta * self.dbeta_deta
        for k, nb in enumerate(neurons):
            mono = monomial_matrix(len(nb.controls), nb.degree)
            grad[nb.start:nb.start + mono.shape[1]] += mono.T @ deta[self.offsets[k]:self.offsets[k + 1]]
        return grad


def branch_maps(num_lanes, neurons):
    sizes = [1 << len(nb.controls) for nb in neurons]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    bmap = np.zeros((max(len(neurons), 1), 1 << (num_lanes - 1)), dtype=np.int64)
    for k, nb in enumerate(neurons):
        bmap[k] = offsets[k] + pair_branch_map(num_lanes, nb.target, nb.controls)
    return bmap


@dataclass
class Tape:
    program: CompiledProgram
    params: np.ndarray
    tables: NeuronTables
    initial: np.ndarray
    final: np.ndarray
    checkpoints: np.ndarray
    values: np.ndarray
    events: np.ndarray
    floor: float = DEFAULT_FLOOR
    _replay: bool = field(default=False, repr=False)

    def __len__(self):
        return len(self.program.ops)

    @property
    def outputs(self) -> list:
        """Recorded output values: floats for projections, arrays for marginals."""
        out = []
        for slot in self.program.outputs:
            v = self.values[slot.offset:slot.offset + slot.size]
            out.append(float(v[0]) if slot.kind == "probability" else v.copy())
        return out

    def postselection_events(self) -> list[tuple[str, float]]:
        codes = self.program.ops[:, 0]
        tags = {op.NEURON: "neuron", op.PROJECT: "output"}
        return [(tags[c], float(p)) for c, p in zip(codes, self.events) if c in tags]

    def replay(self) -> StateVector:
        state, _ = record(self.program, self.params, StateVector(self.program.num_lanes, self.initial),
                          floor=self.floor)
        return state


def _as_compiled(program):
    return program.compile() if isinstance(program, Program) else program


def record(program, params=None, initial: StateVector | None = None,
           floor: float = DEFAULT_FLOOR) -> tuple[StateVector, Tape]:
    """Run ``program`` forward from ``initial`` (default all zeros)."""
    prog = _as_compiled(program)
    params = np.zeros(prog.n_params) if params is None else np.asarray(params, dtype=np.float64)
    if params.shape != (prog.n_params,):
        raise ParameterError(f"expected {prog.n_params} parameters, got shape {params.shape}")
    if initial is None:
        initial = new_basis(prog.num_lanes, 0)
    if initial.num_lanes != prog.num_lanes:
        raise LaneError("initial state lane count does not match the program")
    tables = NeuronTables.build(prog.num_lanes, prog.neurons, params)
    state = initial.amplitudes.copy()
    ckpt = np.empty((prog.n_ckpt, state.size))
    values = np.zeros(prog.n_out)
    events = np.ones(len(prog.ops))
    status = _k.forward(prog.ops, prog.aux, params, prog.consts, tables.target, tables.bmap,
                        tables.alpha, tables.beta, state, ckpt, values, events, floor, True)
    if status != op.OK:
        raise ImpossibleOutcomeError(
            f"op {status} ({op.NAMES[int(prog.ops[status, 0])]}) has probability "
            f"{events[status]:.3g} < {floor:g}", float(events[status]))
    tape = Tape(prog, params.copy(), tables, initial.amplitudes.copy(), state.copy(),
                ckpt, values, events, floor)
    return StateVector(prog.num_lanes, state), tape


def _flatten_loss_gradient(tape, loss_gradient):
    prog = tape.program
    if len(loss_gradient) != len(prog.outputs):
        raise ValueError(f"expected {len(prog.outputs)} output gradients, got {len(loss_gradient)}")
    flat = np.zeros(prog.n_out)
    for slot, g in zip(prog.outputs, loss_gradient):
        if g is None:
            continue
        g = np.atleast_1d(np.asarray(g, dtype=np.float64))
        if g.shape != (slot.size,):
            raise ValueError(f"{slot.kind} output needs gradient of shape ({slot.size},), got {g.shape}")
        flat[slot.offset:slot.offset + slot.size] = g
    return flat


def backward(tape: Tape, loss_gradient: Sequence) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. every registered parameter.

    ``loss_gradient[j]`` is dL/d(output j): a float for a projection
    probability, an array for a distribution, or ``None`` for no dependence.
    """
    prog = tape.program
    grad_out = _flatten_loss_gradient(tape, loss_gradient)
    grad = np.zeros(prog.n_params)
    dalpha = np.zeros(tape.tables.alpha.size)
    dbeta = np.zeros(tape.tables.beta.size)
    _k.backward(prog.ops, prog.aux, tape.params, prog.consts, tape.tables.target, tape.tables.bmap,
                tape.tables.alpha, tape.tables.beta, tape.final.copy(), tape.checkpoints,
                tape.events, grad_out, grad, dalpha, dbeta)
    tape.tables.param_gradient(prog.neurons, dalpha, dbeta, prog.n_params, out=grad)
    return grad


Loss = Callable[[list], tuple[float, list]]


@dataclass
class FiniteDifferenceReport:
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def deviation(self) -> np.ndarray:
        return np.abs(self.analytic - self.numeric)

    @property
    def max_abs(self) -> float:
        return float(self.deviation.max()) if self.deviation.size else 0.0

    @property
    def max_rel(self) -> float:
        """Largest ``|delta| / |numeric|`` over entries with ``|numeric| > 1e-6``."""
        big = np.abs(self.numeric) > 1e-6
        if not np.any(big):
            return 0.0
        return float(np.max(self.deviation[big] / np.abs(self.numeric[big])))

    def passed(self, atol: float, rtol: float) -> bool:
        return bool(np.all(self.deviation <= atol + rtol * np.abs(self.numeric)))

    def __len__(self):
        return self.analytic.size


def finite_difference_check(program, loss: Loss, params=None, step: float = 1e-4,
                            initial: StateVector | None = None) -> FiniteDifferenceReport:
    """Compare reverse-mode gradients against central differences.

    ``loss(outputs)`` returns ``(value, d value / d outputs)``.
    """
    prog = _as_compiled(program)
    params = np.zeros(prog.n_params) if params is None else np.asarray(params, dtype=np.float64)
    _, tape = record(prog, params, initial)
    _, grads = loss(tape.outputs)
    analytic = backward(tape, grads)
    numeric = np.zeros_like(params)
    for i in range(params.size):
        shifted = params.copy()
        shifted[i] += step
        _, t_plus = record(prog, shifted, initial)
        shifted[i] -= 2 * step
        _, t_minus = record(prog, shifted, initial)
        numeric[i] = (loss(t_plus.outputs)[0] - loss(t_minus.outputs)[0]) / (2 * step)
    return FiniteDifferenceReport(analytic, numeric)
