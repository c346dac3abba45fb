"""Real-amplitude statevectors and the primitive transformations on them.

Lane ``b`` of a basis index ``i`` is bit ``b`` of ``i`` (lane 0 is the least
significant bit).  Bit words are sequences of 0/1 where entry ``j`` belongs to
the ``j``-th listed lane; plain integers are accepted wherever a word is, and
are read little-endian in the same way.

Every public operation returns a new :class:`StateVector`; the input is left
untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import CapacityError, EntangledLanesError, ImpossibleOutcomeError, LaneError
from .kernels import backend as _k

MAX_LANES = 24
DEFAULT_FLOOR = 1e-12

Word = Sequence[int] | int


def word_to_int(word: Word) -> int:
    if isinstance(word, (int, np.integer)):
        return int(word)
    value = 0
    for j, bit in enumerate(word):
        if bit not in (0, 1):
            raise ValueError(f"bit word entries must be 0 or 1, got {bit!r}")
        value |= int(bit) << j
    return value


def int_to_word(value: int, width: int) -> tuple[int, ...]:
    return tuple((int(value) >> j) & 1 for j in range(width))


@dataclass
class StateVector:
    num_lanes: int
    amplitudes: np.ndarray

    def __post_init__(self):
        _check_capacity(self.num_lanes)
        self.amplitudes = np.ascontiguousarray(self.amplitudes, dtype=np.float64)
        if self.amplitudes.shape != (1 << self.num_lanes,):
            raise ValueError(
                f"expected {1 << self.num_lanes} amplitudes, got shape {self.amplitudes.shape}")

    def copy(self) -> StateVector:
        return StateVector(self.num_lanes, self.amplitudes.copy())

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.amplitudes, self.amplitudes)))

    def __len__(self):
        return self.amplitudes.size


def _check_capacity(num_lanes):
    if not isinstance(num_lanes, (int, np.integer)) or num_lanes < 1 or num_lanes > MAX_LANES:
        raise CapacityError(f"lane count must be in [1, {MAX_LANES}], got {num_lanes!r}")


def check_lanes(num_lanes: int, lanes: Sequence[int]) -> tuple[int, ...]:
    lanes = tuple(int(x) for x in lanes)
    for lane in lanes:
        if lane < 0 or lane >= num_lanes:
            raise LaneError(f"lane {lane} out of range for {num_lanes} lanes")
    if len(set(lanes)) != len(lanes):
        raise LaneError(f"duplicate lanes in {lanes}")
    return lanes


def _check_lane(state, lane):
    check_lanes(state.num_lanes, (lane,))
    return int(lane)


def lanes_mask_value(lanes: Sequence[int], outcome: int) -> tuple[int, int]:
    """Index-space mask and value selecting ``outcome`` on ``lanes``."""
    mask = 0
    value = 0
    for j, lane in enumerate(lanes):
        mask |= 1 << lane
        value |= ((outcome >> j) & 1) << lane
    return mask, value


def pair_branch_map(num_lanes: int, target: int, controls: Sequence[int]) -> np.ndarray:
    """Control word of every amplitude pair along ``target``.

    Entry ``j`` belongs to the pair whose target-bit-0 index is ``j`` with a
    zero bit inserted at position ``target``.
    """
    j = np.arange(1 << (num_lanes - 1), dtype=np.int64)
    low = (1 << target) - 1
    i0 = ((j >> target) << (target + 1)) | (j & low)
    word = np.zeros_like(j)
    for pos, lane in enumerate(controls):
        word |= ((i0 >> lane) & 1) << pos
    return word


def new_basis(num_lanes: int, bits: Word) -> StateVector:
    _check_capacity(num_lanes)
    if not isinstance(bits, (int, np.integer)) and len(bits) != num_lanes:
        raise ValueError(f"expected {num_lanes} bits, got {len(bits)}")
    index = word_to_int(bits)
    if index >= 1 << num_lanes:
        raise ValueError(f"basis index {index} does not fit in {num_lanes} lanes")
    amps = np.zeros(1 << num_lanes)
    amps[index] = 1.0
    return StateVector(num_lanes, amps)


def apply_rotation(state: StateVector, target: int, theta: float) -> StateVector:
    """``R(theta)|0> = cos(theta)|0> + sin(theta)|1>`` on one lane."""
    lane = _check_lane(state, target)
    out = state.copy()
    _k.rotate(out.amplitudes, lane, float(np.cos(theta)), float(np.sin(theta)))
    return out


def apply_bitflip(state: StateVector, target: int) -> StateVector:
    lane = _check_lane(state, target)
    out = state.copy()
    _k.flip(out.amplitudes, lane)
    return out


def branch_tables(branch_map, n_controls):
    """Evaluate a branch map into ``(alpha, beta) = w * (cos f, sin f)`` arrays."""
    if callable(branch_map):
        pairs = [branch_map(x) for x in range(1 << n_controls)]
        scale = np.array([float(w) for w, _ in pairs])
        angle = np.array([float(f) for _, f in pairs])
    else:
        scale, angle = (np.asarray(v, dtype=np.float64) for v in branch_map)
        if scale.shape != (1 << n_controls,) or angle.shape != scale.shape:
            raise ValueError("branch tables must have one entry per control word")
    if np.any(scale < 0):
        raise ValueError("branch scales must be non-negative")
    return scale * np.cos(angle), scale * np.sin(angle)


def apply_branchwise_rotation(
    state: StateVector,
    target: int,
    controls: Sequence[int],
    branch_map: Callable[[int], tuple[float, float]] | tuple[np.ndarray, np.ndarray],
) -> StateVector:
    """Apply ``w(x) R(f(x))`` to ``target`` in every control branch ``x``.

    ``branch_map`` is either a callable from the integer control word to
    ``(w, f)`` or a pair of arrays ``(w, f)`` indexed by control word.  No
    renormalization happens here.
    """
    lane = _check_lane(state, target)
    controls = check_lanes(state.num_lanes, controls)
    if lane in controls:
        raise LaneError(f"target lane {lane} is also a control")
    alpha, beta = branch_tables(branch_map, len(controls))
    bmap = pair_branch_map(state.num_lanes, lane, controls)
    out = state.copy()
    _k.branch_rotate(out.amplitudes, lane, bmap, alpha, beta)
    return out


def project(state: StateVector, lanes: Sequence[int], outcome: Word,
            floor: float = DEFAULT_FLOOR) -> tuple[StateVector, float]:
    """Postselect ``lanes`` on ``outcome``; returns the renormalized state and
    the pre-renormalization probability."""
    lanes = check_lanes(state.num_lanes, lanes)
    value = word_to_int(outcome)
    if not isinstance(outcome, (int, np.integer)) and len(outcome) != len(lanes):
        raise ValueError("outcome width does not match lane count")
    mask, val = lanes_mask_value(lanes, value)
    out = state.copy()
    p = _k.project(out.amplitudes, mask, val)
    if p < floor:
        raise ImpossibleOutcomeError(
            f"outcome {value} on lanes {lanes} has probability {p:.3g} < {floor:g}", p)
    return out, float(p)


def marginal(state: StateVector, lanes: Sequence[int]) -> np.ndarray:
    lanes = check_lanes(state.num_lanes, lanes)
    return np.asarray(_k.marginal(state.amplitudes, np.array(lanes, dtype=np.int64)))


def reset_lanes(state: StateVector, lanes: Sequence[int], known: Word,
                tol: float = 1e-9) -> StateVector:
    """Relabel lanes known to hold the basis word ``known`` back to zeros."""
    lanes = check_lanes(state.num_lanes, lanes)
    value = word_to_int(known)
    mask, val = lanes_mask_value(lanes, value)
    idx = np.arange(state.amplitudes.size)
    off = (idx & mask) != val
    stray = float(np.dot(state.amplitudes[off], state.amplitudes[off]))
    if stray > tol:
        raise EntangledLanesError(
            f"lanes {lanes} are not in |{value}>: weight {stray:.3g} elsewhere")
    out = state.copy()
    for j, lane in enumerate(lanes):
        if (value >> j) & 1:
            _k.flip(out.amplitudes, lane)
    return out
