"""Higher-degree quantum neurons.

A neuron rotates its target lane by a sigmoid-like angle of a degree-``d``
polynomial of its control bits.  Postselected on success, the action on the
target in control branch ``x`` is ``cos(eta)^m Id + sin(eta)^m R(pi/2)`` with
``m = 2**order`` and ``eta = sum_I theta_I prod_{i in I} x_i``, which equals
``w R(f)`` for the success weight ``w`` and activation angle ``f``.

:func:`apply_effective` is the production path.  :func:`build_circuit`
emits the repeat-until-success gate sequence with explicit ancillas and is
only used to cross-check the effective map.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from math import comb
from typing import Sequence

import numpy as np

from .errors import ImpossibleOutcomeError, LaneError, ParameterError
from .kernels import backend as _k
from .statevector import (
    DEFAULT_FLOOR,
    StateVector,
    apply_branchwise_rotation,
    check_lanes,
    pair_branch_map,
    project,
    word_to_int,
)


def param_count(n: int, d: int) -> int:
    if n < 0 or d < 0:
        raise ValueError("control count and degree must be non-negative")
    return sum(comb(n, i) for i in range(min(d, n) + 1))


@lru_cache(maxsize=None)
def subsets(n: int, d: int) -> tuple[tuple[int, ...], ...]:
    """Control subsets in canonical order: by size, then lexicographically."""
    out = []
    for size in range(min(d, n) + 1):
        out.extend(combinations(range(n), size))
    return tuple(out)


@lru_cache(maxsize=None)
def _subset_offsets(n: int, d: int) -> dict:
    return {s: i for i, s in enumerate(subsets(n, d))}


def subset_offset(n: int, d: int, subset: Sequence[int]) -> int:
    key = tuple(sorted(int(i) for i in subset))
    try:
        return _subset_offsets(n, d)[key]
    except KeyError:
        raise ParameterError(f"no parameter for subset {key} with n={n}, d={d}") from None


def offset_subset(n: int, d: int, offset: int) -> tuple[int, ...]:
    return subsets(n, d)[offset]


@lru_cache(maxsize=None)
def monomial_matrix(n: int, d: int) -> np.ndarray:
    """``M[x, k] = 1`` iff the k-th canonical subset is contained in word ``x``.

    ``M @ theta`` evaluates the polynomial on every control word at once.
    """
    subs = subsets(n, d)
    masks = np.array([sum(1 << i for i in s) for s in subs], dtype=np.int64)
    words = np.arange(1 << n, dtype=np.int64)[:, None]
    mat = ((words & masks[None, :]) == masks[None, :]).astype(np.float64)
    mat.setflags(write=False)
    return mat


@dataclass(frozen=True)
class NeuronSpec:
    controls: tuple[int, ...]
    target: int
    degree: int
    order: int
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "controls", tuple(int(c) for c in self.controls))
        if self.degree < 0:
            raise ParameterError("degree must be >= 0")
        if self.order < 1:
            raise ParameterError("order must be >= 1")
        if self.target in self.controls:
            raise LaneError(f"target lane {self.target} is also a control")
        if len(set(self.controls)) != len(self.controls):
            raise LaneError("duplicate control lanes")
        params = np.array(self.params, dtype=np.float64)
        expected = param_count(len(self.controls), self.degree)
        if params.shape != (expected,):
            raise ParameterError(f"expected {expected} parameters, got shape {params.shape}")
        params.setflags(write=False)
        object.__setattr__(self, "params", params)

    @property
    def n(self) -> int:
        return len(self.controls)

    def with_params(self, params) -> NeuronSpec:
        return NeuronSpec(self.controls, self.target, self.degree, self.order, params)


@dataclass
class NeuronApplication:
    state: StateVector
    success_probability: float


def eta(spec: NeuronSpec, x) -> float:
    word = word_to_int(x)
    if not isinstance(x, (int, np.integer)) and len(x) != spec.n:
        raise ValueError(f"expected {spec.n} control bits")
    return float(monomial_matrix(spec.n, spec.degree)[word] @ spec.params)


def eta_table(spec: NeuronSpec) -> np.ndarray:
    return monomial_matrix(spec.n, spec.degree) @ spec.params


def amplitude_pair(eta_values, order):
    """Unnormalized ``(cos(eta)^m, sin(eta)^m)`` and their eta-derivatives."""
    m = 1 << order
    c = np.cos(eta_values)
    s = np.sin(eta_values)
    cm1 = c ** (m - 1)
    sm1 = s ** (m - 1)
    return cm1 * c, sm1 * s, -m * cm1 * s, m * sm1 * c


def activation(eta_value, order: int):
    """``(cos f, sin f)`` for ``f = arctan(tan(eta)^(2^order))``.

    Computed by normalizing the pair of powers, never through ``tan``.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    alpha, beta, _, _ = amplitude_pair(np.asarray(eta_value, dtype=np.float64), order)
    w = np.hypot(alpha, beta)
    return alpha / w, beta / w


def success_weight(eta_value, order: int):
    """Norm of the unnormalized neuron output on a basis target."""
    if order < 1:
        raise ValueError("order must be >= 1")
    alpha, beta, _, _ = amplitude_pair(np.asarray(eta_value, dtype=np.float64), order)
    return np.hypot(alpha, beta)


def min_success_probability(order: int) -> float:
    """Smallest success probability over all angles, reached at eta = pi/4."""
    return 2.0 ** (1 - (1 << order))


def apply_effective(state: StateVector, spec: NeuronSpec,
                    floor: float = DEFAULT_FLOOR) -> NeuronApplication:
    lanes = check_lanes(state.num_lanes, spec.controls + (spec.target,))
    target = lanes[-1]
    alpha, beta, _, _ = amplitude_pair(eta_table(spec), spec.order)
    bmap = pair_branch_map(state.num_lanes, target, spec.controls)
    out = state.copy()
    _k.branch_rotate(out.amplitudes, target, bmap, alpha, beta)
    p = float(_k.renormalize(out.amplitudes))
    if p < floor:
        raise ImpossibleOutcomeError(f"neuron success probability {p:.3g} below floor", p)
    return NeuronApplication(out, p)


# -- circuit-level construction ---------------------------------------------


@dataclass(frozen=True)
class Gate:
    """One circuit element.

    ``kind == "rot"``: rotate ``target`` by ``angle`` when every lane in
    ``controls`` is 1.  ``kind == "project"``: postselect ``target`` on 0.
    """

    kind: str
    target: int
    controls: tuple[int, ...] = ()
    angle: float = 0.0


def _bank(spec, lane, sign):
    gates = []
    for theta, subset in zip(spec.params, subsets(spec.n, spec.degree)):
        ctl = tuple(spec.controls[i] for i in subset)
        gates.append(Gate("rot", lane, ctl, sign * float(theta)))
    if sign < 0:
        gates.reverse()
    return gates


def _emit(spec, level, target, ancillas, inverse):
    anc = ancillas[level - 1]
    swing = -np.pi / 2 if inverse else np.pi / 2
    if level == 1:
        gates = _bank(spec, anc, +1)
        gates.append(Gate("rot", target, (anc,), swing))
        gates += _bank(spec, anc, -1)
    else:
        gates = _emit(spec, level - 1, anc, ancillas, False)
        gates.append(Gate("rot", target, (anc,), swing))
        gates += _emit(spec, level - 1, anc, ancillas, True)
    gates.append(Gate("project", anc))
    return gates


def build_circuit(spec: NeuronSpec, ancillas: Sequence[int]) -> list[Gate]:
    """Gate sequence of the repeat-until-success neuron with explicit ancillas.

    Needs ``spec.order`` ancilla lanes, all starting in ``|0>``.  Order ``k``
    nests the order ``k-1`` circuit and its inverse around a controlled
    ``R(pi/2)``, sharing the neuron's single parameter vector.
    """
    ancillas = tuple(int(a) for a in ancillas)
    if len(ancillas) < spec.order:
        raise LaneError(f"order {spec.order} neuron needs {spec.order} ancillas, got {len(ancillas)}")
    ancillas = ancillas[:spec.order]
    used = set(spec.controls) | {spec.target}
    if used & set(ancillas) or len(set(ancillas)) != len(ancillas):
        raise LaneError("ancilla lanes overlap the neuron lanes")
    return _emit(spec, spec.order, spec.target, ancillas, False)


def run_circuit(state: StateVector, gates: Sequence[Gate],
                floor: float = DEFAULT_FLOOR) -> tuple[StateVector, float]:
    """Execute a gate list; returns the final state and the product of all
    postselection probabilities."""
    prob = 1.0
    for g in gates:
        if g.kind == "rot":
            angle = g.angle
            full = (1 << len(g.controls)) - 1
            state = apply_branchwise_rotation(
                state, g.target, g.controls,
                lambda x, full=full, angle=angle: (1.0, angle if x == full else 0.0))
        elif g.kind == "project":
            state, p = project(state, (g.target,), 0, floor=floor)
            prob *= p
        else:
            raise ValueError(f"unknown gate kind {g.kind!r}")
    return state, prob
