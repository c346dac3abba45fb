import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qrnn.errors import LaneError, ParameterError
from qrnn.neuron import (
    NeuronSpec,
    activation,
    apply_effective,
    build_circuit,
    eta,
    eta_table,
    min_success_probability,
    offset_subset,
    param_count,
    run_circuit,
    subset_offset,
    subsets,
    success_weight,
)
from qrnn.statevector import StateVector, apply_rotation, new_basis

from conftest import random_state

S2 = math.sqrt(0.5)


def mp_activation(x, order):
    """Normalized (cos^m, sin^m) at 50 digits."""
    with mpmath.workdps(50):
        m = 2**order
        c, s = mpmath.cos(x) ** m, mpmath.sin(x) ** m
        w = mpmath.sqrt(c * c + s * s)
        return float(c / w), float(s / w)


class TestParamCount:
    @pytest.mark.parametrize("n,d,expected", [(4, 2, 11), (5, 0, 1), (0, 0, 1), (7, 3, 64),
                                              (2, 5, 4)])
    def test_values(self, n, d, expected):
        assert param_count(n, d) == expected

    def test_subset_order(self):
        assert subsets(3, 2) == ((), (0,), (1,), (2,), (0, 1), (0, 2), (1, 2))

    @pytest.mark.parametrize("n", range(0, 11))
    def test_offsets_bijective(self, n):
        for d in range(n + 1):
            subs = subsets(n, d)
            assert len(subs) == param_count(n, d)
            for k, s in enumerate(subs):
                assert subset_offset(n, d, s) == k
                assert offset_subset(n, d, k) == s

    def test_missing_subset(self):
        with pytest.raises(ParameterError):
            subset_offset(3, 1, (0, 1))


class TestEta:
    def test_zero_params(self):
        spec = NeuronSpec((0, 1, 2), 3, 2, 1, np.zeros(7))
        assert eta(spec, [1, 1, 1]) == 0.0

    def test_bias_only_on_zero_word(self):
        spec = NeuronSpec((0, 1), 2, 2, 1, [0.3, 1.0, 2.0, 4.0])
        assert eta(spec, [0, 0]) == 0.3

    def test_full_degree_two(self):
        spec = NeuronSpec((0, 1), 2, 2, 1, [0.1, 0.2, 0.3, 0.4])
        assert eta(spec, [1, 1]) == pytest.approx(1.0, abs=1e-15)
        assert eta(spec, [0, 1]) == pytest.approx(0.4, abs=1e-15)

    def test_table_matches_pointwise(self, rng):
        spec = NeuronSpec((0, 2, 3, 4), 1, 3, 2, rng.normal(size=param_count(4, 3)))
        table = eta_table(spec)
        for x in range(16):
            bits = [(x >> j) & 1 for j in range(4)]
            direct = sum(th for th, sub in zip(spec.params, subsets(4, 3))
                         if all(bits[i] for i in sub))
            assert table[x] == pytest.approx(direct, abs=1e-14)

    def test_spec_validation(self):
        with pytest.raises(LaneError):
            NeuronSpec((0, 1), 1, 1, 1, np.zeros(3))
        with pytest.raises(ParameterError):
            NeuronSpec((0, 1), 2, 1, 1, np.zeros(4))
        with pytest.raises(ParameterError):
            NeuronSpec((0,), 2, 1, 0, np.zeros(2))


class TestActivation:
    @pytest.mark.parametrize("order", [1, 2, 3, 4])
    def test_fixed_point(self, order):
        c, s = activation(math.pi / 4, order)
        assert c == pytest.approx(S2, abs=1e-15) and s == pytest.approx(S2, abs=1e-15)

    def test_zero(self):
        assert activation(0.0, 2) == (1.0, 0.0)

    def test_first_order_eighth(self):
        c, s = activation(math.pi / 8, 1)
        f = math.atan2(s, c)
        with mpmath.workdps(50):
            exact = float(mpmath.atan(mpmath.tan(mpmath.pi / 8) ** 2))
        assert f == pytest.approx(exact, abs=1e-15)
        # the commonly quoted 4-digit figures
        assert f == pytest.approx(0.16989, abs=5e-5)
        assert (c, s) == pytest.approx((0.98561, 0.16907), abs=5e-5)

    @pytest.mark.parametrize("order", [1, 2, 3])
    def test_extended_precision(self, order):
        grid = np.linspace(0, math.pi, 1000)
        c, s = activation(grid, order)
        ref = np.array([mp_activation(mpmath.mpf(float(x)), order) for x in grid])
        assert np.max(np.abs(c - ref[:, 0])) <= 1e-12
        assert np.max(np.abs(s - ref[:, 1])) <= 1e-12

    def test_stable_near_half_pi(self):
        c, s = activation(math.pi / 2 - 1e-9, 3)
        assert np.isfinite(c) and s == pytest.approx(1.0)

    @settings(max_examples=200)
    @given(st.floats(-20, 20), st.integers(1, 4))
    def test_normalized(self, x, order):
        c, s = activation(x, order)
        assert abs(c * c + s * s - 1) <= 1e-12

    @settings(max_examples=200)
    @given(st.floats(math.pi / 4, math.pi / 2, exclude_min=True, exclude_max=True),
           st.integers(1, 3))
    def test_sharpening(self, x, order):
        assert activation(x, order + 1)[1] >= activation(x, order)[1]


class TestSuccessWeight:
    def test_zero(self):
        assert success_weight(0.0, 3) == 1.0

    def test_second_order_floor(self):
        assert success_weight(math.pi / 4, 2) ** 2 == pytest.approx(1 / 8, abs=1e-15)

    def test_first_order_floor(self):
        assert success_weight(math.pi / 4, 1) ** 2 == pytest.approx(0.5, abs=1e-15)

    @pytest.mark.parametrize("order,overhead", [(1, 2), (2, 8), (3, 128), (4, 32768)])
    def test_min_over_grid(self, order, overhead):
        grid = np.linspace(0, math.pi, 100001)
        p = success_weight(grid, order) ** 2
        assert p.min() == pytest.approx(1 / overhead, abs=1e-9)
        assert min_success_probability(order) == 1 / overhead
        assert grid[np.argmin(p[:50001])] == pytest.approx(math.pi / 4, abs=1e-4)


class TestApplyEffective:
    def test_zero_params(self, kernels, rng):
        s = random_state(rng, 3)
        res = apply_effective(s, NeuronSpec((0, 1), 2, 2, 2, np.zeros(4)))
        np.testing.assert_allclose(res.state.amplitudes, s.amplitudes, atol=1e-15)
        assert res.success_probability == pytest.approx(1.0, abs=1e-15)

    def test_single_branch(self, kernels):
        # control lane 0 in |1>, eta(1) = pi/4, target lane 1
        s = new_basis(2, [1, 0])
        res = apply_effective(s, NeuronSpec((0,), 1, 1, 1, [0.0, math.pi / 4]))
        np.testing.assert_allclose(res.state.amplitudes, [0, S2, 0, S2], atol=1e-15)
        assert res.success_probability == pytest.approx(0.5, abs=1e-15)

    def test_superposed_control(self, kernels):
        s = StateVector(2, np.array([S2, S2, 0, 0]))
        res = apply_effective(s, NeuronSpec((0,), 1, 1, 1, [0.0, math.pi / 4]))
        assert res.success_probability == pytest.approx(0.75, abs=1e-15)
        # unnormalized: |00>/sqrt2 + (1/sqrt2)(1/2)(|01> + |11>)
        expected = np.array([S2, 0.5 * S2, 0, 0.5 * S2]) / math.sqrt(0.75)
        np.testing.assert_allclose(res.state.amplitudes, expected, atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_basis_control_is_rotation(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 4))
        order = int(rng.integers(1, 4))
        spec = NeuronSpec(tuple(range(n)), n, 2, order, rng.normal(size=param_count(n, 2)))
        x = int(rng.integers(0, 1 << n))
        tgt = random_state(rng, 1).amplitudes
        amps = np.zeros(1 << (n + 1))
        amps[x], amps[x | 1 << n] = tgt
        res = apply_effective(StateVector(n + 1, amps), spec)
        c, s = activation(eta(spec, x), order)
        expected = np.array([c * tgt[0] - s * tgt[1], s * tgt[0] + c * tgt[1]])
        np.testing.assert_allclose([res.state.amplitudes[x], res.state.amplitudes[x | 1 << n]],
                                   expected, atol=1e-12)


class TestCircuit:
    def test_gate_count(self):
        gates = build_circuit(NeuronSpec((0, 1), 2, 1, 1, [0.1, 0.2, 0.3]), [3])
        kinds = [g.kind for g in gates]
        assert kinds == ["rot"] * 7 + ["project"]
        assert gates[3].controls == (3,) and gates[3].target == 2

    def test_zero_theta(self, kernels, rng):
        s = random_state(rng, 2)
        full = StateVector(4, np.r_[s.amplitudes, np.zeros(12)])
        out, p = run_circuit(full, build_circuit(NeuronSpec((0,), 1, 1, 2, [0.0, 0.0]), [2, 3]))
        assert p == pytest.approx(1.0, abs=1e-15)
        np.testing.assert_allclose(out.amplitudes, full.amplitudes, atol=1e-15)

    def test_insufficient_ancillas(self):
        with pytest.raises(LaneError):
            build_circuit(NeuronSpec((0,), 1, 1, 2, [0.0, 0.0]), [2])
        with pytest.raises(LaneError):
            build_circuit(NeuronSpec((0,), 1, 1, 1, [0.0, 0.0]), [1])

    def test_equivalence(self, kernels):
        """Circuit with ancillas postselected vs the effective map, 200 draws."""
        rng = np.random.default_rng(7)
        worst_state = worst_p = 0.0
        for _ in range(200):
            n = int(rng.integers(0, 4))
            order = int(rng.integers(1, 3))
            d = int(rng.integers(0, n + 1))
            spec = NeuronSpec(tuple(range(n)), n, d, order, rng.uniform(-2, 2, param_count(n, d)))
            s = random_state(rng, n + 1)
            eff = apply_effective(s, spec)
            ancillas = list(range(n + 1, n + 1 + order))
            full = np.zeros(1 << (n + 1 + order))
            full[:s.amplitudes.size] = s.amplitudes
            out, p = run_circuit(StateVector(n + 1 + order, full), build_circuit(spec, ancillas),
                                 floor=0.0)
            worst_state = max(worst_state, np.linalg.norm(
                out.amplitudes[:s.amplitudes.size] - eff.state.amplitudes))
            worst_p = max(worst_p, abs(p - eff.success_probability))
        assert worst_state <= 1e-10
        assert worst_p <= 1e-10
