import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qrnn.errors import CapacityError, EntangledLanesError, ImpossibleOutcomeError, LaneError
from qrnn.statevector import (
    StateVector,
    apply_bitflip,
    apply_branchwise_rotation,
    apply_rotation,
    marginal,
    new_basis,
    project,
    reset_lanes,
)

from conftest import random_state

S2 = math.sqrt(0.5)


def amps(*values):
    return np.array(values, dtype=float)


class TestNewBasis:
    @pytest.mark.parametrize("n,bits,index", [(1, [0], 0), (2, [1, 0], 1), (3, [1, 1, 1], 7)])
    def test_index(self, n, bits, index):
        s = new_basis(n, bits)
        expected = np.zeros(1 << n)
        expected[index] = 1
        np.testing.assert_array_equal(s.amplitudes, expected)

    @pytest.mark.parametrize("n", [0, 25, -1])
    def test_capacity(self, n):
        with pytest.raises(CapacityError):
            new_basis(n, 0)

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            new_basis(2, [1])


class TestRotation:
    def test_identity(self, kernels, rng):
        s = random_state(rng, 3)
        np.testing.assert_array_equal(apply_rotation(s, 1, 0.0).amplitudes, s.amplitudes)

    def test_quarter_turn(self, kernels):
        np.testing.assert_allclose(apply_rotation(new_basis(1, 0), 0, math.pi / 2).amplitudes,
                                   [0, 1], atol=1e-15)

    def test_eighth_turn(self, kernels):
        np.testing.assert_allclose(apply_rotation(new_basis(1, 0), 0, math.pi / 4).amplitudes,
                                   [S2, S2], atol=1e-15)

    def test_sign_convention_on_pairs(self, kernels):
        # a0' = c a0 - s a1, a1' = s a0 + c a1 along lane 1
        s = StateVector(2, amps(0.1, 0.2, 0.3, 0.4) / math.sqrt(0.3))
        th = 0.7
        out = apply_rotation(s, 1, th).amplitudes
        a = s.amplitudes
        c, sn = math.cos(th), math.sin(th)
        np.testing.assert_allclose(out, [c * a[0] - sn * a[2], c * a[1] - sn * a[3],
                                         sn * a[0] + c * a[2], sn * a[1] + c * a[3]], atol=1e-15)

    def test_input_untouched(self, kernels, rng):
        s = random_state(rng, 2)
        before = s.amplitudes.copy()
        apply_rotation(s, 0, 1.0)
        np.testing.assert_array_equal(s.amplitudes, before)

    def test_bad_lane(self):
        with pytest.raises(LaneError):
            apply_rotation(new_basis(2, 0), 2, 0.1)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 6), st.data(), st.floats(-10, 10), st.floats(-10, 10))
    def test_norm_and_composition(self, n, data, t1, t2):
        rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
        lane = data.draw(st.integers(0, n - 1))
        s = random_state(rng, n)
        once = apply_rotation(apply_rotation(s, lane, t1), lane, t2)
        assert abs(once.norm() - 1) <= 1e-12
        np.testing.assert_allclose(once.amplitudes, apply_rotation(s, lane, t1 + t2).amplitudes,
                                   atol=1e-12)


class TestBitflip:
    def test_basis(self, kernels):
        np.testing.assert_array_equal(apply_bitflip(new_basis(1, 0), 0).amplitudes, [0, 1])

    def test_lane_one(self, kernels):
        np.testing.assert_array_equal(apply_bitflip(new_basis(2, 0), 1).amplitudes, [0, 0, 1, 0])

    def test_involution(self, kernels, rng):
        s = random_state(rng, 3)
        for lane in range(3):
            np.testing.assert_array_equal(apply_bitflip(apply_bitflip(s, lane), lane).amplitudes,
                                          s.amplitudes)

    def test_norm(self, kernels, rng):
        s = random_state(rng, 5)
        assert abs(apply_bitflip(s, 3).norm() - 1) <= 1e-12


class TestBranchwise:
    def test_constant_identity(self, kernels, rng):
        s = random_state(rng, 3)
        out = apply_branchwise_rotation(s, 0, (1, 2), lambda x: (1.0, 0.0))
        np.testing.assert_array_equal(out.amplitudes, s.amplitudes)

    def test_controlled_quarter_turn(self, kernels):
        # (|00> + |10>)/sqrt2 -> (|00> + |11>)/sqrt2, lane 0 target, lane 1 control
        s = StateVector(2, amps(S2, 0, S2, 0))
        out = apply_branchwise_rotation(s, 0, (1,), lambda x: (1.0, math.pi / 2 if x else 0.0))
        np.testing.assert_allclose(out.amplitudes, [S2, 0, 0, S2], atol=1e-15)

    def test_halving(self, kernels, rng):
        s = random_state(rng, 2)
        out = apply_branchwise_rotation(s, 1, (0,), lambda x: (0.5, 0.0))
        np.testing.assert_allclose(out.amplitudes, s.amplitudes / 2, atol=1e-15)
        assert out.norm() == pytest.approx(0.5, abs=1e-15)

    def test_array_tables(self, kernels, rng):
        s = random_state(rng, 3)
        w, f = np.ones(4), rng.uniform(-3, 3, 4)
        a = apply_branchwise_rotation(s, 2, (0, 1), (w, f))
        b = apply_branchwise_rotation(s, 2, (0, 1), lambda x: (w[x], f[x]))
        np.testing.assert_array_equal(a.amplitudes, b.amplitudes)

    def test_target_in_controls(self):
        with pytest.raises(LaneError):
            apply_branchwise_rotation(new_basis(2, 0), 0, (0,), lambda x: (1.0, 0.0))

    def test_negative_scale(self):
        with pytest.raises(ValueError):
            apply_branchwise_rotation(new_basis(2, 0), 0, (1,), lambda x: (-1.0, 0.0))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 5), st.integers(0, 2**32 - 1))
    def test_unit_scales_preserve_norm(self, n, seed):
        rng = np.random.default_rng(seed)
        s = random_state(rng, n)
        lanes = rng.permutation(n)
        target, controls = int(lanes[0]), tuple(int(c) for c in lanes[1:])
        angles = rng.uniform(-4, 4, 1 << len(controls))
        out = apply_branchwise_rotation(s, target, controls, (np.ones_like(angles), angles))
        assert abs(out.norm() - 1) <= 1e-12


class TestProject:
    def test_bell_branch(self, kernels):
        out, p = project(StateVector(2, amps(S2, 0, 0, S2)), (0,), 0)
        np.testing.assert_allclose(out.amplitudes, [1, 0, 0, 0], atol=1e-15)
        assert p == pytest.approx(0.5, abs=1e-15)

    def test_basis_self(self, kernels):
        s = new_basis(3, [1, 0, 1])
        out, p = project(s, (0, 1, 2), [1, 0, 1])
        np.testing.assert_array_equal(out.amplitudes, s.amplitudes)
        assert p == 1.0

    def test_squared_amplitude(self, kernels):
        out, p = project(StateVector(2, amps(0.6, 0, 0, 0.8)), (1,), 1)
        np.testing.assert_allclose(out.amplitudes, [0, 0, 0, 1], atol=1e-15)
        assert p == pytest.approx(0.64, abs=1e-15)

    def test_impossible(self, kernels):
        with pytest.raises(ImpossibleOutcomeError) as err:
            project(new_basis(2, 0), (0,), 1)
        assert err.value.probability == 0.0

    def test_floor_configurable(self, kernels):
        s = StateVector(1, amps(math.sqrt(1 - 1e-8), 1e-4))
        _, p = project(s, (0,), 1)
        assert p == pytest.approx(1e-8)
        with pytest.raises(ImpossibleOutcomeError):
            project(s, (0,), 1, floor=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_probabilities_sum_and_collapse(self, n, seed):
        rng = np.random.default_rng(seed)
        s = random_state(rng, n)
        k = int(rng.integers(1, n + 1))
        lanes = tuple(int(x) for x in rng.permutation(n)[:k])
        total = 0.0
        for outcome in range(1 << k):
            out, p = project(s, lanes, outcome, floor=0.0)
            total += p
            if p > 1e-12:
                dist = marginal(out, lanes)
                expected = np.zeros(1 << k)
                expected[outcome] = 1
                np.testing.assert_allclose(dist, expected, atol=1e-12)
                assert abs(out.norm() - 1) <= 1e-9
        assert total == pytest.approx(1.0, abs=1e-9)


class TestMarginal:
    def test_uniform(self, kernels):
        np.testing.assert_allclose(marginal(StateVector(2, np.full(4, 0.5)), (0, 1)), [0.25] * 4)

    def test_lane_one(self, kernels):
        np.testing.assert_allclose(marginal(StateVector(2, amps(0.6, 0, 0, 0.8)), (1,)), [0.36, 0.64])

    def test_one_hot(self, kernels):
        np.testing.assert_array_equal(marginal(new_basis(3, 5), (0, 1, 2)), np.eye(8)[5])

    def test_lane_order_sets_significance(self, kernels):
        s = new_basis(3, [0, 1, 0])
        assert np.argmax(marginal(s, (1, 0))) == 1
        assert np.argmax(marginal(s, (0, 1))) == 2

    def test_sums_to_one(self, kernels, rng):
        s = random_state(rng, 6)
        assert marginal(s, (5, 2, 0)).sum() == pytest.approx(1.0, abs=1e-9)


class TestReset:
    def test_known_word(self, kernels, rng):
        psi = random_state(rng, 2)
        # lanes 2,3 hold |11>, lanes 0,1 hold psi
        full = np.zeros(16)
        full[12:16] = psi.amplitudes
        out = reset_lanes(StateVector(4, full), (2, 3), [1, 1])
        np.testing.assert_array_equal(out.amplitudes[:4], psi.amplitudes)
        assert np.all(out.amplitudes[4:] == 0)

    def test_zero_is_identity(self, kernels, rng):
        s = StateVector(3, np.r_[random_state(rng, 2).amplitudes, np.zeros(4)])
        np.testing.assert_array_equal(reset_lanes(s, (2,), 0).amplitudes, s.amplitudes)

    def test_entangled(self):
        with pytest.raises(EntangledLanesError):
            reset_lanes(StateVector(1, amps(S2, S2)), (0,), 0)
