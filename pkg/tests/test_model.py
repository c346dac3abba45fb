import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qrnn.errors import CheckpointError, ConfigError, LaneError
from qrnn.gradient import backward, record
from qrnn.model import (
    CellTopology,
    InitConfig,
    OverheadMonitor,
    ParameterSet,
    QrnnModel,
    Sample,
    Train,
    cell_step,
    generate,
    init_parameters,
    parameter_count,
    run_sequence,
)
from qrnn.neuron import eta
from qrnn.statevector import StateVector, marginal, new_basis

S2 = math.sqrt(0.5)


def zero_model(H=3, I=2, S=1, d=2, ord=2):
    t = CellTopology(H, I, S, d, ord)
    return QrnnModel(t, ParameterSet(t))


class TestTopology:
    @pytest.mark.parametrize("shape,count", [((5, 3, 1, 3), 443), ((1, 1, 1, 1), 7),
                                             ((8, 2, 2, 2), 858)])
    def test_parameter_count(self, shape, count):
        assert parameter_count(CellTopology(*shape)) == count

    def test_group_breakdown(self):
        t = CellTopology(5, 3, 1, 3)
        sizes = {k: math.prod(v) for k, v in t.group_shapes.items()}
        assert sizes == {"input_neurons": 40, "stage_rotations": 5, "stage_neurons": 320,
                         "output_neurons": 78}

    @pytest.mark.parametrize("bad", [dict(H=0), dict(I=0), dict(S=0), dict(d=0), dict(ord=0)])
    def test_rejects(self, bad):
        args = dict(H=2, I=1, S=1, d=1, ord=1) | bad
        with pytest.raises(ConfigError):
            CellTopology(**args)

    def test_lane_budget(self):
        with pytest.raises(ConfigError):
            CellTopology(20, 5, 1, 1)

    def test_stage_controls(self):
        t = CellTopology(3, 2, 1, 1)
        assert t.stage_controls(1) == (0, 2, 3, 4)
        assert t.io_lanes == (3, 4)


class TestInit:
    def test_zero_sigmas(self):
        t = CellTopology(3, 2, 2, 2)
        ps = init_parameters(t, InitConfig(math.pi / 4, 0, 0, 0), seed=4)
        bias = ps.bias_mask()
        assert np.all(ps.flat[bias] == math.pi / 4)
        assert np.all(ps.flat[~bias] == 0)
        assert bias.sum() == 3 + 2 * 3 + 2

    def test_deterministic(self):
        t = CellTopology(4, 2, 1, 2)
        a, b = init_parameters(t, seed=9), init_parameters(t, seed=9)
        np.testing.assert_array_equal(a.flat, b.flat)
        assert not np.array_equal(a.flat, init_parameters(t, seed=10).flat)

    def test_default_steepest_slope(self):
        t = CellTopology(4, 2, 1, 2)
        ps = init_parameters(t, InitConfig(weight_sigma=0.0), seed=0)
        first = ps.neuron_specs()[0]
        assert eta(first, 0) == pytest.approx(math.pi / 4, abs=0.5)
        assert eta(first, 0) == first.params[0]

    def test_group_statistics(self):
        t = CellTopology(6, 3, 3, 3)
        cfg = InitConfig(0.5, 0.2, 0.05, 0.3)
        sets = [init_parameters(t, cfg, seed=k) for k in range(10)]
        bias = np.concatenate([ps.flat[ps.bias_mask()] for ps in sets])
        weights = np.concatenate([ps.flat[ps.neuron_mask() & ~ps.bias_mask()] for ps in sets])
        phi = np.concatenate([ps.group("stage_rotations").ravel() for ps in sets])
        assert abs(bias.mean() - 0.5) <= 4 * 0.2 / math.sqrt(bias.size)
        assert bias.std() == pytest.approx(0.2, rel=0.2)
        assert abs(weights.mean()) <= 4 * 0.05 / math.sqrt(weights.size)
        assert weights.std() == pytest.approx(0.05, rel=0.05)
        assert phi.std() == pytest.approx(0.3, rel=0.25)

    def test_negative_sigma(self):
        with pytest.raises(ConfigError):
            InitConfig(bias_sigma=-1)


class TestParameterSet:
    def test_roundtrip(self, rng):
        t = CellTopology(3, 2, 2, 2)
        ps = ParameterSet(t, rng.normal(size=parameter_count(t)))
        again = ParameterSet.from_groups(t, {k: v.copy() for k, v in ps.groups.items()})
        np.testing.assert_array_equal(again.flat, ps.flat)

    def test_views_write_through(self):
        t = CellTopology(2, 1, 1, 1)
        ps = ParameterSet(t)
        ps.group("stage_rotations")[0, 1] = 0.5
        assert ps.flat[ps.slices["stage_rotations"]][1] == 0.5

    def test_bad_shape(self):
        t = CellTopology(2, 1, 1, 1)
        with pytest.raises(ConfigError):
            ParameterSet(t, np.zeros(3))


class TestOverheadMonitor:
    def test_empty(self):
        m = OverheadMonitor()
        assert m.overhead == 1.0 and m.min_probability == 1.0

    def test_product(self):
        m = OverheadMonitor()
        m.extend([("neuron", 0.25), ("output", 0.5)])
        assert m.overhead == pytest.approx(2 * math.sqrt(2))
        assert m.min_probability == 0.25

    @settings(max_examples=50)
    @given(st.lists(st.floats(1e-6, 1.0), max_size=20), st.floats(1e-6, 0.999))
    def test_monotone(self, ps, extra):
        m = OverheadMonitor()
        m.extend(("neuron", p) for p in ps)
        before = m.log_overhead
        assert m.overhead >= 1.0
        m.add("output", extra)
        assert m.log_overhead > before


class TestCellStep:
    def test_zero_parameters(self, kernels):
        model = zero_model()
        state, out = cell_step(model, new_basis(5, 0), 3, Train(0))
        np.testing.assert_array_equal(out.distribution, np.eye(4)[0])
        assert out.postselect_probability == 1.0
        np.testing.assert_array_equal(state.amplitudes, new_basis(5, 0).amplitudes)

    def test_hand_trace(self, kernels):
        t = CellTopology(1, 1, 1, 1, 1)
        ps = ParameterSet(t)
        ps.group("input_neurons")[0, 0] = math.pi / 4
        model = QrnnModel(t, ps)
        state, out = cell_step(model, new_basis(2, 0), 0, Train(0))
        np.testing.assert_allclose(out.distribution, [1, 0], atol=1e-15)
        np.testing.assert_allclose(state.amplitudes, [S2, S2, 0, 0], atol=1e-15)

    def test_no_target_skips_output(self, kernels):
        model = QrnnModel.initialized(CellTopology(3, 2, 1, 2), seed=0)
        mon = OverheadMonitor()
        state, out = cell_step(model, new_basis(5, 0), 2, Train(None), mon)
        assert out.distribution is None
        assert len(mon.events) == 3 + 3
        assert all(tag == "neuron" for tag, _ in mon.events)

    def test_dirty_io_rejected(self):
        model = zero_model()
        with pytest.raises(LaneError):
            cell_step(model, new_basis(5, [0, 0, 0, 1, 0]), 0, Train(0))

    def test_input_width(self):
        with pytest.raises(LaneError):
            cell_step(zero_model(), new_basis(5, 0), 4, Train(0))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_io_purity_and_normalization(self, seed):
        """i/o lanes return to |0..0> after a target-free step, for any parameters."""
        rng = np.random.default_rng(seed)
        t = CellTopology(int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 3)),
                         int(rng.integers(1, 4)), int(rng.integers(1, 3)))
        model = QrnnModel(t, ParameterSet(t, rng.uniform(-2, 2, parameter_count(t))))
        state = new_basis(t.num_lanes, 0)
        for _ in range(3):
            state, _ = cell_step(model, state, int(rng.integers(0, 1 << t.I)), Train(None))
            io = marginal(state, t.io_lanes)
            assert 1.0 - io[0] <= 1e-9
            assert abs(state.norm() - 1) <= 1e-9
        _, out = cell_step(model, state, 0, Sample(rng))
        assert out.distribution.sum() == pytest.approx(1.0, abs=1e-9)


class TestRunSequence:
    def test_empty(self):
        outs, mon = run_sequence(zero_model(), [], [])
        assert outs == [] and mon.overhead == 1.0

    def test_zero_parameters(self, kernels):
        outs, mon = run_sequence(zero_model(), [1, 2, 3, 0], [0, 0, 0, 0])
        assert all(o.postselect_probability == 1.0 for o in outs)
        assert mon.overhead == 1.0

    def test_composition(self, kernels):
        model = QrnnModel.initialized(CellTopology(3, 2, 2, 2), seed=5)
        outs, _ = run_sequence(model, [1, 2], [3, 1])
        s, o1 = cell_step(model, new_basis(5, 0), 1, Train(3))
        s, o2 = cell_step(model, s, 2, Train(1))
        np.testing.assert_array_equal(outs[0].distribution, o1.distribution)
        np.testing.assert_array_equal(outs[1].distribution, o2.distribution)

    def test_deterministic(self, kernels):
        model = QrnnModel.initialized(CellTopology(3, 2, 2, 2), seed=5)
        a, _ = run_sequence(model, [1, 2, 0], [3, None, 1])
        b, _ = run_sequence(model, [1, 2, 0], [3, None, 1])
        for x, y in zip(a, b):
            if x.distribution is not None:
                np.testing.assert_array_equal(x.distribution, y.distribution)

    def test_compiled_matches_eager(self, kernels):
        model = QrnnModel.initialized(CellTopology(4, 2, 2, 2), seed=2)
        inputs, targets = [1, 3, 0, 2], [2, None, 3, 1]
        outs, mon = run_sequence(model, inputs, targets)
        _, tape = record(model.compile(inputs, targets), model.flat)
        dists = [o for o in tape.outputs if isinstance(o, np.ndarray)]
        eager = [o.distribution for o in outs if o.distribution is not None]
        for a, b in zip(eager, dists):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal([p for _, p in tape.postselection_events()],
                                      mon.probabilities)

    def test_gradient_finite(self, kernels):
        model = QrnnModel.initialized(CellTopology(3, 2, 1, 2), seed=8)
        prog = model.compile([1, 2], [3, 0])
        _, tape = record(prog, model.flat)
        grads = [np.ones(o.size) if isinstance(o, np.ndarray) else 1.0 for o in tape.outputs]
        g = backward(tape, grads)
        assert g.shape == (parameter_count(model.topology),)
        assert np.all(np.isfinite(g))


class TestGenerate:
    def test_zero_parameters(self, kernels):
        words = generate(zero_model(), [3], 20, np.random.default_rng(1))
        assert words == [0] * 20

    def test_seeded(self, kernels):
        model = QrnnModel.initialized(CellTopology(3, 2, 1, 2), seed=1)
        a = generate(model, [1, 2], 30, np.random.default_rng(4))
        b = generate(model, [1, 2], 30, np.random.default_rng(4))
        assert a == b and len(a) == 30
        assert all(0 <= w < 4 for w in a)

    def test_feedback(self, kernels):
        """After the primer, step k's input is step k-1's sample."""
        model = QrnnModel.initialized(CellTopology(3, 2, 1, 2), seed=1)
        words = generate(model, [2], 6, np.random.default_rng(0))
        rng = np.random.default_rng(0)
        state = new_basis(5, 0)
        x = 2
        for w in words:
            state, out = cell_step(model, state, x, Sample(rng))
            assert out.sampled_word == w
            x = w

    def test_empty_primer(self):
        with pytest.raises(ValueError):
            generate(zero_model(), [], 3, np.random.default_rng(0))


class TestCheckpoint:
    def test_bit_exact(self, tmp_path, rng):
        t = CellTopology(3, 2, 2, 3)
        model = QrnnModel(t, ParameterSet(t, rng.normal(size=parameter_count(t)) * 1e3),
                          rng_seed=7, step_count=123)
        model.flat[0] = 1 / 3
        model.flat[1] = 5e-324
        path = tmp_path / "m.json"
        model.save(path)
        back = QrnnModel.load(path)
        np.testing.assert_array_equal(back.flat, model.flat)
        assert back.topology == t and back.rng_seed == 7 and back.step_count == 123

    def test_fields(self, tmp_path):
        model = zero_model()
        doc = json.loads(model.to_json())
        assert doc["format_version"] == 1
        assert set(doc) >= {"topology", "groups", "rng_seed", "step_count"}
        assert set(doc["groups"]) == {"input_neurons", "stage_rotations", "stage_neurons",
                                      "output_neurons"}
        assert np.asarray(doc["groups"]["stage_neurons"]).shape == (1, 3, 11)

    def test_truncated(self, tmp_path):
        path = tmp_path / "m.json"
        QrnnModel.initialized(CellTopology(2, 1, 1, 1)).save(path)
        text = path.read_text()
        path.write_text(text[:len(text) // 2])
        with pytest.raises(CheckpointError):
            QrnnModel.load(path)

    @pytest.mark.parametrize("mutate", [
        lambda d: d.pop("groups"),
        lambda d: d.update(format_version=99),
        lambda d: d["topology"].update(H=0),
        lambda d: d["groups"].update(stage_rotations=[[0.0]]),
    ])
    def test_corrupt(self, mutate):
        doc = json.loads(zero_model().to_json())
        mutate(doc)
        with pytest.raises(CheckpointError):
            QrnnModel.from_json(json.dumps(doc))
