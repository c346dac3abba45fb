import os

import numpy as np
import pytest

import qrnn.gradient
import qrnn.model
import qrnn.neuron
import qrnn.statevector
import qrnn.training
from qrnn.kernels import get_backend

_BOUND = (qrnn.statevector, qrnn.neuron, qrnn.gradient, qrnn.model, qrnn.training)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(config.acceptance_lines):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance(request):
    """Record the one-line verdict of an acceptance criterion."""

    def report(number, passed, detail):
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        line = f"criterion {number:>2}: {status}  {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        return passed

    return report


def pytest_collection_modifyitems(config, items):
    if os.environ.get("QRNN_RUN_SLOW", "0") not in ("0", ""):
        return
    skip = pytest.mark.skip(reason="slow; set QRNN_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(params=["numpy", "numba"])
def kernels(request, monkeypatch):
    """Run the test against one kernel backend, patched into every module."""
    mod = get_backend(request.param)
    for m in _BOUND:
        monkeypatch.setattr(m, "_k", mod)
    return mod


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_state(rng, n):
    from qrnn.statevector import StateVector

    v = rng.normal(size=1 << n)
    return StateVector(n, v / np.linalg.norm(v))
