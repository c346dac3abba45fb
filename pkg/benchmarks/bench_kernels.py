"""Numba vs pure-numpy kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times single-gate kernels on growing statevectors and a full batched
forward+backward pass of a QRNN, once per backend, after a warm-up call so
numba compile time is excluded.  Also checks the two backends agree.
"""

import argparse
import timeit

import numpy as np

import qrnn.gradient
import qrnn.model
import qrnn.neuron
import qrnn.statevector
import qrnn.training
from qrnn.kernels import get_backend
from qrnn.model import CellTopology, InitConfig, QrnnModel
from qrnn.tasks import MemorizeTask, XorTask

BOUND = (qrnn.statevector, qrnn.neuron, qrnn.gradient, qrnn.model, qrnn.training)


def use(name):
    k = get_backend(name)
    for m in BOUND:
        m._k = k
    return k


def best(fn, repeat, number):
    fn()  # warm-up / jit
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def bench_gates(repeat):
    print(f"{'kernel':<18}{'lanes':>6}{'numpy us':>12}{'numba us':>12}{'speedup':>9}")
    rng = np.random.default_rng(0)
    for n in (8, 12, 16, 20):
        state = rng.normal(size=1 << n)
        state /= np.linalg.norm(state)
        bmap = rng.integers(0, 16, size=1 << (n - 1)).astype(np.int64)
        theta = rng.uniform(0, 1, 16)
        alpha, beta = np.cos(theta), np.sin(theta)
        cases = {
            "rotate": lambda k: k.rotate(state, n // 2, 0.8, 0.6),
            "branch_rotate": lambda k: k.branch_rotate(state, n - 1, bmap, alpha, beta),
            "norm2": lambda k: k.norm2(state),
        }
        number = max(1, 2**20 >> n)
        for name, call in cases.items():
            t = {b: best(lambda: call(get_backend(b)), repeat, number) for b in ("numpy", "numba")}
            print(f"{name:<18}{n:>6}{t['numpy'] * 1e6:>12.1f}{t['numba'] * 1e6:>12.1f}"
                  f"{t['numpy'] / t['numba']:>8.1f}x")


def bench_batches(repeat):
    print(f"\n{'batch gradient':<28}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    cases = [
        ("memorize H5 I2 S2 d3", CellTopology(5, 2, 2, 3), MemorizeTask("123", 10)),
        ("xor H4 I1 S1 d2", CellTopology(4, 1, 1, 2), XorTask(5)),
    ]
    for label, topo, task in cases:
        model = QrnnModel.initialized(topo, InitConfig(weight_sigma=0.3), 0)
        batch = task.batch(np.random.default_rng(0), 32)
        times, grads = {}, {}
        for name in ("numpy", "numba"):
            use(name)
            times[name] = best(lambda: qrnn.training.batch_value_and_grad(model, batch),
                               repeat, 1)
            grads[name] = qrnn.training.batch_value_and_grad(model, batch).grad
        dev = float(np.max(np.abs(grads["numpy"] - grads["numba"])))
        print(f"{label:<28}{times['numpy'] * 1e3:>10.1f}{times['numba'] * 1e3:>10.1f}"
              f"{times['numpy'] / times['numba']:>8.1f}x   max |grad diff| {dev:.1e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    bench_gates(args.repeat)
    bench_batches(args.repeat)


if __name__ == "__main__":
    main()
