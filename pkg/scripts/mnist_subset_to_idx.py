"""Write IDX files from mlxtend's bundled 5000-image MNIST subset.

For machines that cannot download the canonical MNIST files.  The subset
holds 500 images per digit, all drawn from the official training split; a
per-digit holdout stands in for the test split::

    python3 scripts/mnist_subset_to_idx.py OUT_DIR [--source mlxtend.whl|mnist_5k.csv.gz]
        [--test-fraction 0.2] [--seed 0]

The result is a reduced dataset: criteria asking for 2000 training images of
a digit pair cannot be met with it.
"""

import argparse
import gzip
import io
import sys
import zipfile
from pathlib import Path

import numpy as np

from qrnn.tasks.mnist import write_idx

CSV_IN_WHEEL = "mlxtend/data/data/mnist_5k.csv.gz"


def read_subset(source=None):
    if source is None:
        try:
            from mlxtend.data import mnist_data
        except ImportError:
            sys.exit("mlxtend is not installed; pass --source")
        x, y = mnist_data()
        return x.astype(np.uint8), y.astype(np.uint8)
    source = Path(source)
    if source.suffix == ".whl":
        raw = zipfile.ZipFile(source).read(CSV_IN_WHEEL)
    else:
        raw = source.read_bytes()
    table = np.loadtxt(io.BytesIO(gzip.decompress(raw)), delimiter=",", dtype=np.uint8)
    return table[:, :-1], table[:, -1]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--source")
    ap.add_argument("--test-fraction", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    x, y = read_subset(args.source)
    rng = np.random.default_rng(args.seed)
    test = np.zeros(len(y), dtype=bool)
    for digit in np.unique(y):
        idx = np.flatnonzero(y == digit)
        test[rng.choice(idx, int(round(len(idx) * args.test_fraction)), replace=False)] = True

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split, mask in (("train", ~test), ("t10k", test)):
        write_idx(out / f"{split}-images-idx3-ubyte", x[mask].reshape(-1, 28, 28))
        write_idx(out / f"{split}-labels-idx1-ubyte", y[mask])
        print(f"{split}: {mask.sum()} images")


if __name__ == "__main__":
    main()
