"""Rebuild the bundled MNIST-5k IDX files.

The 5000 real MNIST digits (500 per class) ship inside the mlxtend wheel as
``mlxtend/data/data/mnist_5k.csv.gz``. This script splits them 400/100 per
class into train/test and writes the four standard IDX files (gzipped,
mtime pinned so the output is byte-reproducible).

    pip download --no-deps mlxtend==0.24.0 -d /tmp/wheels
    python data/build_mnist5k.py /tmp/wheels/mlxtend-0.24.0-py3-none-any.whl
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
OUT = Path(__file__).resolve().parent / "mnist5k"
SEED = 20240501
TEST_PER_CLASS = 100


def write_idx(path, array, magic):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in array.shape)
    with open(path, "wb") as raw:
        with gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as f:
            f.write(header + array.astype(np.uint8).tobytes())


def main(wheel):
    with zipfile.ZipFile(wheel) as z:
        table = np.loadtxt(io.BytesIO(gzip.decompress(z.read(MEMBER))), delimiter=",")
    pixels = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)

    rng = np.random.default_rng(SEED)
    train_idx, test_idx = [], []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(labels == c))
        test_idx.append(idx[:TEST_PER_CLASS])
        train_idx.append(idx[TEST_PER_CLASS:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))

    OUT.mkdir(exist_ok=True)
    write_idx(OUT / "train-images-idx3-ubyte.gz", pixels[train_idx], 0x803)
    write_idx(OUT / "train-labels-idx1-ubyte.gz", labels[train_idx], 0x801)
    write_idx(OUT / "t10k-images-idx3-ubyte.gz", pixels[test_idx], 0x803)
    write_idx(OUT / "t10k-labels-idx1-ubyte.gz", labels[test_idx], 0x801)
    print(f"wrote {len(train_idx)} train / {len(test_idx)} test samples to {OUT}")


if __name__ == "__main__":
    main(sys.argv[1])
