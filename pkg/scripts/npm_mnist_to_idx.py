"""Convert the digit JSON files of the npm ``mnist`` package into IDX files.

The package ships 10,000 MNIST digits as per-class JSON arrays of
pixel/255 values rounded to three decimals; ``round(v * 255)`` recovers the
original byte exactly.  Samples are interleaved with a fixed shuffle so a
prefix of the file is class balanced.

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python scripts/npm_mnist_to_idx.py package/src/digits data/mnist
"""

import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np


def main(src, dst):
    images, labels = [], []
    for digit in range(10):
        rows = json.loads((Path(src) / f"{digit}.json").read_text())["data"]
        arr = np.asarray(rows, dtype=np.float64).reshape(-1, 784)
        images.append(np.rint(arr * 255).clip(0, 255).astype(np.uint8))
        labels.append(np.full(len(arr), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(20171024).permutation(len(labels))
    images, labels = images[order], labels[order]

    dst = Path(dst)
    dst.mkdir(parents=True, exist_ok=True)
    n = len(labels)
    with gzip.GzipFile(dst / "mnist10k-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(images.tobytes())
    with gzip.GzipFile(dst / "mnist10k-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.tobytes())
    print(f"wrote {n} samples to {dst}")


if __name__ == "__main__":
    main(*sys.argv[1:3])
