"""Convert the 5000-image MNIST sample shipped with mlxtend into IDX files.

Usage: python3 tools/make_mnist_subset.py <mnist_5k.csv.gz> <out_dir>

Each CSV row holds 784 pixel values (0..255) followed by the label. The rows
are split per class into 400 training and 100 test images with a fixed seed,
then written as train-/t10k- images-idx3-ubyte and labels-idx1-ubyte.
"""

import gzip
import struct
import sys
from pathlib import Path

import numpy as np


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    with gzip.open(src, "rt") as f:
        data = np.loadtxt(f, delimiter=",", dtype=np.int64)
    images, labels = data[:, :784], data[:, 784]
    assert images.min() >= 0 and images.max() <= 255

    rng = np.random.default_rng(20240601)
    train_idx, test_idx = [], []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(labels == c))
        test_idx.extend(idx[:100])
        train_idx.extend(idx[100:])
    train_idx = rng.permutation(np.array(train_idx))
    test_idx = rng.permutation(np.array(test_idx))

    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "train-images-idx3-ubyte", images[train_idx])
    write_labels(out / "train-labels-idx1-ubyte", labels[train_idx])
    write_images(out / "t10k-images-idx3-ubyte", images[test_idx])
    write_labels(out / "t10k-labels-idx1-ubyte", labels[test_idx])
    print(f"train {len(train_idx)} test {len(test_idx)} -> {out}")


if __name__ == "__main__":
    main()
