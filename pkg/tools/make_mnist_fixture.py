"""Regenerate the bundled MNIST IDX fixture under data/mnist-6k/.

Source: the `mnist` npm package (cazala/mnist, MIT), which ships 10,000
genuine MNIST digits as JSON, one file per digit class, pixels stored as
value/255 rounded to three decimals. That rounding is invertible
(round(v * 255) recovers the exact byte), so the fixture holds the
original 8-bit grayscale images.

From the 10,000 images this script draws a class-balanced 6,000-image
training set (600 per digit, seeded shuffle) and uses the remaining
4,000 images as the held-out test set, then writes both splits as
gzipped IDX files with the standard magic numbers and big-endian
headers.

Usage:
    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 tools/make_mnist_fixture.py package/src/digits data/mnist-6k
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import json

import numpy as np

from muprune.core import make_rng, sample_minibatch
from muprune.data import load_idx, write_idx

SEED = 20210917
TRAIN_PER_CLASS = 600
SIDE = 28


def load_digit_json(digits_dir):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(digits_dir, f"{digit}.json")) as fh:
            flat = np.asarray(json.load(fh)["data"], dtype=np.float64)
        if flat.size % (SIDE * SIDE) != 0:
            raise ValueError(f"digit {digit}: {flat.size} values not a multiple of 784")
        arr = np.round(flat * 255.0).astype(np.uint8).reshape(-1, SIDE, SIDE)
        images.append(arr)
        labels.append(np.full(arr.shape[0], digit, dtype=np.uint8))
        # confirm the 3-decimal rounding is invertible for this file
        if not np.allclose(arr / 255.0, flat.reshape(arr.shape), atol=5.1e-4):
            raise ValueError(f"digit {digit}: byte recovery failed")
    return np.concatenate(images), np.concatenate(labels)


def main(digits_dir, out_dir):
    images, labels = load_digit_json(digits_dir)
    print(f"loaded {len(images)} images, class counts "
          f"{np.bincount(labels).tolist()}")
    rng = make_rng(SEED)
    train_idx = []
    for digit in range(10):
        members = np.flatnonzero(labels == digit)
        sel = sample_minibatch(rng, len(members), TRAIN_PER_CLASS)
        train_idx.append(members[sel])
    train_idx = np.concatenate(train_idx)
    train_idx = train_idx[rng.permutation(len(train_idx))]
    test_mask = np.ones(len(images), dtype=bool)
    test_mask[train_idx] = False
    test_idx = np.flatnonzero(test_mask)
    test_idx = test_idx[rng.permutation(len(test_idx))]

    os.makedirs(out_dir, exist_ok=True)
    write_idx(
        images[train_idx], labels[train_idx],
        os.path.join(out_dir, "train-images-idx3-ubyte.gz"),
        os.path.join(out_dir, "train-labels-idx1-ubyte.gz"),
    )
    write_idx(
        images[test_idx], labels[test_idx],
        os.path.join(out_dir, "t10k-images-idx3-ubyte.gz"),
        os.path.join(out_dir, "t10k-labels-idx1-ubyte.gz"),
    )
    print(f"wrote {len(train_idx)} train / {len(test_idx)} test images to {out_dir}")

    # read back through the package loader as a sanity check
    train = load_idx(
        os.path.join(out_dir, "train-images-idx3-ubyte.gz"),
        os.path.join(out_dir, "train-labels-idx1-ubyte.gz"),
    )
    test = load_idx(
        os.path.join(out_dir, "t10k-images-idx3-ubyte.gz"),
        os.path.join(out_dir, "t10k-labels-idx1-ubyte.gz"),
    )
    assert len(train) == 10 * TRAIN_PER_CLASS and train.n_features == SIDE * SIDE
    assert np.bincount(train.labels).tolist() == [TRAIN_PER_CLASS] * 10
    assert len(test) == len(images) - len(train)
    print("read-back OK, test class counts", np.bincount(test.labels).tolist())


if __name__ == "__main__":
    if len(sys.argv) != 3:
        print(__doc__)
        sys.exit(2)
    main(sys.argv[1], sys.argv[2])
