"""Dataset ingestion: IDX image files, subset carving, resampling, and
synthetic generators.

A :class:`Dataset` is a pair of aligned arrays, float64 inputs of shape
(n, d) and labels that are either int64 class ids or float64 regression
targets. Image pixels are scaled to [0, 1] on load (byte value / 255).

IDX is the classic big-endian binary layout: a 4-byte magic number
(0x00000803 for rank-3 image files, 0x00000801 for rank-1 label files),
one big-endian uint32 per dimension, then the raw unsigned bytes.
Gzipped files are detected by their two-byte signature and decompressed
transparently.
"""

from __future__ import annotations

import csv
import gzip
import os
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import make_rng, sample_minibatch
from .errors import IdxParseError, ShapeMismatchError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

DATA_DIR_ENV = "MUPRUNE_DATA_DIR"


@dataclass
class Dataset:
    """Aligned (inputs, labels) arrays plus a human-readable name."""

    inputs: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels)
        if np.issubdtype(labels.dtype, np.integer):
            labels = labels.astype(np.int64)
        else:
            labels = labels.astype(np.float64)
        self.labels = labels
        if self.inputs.ndim != 2:
            raise ShapeMismatchError(
                f"inputs must be rank 2, got shape {self.inputs.shape}"
            )
        if self.labels.shape[0] != self.inputs.shape[0]:
            raise ShapeMismatchError(
                f"{self.labels.shape[0]} labels for {self.inputs.shape[0]} inputs"
            )

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    @property
    def is_classification(self) -> bool:
        return np.issubdtype(self.labels.dtype, np.integer)

    def subset(self, indices, name: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], name or self.name)


@dataclass
class SplitSpec:
    """How to carve a train/validation pair out of a pool.

    ``balanced`` draws the same number of examples per class (requires
    integer labels and sizes divisible by the class count). Validation
    examples are carved out before any downstream resampling, so a
    bootstrap can never leak them back into training.
    """

    train: int
    validation: int
    balanced: bool = False
    seed: int = 0


def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, count: int, offset: int, path, what: str) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise IdxParseError(
            f"{path}: truncated while reading {what} at byte offset {offset}: "
            f"wanted {count} bytes, got {len(buf)}"
        )
    return buf


def _read_idx_array(path, expect_magic: int) -> np.ndarray:
    """Parse one IDX file into the uint8 array it stores."""
    with _open_maybe_gzip(path) as fh:
        offset = 0
        raw = _read_exact(fh, 4, offset, path, "magic number")
        (magic,) = struct.unpack(">I", raw)
        if magic != expect_magic:
            raise IdxParseError(
                f"{path}: bad magic 0x{magic:08x} at byte offset 0, "
                f"expected 0x{expect_magic:08x}"
            )
        rank = magic & 0xFF
        offset = 4
        dims = []
        for _ in range(rank):
            raw = _read_exact(fh, 4, offset, path, "dimension size")
            dims.append(struct.unpack(">I", raw)[0])
            offset += 4
        count = int(np.prod(dims, dtype=np.int64)) if dims else 0
        raw = _read_exact(fh, count, offset, path, "payload")
        trailing = fh.read(1)
        if trailing:
            raise IdxParseError(
                f"{path}: {len(trailing)}+ unexpected trailing bytes at "
                f"byte offset {offset + count}"
            )
    return np.frombuffer(raw, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path, name: str = "idx") -> Dataset:
    """Load an IDX image/label file pair into a classification Dataset.

    Images flatten to (n, rows*cols) float64 in [0, 1]; labels stay
    integer class ids. The two files must agree on the example count.
    """
    images = _read_idx_array(images_path, IMAGE_MAGIC)
    labels = _read_idx_array(labels_path, LABEL_MAGIC)
    if images.ndim != 3:
        raise IdxParseError(
            f"{images_path}: expected 3 dimensions for images, got {images.ndim}"
        )
    if labels.ndim != 1:
        raise IdxParseError(
            f"{labels_path}: expected 1 dimension for labels, got {labels.ndim}"
        )
    if images.shape[0] != labels.shape[0]:
        raise IdxParseError(
            f"image count {images.shape[0]} ({images_path}) does not match "
            f"label count {labels.shape[0]} ({labels_path})"
        )
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(flat, labels.astype(np.int64), name)


def write_idx(images_uint8, labels_uint8, images_path, labels_path) -> None:
    """Write image and label arrays as (optionally gzipped) IDX files.

    ``images_uint8`` must be (n, rows, cols) uint8; a path ending in
    ``.gz`` is compressed. ``load_idx`` of the result reproduces exactly
    ``images / 255``.
    """
    images = np.ascontiguousarray(images_uint8, dtype=np.uint8)
    labels = np.ascontiguousarray(labels_uint8, dtype=np.uint8)
    if images.ndim != 3:
        raise ShapeMismatchError(f"images must be rank 3, got shape {images.shape}")
    if labels.shape != (images.shape[0],):
        raise ShapeMismatchError(
            f"label shape {labels.shape} does not match image count {images.shape[0]}"
        )

    def _write(path, magic, arr):
        opener = gzip.open if str(path).endswith(".gz") else open
        with opener(path, "wb") as fh:
            fh.write(struct.pack(">I", magic))
            for d in arr.shape:
                fh.write(struct.pack(">I", d))
            fh.write(arr.tobytes())

    _write(images_path, IMAGE_MAGIC, images)
    _write(labels_path, LABEL_MAGIC, labels)


def _find_idx_pair(directory, stem: str):
    """Resolve ``<stem>-images-idx3-ubyte[.gz]`` and its label twin."""
    for suffix in ("", ".gz"):
        img = os.path.join(directory, f"{stem}-images-idx3-ubyte{suffix}")
        lab = os.path.join(directory, f"{stem}-labels-idx1-ubyte{suffix}")
        if os.path.exists(img) and os.path.exists(lab):
            return img, lab
    raise FileNotFoundError(
        f"no {stem} IDX pair under {directory!r} (set ${DATA_DIR_ENV} or pass a "
        "directory containing the standard image/label files)"
    )


def resolve_data_dir(data_dir=None) -> str:
    """Pick the dataset directory: explicit arg, then $MUPRUNE_DATA_DIR."""
    if data_dir:
        return str(data_dir)
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        return env
    raise FileNotFoundError(
        f"no data directory given and ${DATA_DIR_ENV} is not set"
    )


def load_mnist(data_dir=None, split: str = "train") -> Dataset:
    """Load the MNIST-format IDX pair for ``split`` ("train" or "test")."""
    directory = resolve_data_dir(data_dir)
    if split == "train":
        img, lab = _find_idx_pair(directory, "train")
    elif split == "test":
        try:
            img, lab = _find_idx_pair(directory, "t10k")
        except FileNotFoundError:
            img, lab = _find_idx_pair(directory, "test")
    else:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    return load_idx(img, lab, name=f"mnist-{split}")


def balanced_subset(ds: Dataset, total: int, rng: np.random.Generator) -> Dataset:
    """Draw ``total`` examples with an equal count from every class.

    Requires integer labels, ``total`` divisible by the class count, and
    enough examples in each class. The result is shuffled.
    """
    if not ds.is_classification:
        raise ValueError("balanced_subset needs integer class labels")
    classes = np.unique(ds.labels)
    if total % len(classes) != 0:
        raise ValueError(
            f"total {total} is not divisible by the {len(classes)} classes"
        )
    per_class = total // len(classes)
    picks = []
    for c in classes:
        members = np.flatnonzero(ds.labels == c)
        if len(members) < per_class:
            raise ValueError(
                f"class {c} has {len(members)} examples, need {per_class}"
            )
        sel = sample_minibatch(rng, len(members), per_class, with_replacement=False)
        picks.append(members[sel])
    order = rng.permutation(total)
    return ds.subset(np.concatenate(picks)[order], name=f"{ds.name}-balanced{total}")


def bootstrap_resample(ds: Dataset, rng: np.random.Generator) -> Dataset:
    """Efron resample: n draws with replacement from an n-example dataset."""
    idx = sample_minibatch(rng, len(ds), len(ds), with_replacement=True)
    return ds.subset(idx, name=f"{ds.name}-boot")


def train_validation_split(ds: Dataset, spec: SplitSpec):
    """Carve disjoint train and validation sets per ``spec``.

    Returns ``(train, validation)``. With ``balanced`` set, both halves
    are class-balanced; validation is carved first so later resampling
    of the training half can never touch it.
    """
    total = spec.train + spec.validation
    if total > len(ds):
        raise ValueError(f"split wants {total} examples, dataset has {len(ds)}")
    rng = make_rng(spec.seed)
    if spec.balanced:
        pool = balanced_subset(ds, total, rng)
        classes = np.unique(pool.labels)
        if spec.validation % len(classes) or spec.train % len(classes):
            raise ValueError(
                "balanced split needs train and validation sizes divisible "
                f"by {len(classes)} classes"
            )
        val_per_class = spec.validation // len(classes)
        val_idx = np.concatenate(
            [np.flatnonzero(pool.labels == c)[:val_per_class] for c in classes]
        )
        mask = np.zeros(len(pool), dtype=bool)
        mask[val_idx] = True
        val = pool.subset(np.flatnonzero(mask), name=f"{ds.name}-val")
        train = pool.subset(np.flatnonzero(~mask), name=f"{ds.name}-train")
        return train, val
    order = rng.permutation(len(ds))
    val = ds.subset(order[: spec.validation], name=f"{ds.name}-val")
    train = ds.subset(order[spec.validation : total], name=f"{ds.name}-train")
    return train, val


def synth_regression(
    n: int,
    d: int,
    rng: np.random.Generator,
    sparsity: float = 0.0,
    noise_sd: float = 0.1,
):
    """Linear-gaussian data for covariance oracles.

    Inputs are iid standard normal; targets are ``x @ w_star + eps`` with
    ``eps ~ N(0, noise_sd^2)``. A ``sparsity`` fraction of w_star is
    exactly zero. Returns ``(Dataset, w_star)``.
    """
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity must be in [0, 1], got {sparsity}")
    x = rng.standard_normal((n, d))
    w_star = rng.standard_normal(d)
    n_zero = int(round(sparsity * d))
    if n_zero:
        w_star[rng.permutation(d)[:n_zero]] = 0.0
    y = x @ w_star + noise_sd * rng.standard_normal(n)
    return Dataset(x, y, name=f"synth-reg-{n}x{d}"), w_star


def synth_blobs(
    n: int,
    d: int,
    classes: int,
    rng: np.random.Generator,
    spread: float = 1.0,
) -> Dataset:
    """Gaussian class blobs: a small, quick classification set for tests
    and demos."""
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    centers = rng.standard_normal((classes, d)) * 2.0
    labels = rng.integers(0, classes, size=n, dtype=np.int64)
    x = centers[labels] + spread * rng.standard_normal((n, d))
    return Dataset(x, labels, name=f"synth-blobs-{n}x{d}")


def dataset_to_csv(ds: Dataset, path) -> None:
    """Write a dataset as CSV: columns x0..x{d-1}, then y.

    Values use repr so a float64 round-trips exactly; meant for handing
    synthetic sets to external tools, not for the binary image formats.
    """
    x = ds.inputs
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(x.shape[1])] + ["y"])
        for row, label in zip(x, ds.labels):
            target = int(label) if ds.is_classification else repr(float(label))
            writer.writerow([repr(float(v)) for v in row] + [target])
