"""MNIST ingestion from IDX files, scaling, label encoding and subsetting."""

import gzip
import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from ._validation import RAW, SCALE_MAX, SCALES, UNIT, check_labels, check_random_state
from .exceptions import (
    CountMismatchError,
    InvalidInputError,
    StateError,
    TruncatedFileError,
    WrongMagicError,
)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    scale: str = RAW
    split: str = "train"

    def __post_init__(self):
        if self.scale not in SCALES:
            raise StateError(f"unknown pixel scale {self.scale!r}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise CountMismatchError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )

    def __len__(self):
        return self.labels.shape[0]

    @property
    def X(self):
        return self.images

    @property
    def y(self):
        return self.labels


def _read(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        return f.read()


def _parse_idx(buf, expected_magic, ndim, what):
    if len(buf) < 4:
        raise TruncatedFileError(f"{what} file is truncated: {len(buf)} bytes, no header")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise WrongMagicError(
            f"wrong magic 0x{magic:08x} in {what} file, expected 0x{expected_magic:08x}"
        )
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise TruncatedFileError(f"{what} file is truncated inside the header")
    dims = struct.unpack(">" + "I" * ndim, buf[4:header])
    size = int(np.prod(dims))
    if len(buf) - header < size:
        raise TruncatedFileError(
            f"{what} file is truncated: header promises {size} bytes, found {len(buf) - header}"
        )
    return np.frombuffer(buf, dtype=np.uint8, count=size, offset=header).reshape(dims)


def read_idx_images(path):
    return _parse_idx(_read(path), IMAGES_MAGIC, 3, "images")


def read_idx_labels(path):
    return _parse_idx(_read(path), LABELS_MAGIC, 1, "labels")


def load_idx(images_path, labels_path, split="train"):
    """Read an IDX image/label pair into a raw-scale :class:`Dataset`."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    flat = images.reshape(images.shape[0], -1).astype(np.float64)
    return Dataset(flat, check_labels(labels), RAW, split)


def load_mnist(directory, split="train"):
    """Load a split from a directory holding the four standard MNIST files."""
    names = []
    for base in MNIST_FILES[split]:
        path = os.path.join(directory, base)
        if not os.path.exists(path) and os.path.exists(path + ".gz"):
            path += ".gz"
        names.append(path)
    return load_idx(*names, split=split)


def write_idx(path, array):
    """Write a uint8 array as IDX (3-D images or 1-D labels)."""
    arr = np.asarray(array)
    if arr.ndim == 3:
        magic = IMAGES_MAGIC
    elif arr.ndim == 1:
        magic = LABELS_MAGIC
    else:
        raise InvalidInputError("IDX writer handles 3-D image stacks or 1-D label vectors")
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(">" + "I" * arr.ndim, *arr.shape))
        f.write(arr.astype(np.uint8).tobytes())


def normalize(d):
    if d.scale != RAW:
        raise StateError(f"dataset is already at scale {d.scale}; normalize expects {RAW}")
    return replace(d, images=d.images / SCALE_MAX[RAW], scale=UNIT)


def to_raw(d):
    if d.scale == RAW:
        return d
    return replace(d, images=d.images * SCALE_MAX[RAW], scale=RAW)


def one_hot(labels, n_classes=10):
    y = check_labels(labels, n_classes=n_classes)
    out = np.zeros((y.shape[0], n_classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def subset(d, n, seed=0):
    """Seeded stratified sample of ``n`` items.

    Per-class quotas use largest-remainder rounding of ``n * count_c / N``, so
    each class is within one item of its proportional share.
    """
    total = len(d)
    if n <= 0:
        raise InvalidInputError("subset size must be positive")
    if n > total:
        raise InvalidInputError(f"cannot draw {n} items from {total}")
    rng = check_random_state(seed)
    classes, counts = np.unique(d.labels, return_counts=True)
    share = counts * n / total
    quota = np.floor(share).astype(int)
    short = n - quota.sum()
    order = np.lexsort((classes, -(share - quota)))
    quota[order[:short]] += 1

    picked = []
    for c, q in zip(classes, quota):
        members = np.flatnonzero(d.labels == c)
        picked.append(rng.choice(members, size=q, replace=False))
    idx = rng.permutation(np.concatenate(picked))
    return replace(d, images=d.images[idx], labels=d.labels[idx])


def synthetic_digits(n, seed=0, noise=20.0):
    """Small raw-scale stand-in for MNIST: one smooth stroke template per class.

    Good enough for shape, determinism and learnability checks in tests; it is
    not a model of real handwriting.
    """
    rng = check_random_state(seed)
    yy, xx = np.mgrid[0:28, 0:28]
    templates = []
    for c in range(10):
        angle = np.pi * c / 10
        cx, cy = 14 + 5 * np.cos(2 * angle), 14 + 5 * np.sin(3 * angle)
        dist = np.abs((xx - cx) * np.sin(angle) - (yy - cy) * np.cos(angle))
        ring = np.abs(np.hypot(xx - 14, yy - 14) - (4 + c % 5 * 1.5))
        img = np.exp(-(dist**2) / 3.0) * (np.hypot(xx - cx, yy - cy) < 10)
        img = np.maximum(img, np.exp(-(ring**2) / 2.0) * (c % 2))
        templates.append(255 * img.ravel() / img.max())
    templates = np.array(templates)
    labels = np.arange(n) % 10
    rng.shuffle(labels)
    images = templates[labels] + rng.normal(0.0, noise, size=(n, 784))
    return Dataset(np.clip(np.round(images), 0, 255), labels.astype(np.int64), RAW, "train")
