"""MNIST (IDX) and CIFAR-10 (binary batch) loading, downscaling and batching."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConsistencyError, FormatError, ParameterError, ShapeError

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
CIFAR_RECORD = 1 + 3072

#: Default data locations; override with ``TNDIS_MNIST_DIR`` / ``TNDIS_CIFAR_DIR``.
MNIST_DIR = Path(os.environ.get("TNDIS_MNIST_DIR", "/root/data/mnist"))
CIFAR_DIR = Path(os.environ.get("TNDIS_CIFAR_DIR", "/root/data/cifar-10-batches-bin"))


@dataclass
class Dataset:
    """Rows of features in [0, 1] with integer class labels."""

    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    image_shape: tuple = ()

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 2:
            raise ShapeError("images must be a matrix of flattened rows")
        if len(self.images) != len(self.labels):
            raise ConsistencyError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ParameterError("features must lie in [0, 1]")
        if not self.image_shape:
            self.image_shape = (self.images.shape[1],)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_features(self) -> int:
        return self.images.shape[1]

    def subset(self, n: int | None = None, indices=None) -> "Dataset":
        idx = np.arange(min(n, len(self))) if indices is None else np.asarray(indices)
        return Dataset(self.images[idx], self.labels[idx], self.split, self.image_shape)


def _read(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _idx_header(raw: bytes, magic: int, ndim: int, path) -> tuple[int, ...]:
    need = 4 * (1 + ndim)
    if len(raw) < need:
        raise OSError(f"{path}: truncated IDX header")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise FormatError(f"{path}: IDX magic {got:#010x}, expected {magic:#010x}")
    return struct.unpack(f">{ndim}I", raw[4:need])


def load_mnist_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Read an IDX image/label pair; pixels are scaled by 1/255."""
    raw_i = _read(images_path)
    raw_l = _read(labels_path)
    n, rows, cols = _idx_header(raw_i, IDX_IMAGES, 3, images_path)
    (m,) = _idx_header(raw_l, IDX_LABELS, 1, labels_path)
    if len(raw_i) < 16 + n * rows * cols:
        raise OSError(f"{images_path}: truncated, header promises {n} images")
    if len(raw_l) < 8 + m:
        raise OSError(f"{labels_path}: truncated, header promises {m} labels")
    if n != m:
        raise ConsistencyError(f"{n} images but {m} labels")
    px = np.frombuffer(raw_i, dtype=np.uint8, count=n * rows * cols, offset=16)
    labels = np.frombuffer(raw_l, dtype=np.uint8, count=m, offset=8)
    return Dataset(px.reshape(n, rows * cols) / 255.0, labels.astype(np.int64), split, (rows, cols))


def write_mnist_idx(ds: Dataset, images_path, labels_path) -> None:
    """Write ``ds`` (features multiples of 1/255) as an IDX pair."""
    rows, cols = ds.image_shape if len(ds.image_shape) == 2 else _square(ds.n_features)
    px = np.rint(ds.images * 255.0).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES, len(ds), rows, cols))
        fh.write(px.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS, len(ds)))
        fh.write(ds.labels.astype(np.uint8).tobytes())


def _square(n: int) -> tuple[int, int]:
    side = int(round(np.sqrt(n)))
    if side * side != n:
        raise ShapeError(f"{n} features do not form a square image")
    return side, side


def area_weights(src: int, dst: int) -> np.ndarray:
    """``(dst, src)`` box-filter matrix: row ``i`` averages source cells overlapping
    ``[i, i+1) * src/dst`` with fractional weights."""
    if src < 1 or dst < 1:
        raise ParameterError("sizes must be positive")
    r = np.zeros((dst, src))
    scale = src / dst
    for i in range(dst):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(int(np.floor(lo)), min(src, int(np.ceil(hi)))):
            r[i, j] = max(0.0, min(hi, j + 1) - max(lo, j))
    return r / scale


def downscale(ds: Dataset, side: int = 8) -> Dataset:
    """Area-average resampling of square images to ``side x side``."""
    if len(ds.image_shape) == 2:
        h, w = ds.image_shape
    else:
        h, w = _square(ds.n_features)
    if h != w:
        raise ShapeError(f"images are {h}x{w}, not square")
    r = area_weights(h, side)
    imgs = ds.images.reshape(len(ds), h, w)
    out = r @ imgs @ r.T
    return Dataset(np.clip(out.reshape(len(ds), side * side), 0.0, 1.0), ds.labels, ds.split, (side, side))


def load_cifar10_bin(paths: Sequence, split: str = "train") -> Dataset:
    """Concatenate CIFAR-10 binary batches (label byte + 3072 channel-major pixels)."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    xs, ys = [], []
    for path in paths:
        raw = _read(path)
        if len(raw) % CIFAR_RECORD:
            raise FormatError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        ys.append(rec[:, 0].astype(np.int64))
        xs.append(rec[:, 1:] / 255.0)
    if not xs:
        raise ParameterError("no CIFAR batch files given")
    return Dataset(np.concatenate(xs), np.concatenate(ys), split, (3, 32, 32))


def write_cifar10_bin(ds: Dataset, path) -> None:
    rec = np.empty((len(ds), CIFAR_RECORD), dtype=np.uint8)
    rec[:, 0] = ds.labels
    rec[:, 1:] = np.rint(ds.images * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(rec.tobytes())


def standardize(train: Dataset, *others: Dataset) -> list[Dataset]:
    """Per-feature affine map of every split into [0, 1] using train statistics.

    Features are min-max scaled on the training split and clipped elsewhere.
    """
    lo = train.images.min(axis=0)
    span = np.maximum(train.images.max(axis=0) - lo, 1e-12)
    out = []
    for ds in (train,) + others:
        x = np.clip((ds.images - lo) / span, 0.0, 1.0)
        out.append(Dataset(x, ds.labels, ds.split, ds.image_shape))
    return out


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def batches(ds: Dataset, size: int, seed: int = 0, epoch: int = 0) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Shuffled mini-batches; the order depends only on ``(seed, epoch)``."""
    if size < 1:
        raise ParameterError("batch size must be >= 1")
    order = epoch_order(len(ds), seed, epoch)
    for lo in range(0, len(ds), size):
        idx = order[lo : lo + size]
        yield ds.images[idx], ds.labels[idx]


def mnist(root=None, side: int = 8) -> tuple[Dataset, Dataset]:
    """Official MNIST split, downscaled to ``side x side`` (28 keeps full size)."""
    root = Path(root) if root is not None else MNIST_DIR
    train = load_mnist_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte", "train")
    test = load_mnist_idx(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte", "test")
    if side != 28:
        train, test = downscale(train, side), downscale(test, side)
    return train, test


def cifar10(root=None) -> tuple[Dataset, Dataset]:
    root = Path(root) if root is not None else CIFAR_DIR
    train = load_cifar10_bin([root / f"data_batch_{i}.bin" for i in range(1, 6)], "train")
    test = load_cifar10_bin([root / "test_batch.bin"], "test")
    return train, test
