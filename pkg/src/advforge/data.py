"""Dataset ingestion and batching.

MNIST IDX files are parsed bit-exactly (big-endian headers, raw pixel
bytes); pixel bytes are mapped to [0, 1] by dividing by 255 and nothing
else, since attack budgets are defined on that scale.  Gzipped IDX files
are detected by their two-byte signature and decompressed transparently.
"""

from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import Tensor

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    ("train", "images"): "train-images-idx3-ubyte",
    ("train", "labels"): "train-labels-idx1-ubyte",
    ("test", "images"): "t10k-images-idx3-ubyte",
    ("test", "labels"): "t10k-labels-idx1-ubyte",
}


class DataError(ValueError):
    pass


class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass


@dataclass
class ImageBatch:
    """Batch of images in [0, 1] with integer class labels."""

    images: Tensor  # (batch, channels, height, width)
    labels: np.ndarray  # (batch,) int64

    def __post_init__(self):
        if len(self.labels) != self.images.shape[0]:
            raise DataError(
                f"{len(self.labels)} labels for batch of {self.images.shape[0]} images"
            )

    def __len__(self) -> int:
        return self.images.shape[0]


@dataclass
class DatasetHandle:
    """In-memory dataset; read-only after construction."""

    images: np.ndarray  # (n, c, h, w) float32 in [0, 1]
    labels: np.ndarray  # (n,) int64
    source: str  # "mnist" | "synthetic"
    split: str  # "train" | "test"
    classes: int

    @property
    def size(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])


def _read_binary(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _parse_idx_images(buf: bytes, path) -> np.ndarray:
    if len(buf) < 16:
        raise TruncatedFileError(f"{path}: too short for an IDX image header")
    magic, count, rows, cols = struct.unpack(">IIII", buf[:16])
    if magic != IMAGES_MAGIC:
        raise BadMagicError(f"{path}: magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")
    expected = 16 + count * rows * cols
    if len(buf) < expected:
        raise TruncatedFileError(f"{path}: {len(buf)} bytes, header promises {expected}")
    if len(buf) > expected:
        raise DataError(f"{path}: {len(buf) - expected} unexpected trailing bytes")
    pixels = np.frombuffer(buf, dtype=np.uint8, offset=16)
    return pixels.reshape(count, 1, rows, cols)


def _parse_idx_labels(buf: bytes, path) -> np.ndarray:
    if len(buf) < 8:
        raise TruncatedFileError(f"{path}: too short for an IDX label header")
    magic, count = struct.unpack(">II", buf[:8])
    if magic != LABELS_MAGIC:
        raise BadMagicError(f"{path}: magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")
    expected = 8 + count
    if len(buf) < expected:
        raise TruncatedFileError(f"{path}: {len(buf)} bytes, header promises {expected}")
    if len(buf) > expected:
        raise DataError(f"{path}: {len(buf) - expected} unexpected trailing bytes")
    return np.frombuffer(buf, dtype=np.uint8, offset=8).astype(np.int64)


def load_mnist_idx(images_path, labels_path, split: str = "train") -> DatasetHandle:
    pixels = _parse_idx_images(_read_binary(images_path), images_path)
    labels = _parse_idx_labels(_read_binary(labels_path), labels_path)
    if pixels.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{pixels.shape[0]} images in {images_path} but {labels.shape[0]} labels "
            f"in {labels_path}"
        )
    images = pixels.astype(np.float32) / np.float32(255.0)
    return DatasetHandle(images, labels, source="mnist", split=split, classes=10)


def idx_images_bytes(pixels: np.ndarray) -> bytes:
    """Serialize (n, 1, rows, cols) or (n, rows, cols) uint8 pixels to IDX."""
    if pixels.ndim == 4:
        pixels = pixels[:, 0]
    n, rows, cols = pixels.shape
    return struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + pixels.astype(np.uint8).tobytes()


def idx_labels_bytes(labels: np.ndarray) -> bytes:
    return struct.pack(">II", LABELS_MAGIC, len(labels)) + labels.astype(np.uint8).tobytes()


def resolve_mnist_dir(explicit=None) -> Path:
    """Dataset directory: explicit path, else $ADVFORGE_DATA_DIR, else ./data/mnist."""
    if explicit:
        return Path(explicit)
    env = os.environ.get("ADVFORGE_DATA_DIR")
    if env:
        return Path(env)
    return Path("data") / "mnist"


def find_mnist_file(directory: Path, split: str, kind: str) -> Path | None:
    base = directory / MNIST_FILES[(split, kind)]
    for candidate in (base, base.with_name(base.name + ".gz")):
        if candidate.exists():
            return candidate
    return None


def load_mnist(directory=None, split: str = "train") -> DatasetHandle:
    directory = resolve_mnist_dir(directory)
    images = find_mnist_file(directory, split, "images")
    labels = find_mnist_file(directory, split, "labels")
    if images is None or labels is None:
        raise FileNotFoundError(
            f"MNIST {split} files not found under {directory} "
            f"(set ADVFORGE_DATA_DIR or pass the directory explicitly)"
        )
    return load_mnist_idx(images, labels, split=split)


def make_synthetic(
    n: int, classes: int, side: int, seed: int = 0, split: str = "train"
) -> DatasetHandle:
    """Position-coded squares: class c is a bright square in grid cell c plus
    uniform noise of amplitude 0.1, clamped to [0, 1]."""
    if side < 8:
        raise DataError(f"side must be >= 8, got {side}")
    if n < classes:
        raise DataError(f"need at least one item per class: n={n} < classes={classes}")
    if side // math.ceil(math.sqrt(classes)) < 2:
        raise DataError(f"side {side} too small to place {classes} class templates")
    templates = synthetic_templates(classes, side)
    labels = (np.arange(n) % classes).astype(np.int64)
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-0.1, 0.1, size=(n, 1, side, side)).astype(np.float32)
    images = np.clip(templates[labels] + noise, 0.0, 1.0)
    return DatasetHandle(images, labels, source="synthetic", split=split, classes=classes)


def synthetic_templates(classes: int, side: int) -> np.ndarray:
    """Noise-free class templates, for template-matching oracles."""
    grid = math.ceil(math.sqrt(classes))
    cell = side // grid
    templates = np.full((classes, 1, side, side), 0.15, dtype=np.float32)
    for c in range(classes):
        r, q = divmod(c, grid)
        templates[c, 0, r * cell : (r + 1) * cell, q * cell : (q + 1) * cell] = 0.95
    return templates


def batches(ds: DatasetHandle, batch_size: int, seed: int | None = None):
    """One epoch of ImageBatches; a seeded permutation when seed is given,
    dataset order otherwise.  The final short batch is kept."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    if seed is None:
        order = np.arange(ds.size)
    else:
        order = np.random.default_rng(seed).permutation(ds.size)
    for start in range(0, ds.size, batch_size):
        pick = order[start : start + batch_size]
        yield ImageBatch(Tensor(ds.images[pick]), ds.labels[pick])


def take(ds: DatasetHandle, limit: int) -> DatasetHandle:
    """First `limit` items in dataset order."""
    if limit > ds.size:
        raise DataError(f"limit {limit} exceeds dataset size {ds.size}")
    return DatasetHandle(
        ds.images[:limit], ds.labels[:limit], ds.source, ds.split, ds.classes
    )
