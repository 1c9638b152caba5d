"""Dataset parsing and class-indexed sampling.

Two on-disk formats are supported, both parsed byte-exactly:

* IDX (big-endian): magic 0x00000803 for image files, 0x00000801 for
  label files, dimensions cross-checked between the pair.
* CIFAR-10 binary: records of 1 label byte + 3072 channel-major pixel
  bytes, conventionally 10000 records per file.

Pixels stay uint8 until normalization, which maps x/255 through the
per-channel (mean, std) carried by the dataset config so the teacher and
the synthesis loop share identical input space.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD = 3073


class FormatError(RuntimeError):
    """Malformed dataset file."""


@dataclass
class RawDataset:
    """8-bit images with labels plus normalization constants."""

    images: np.ndarray  # (count, C, H, W) uint8
    labels: np.ndarray  # (count,) int64
    num_classes: int
    mean: np.ndarray  # (C,) float32, in [0,1] pixel units
    std: np.ndarray  # (C,) float32

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise FormatError(
                f"image count {len(self.images)} != label count {len(self.labels)}"
            )
        if len(self.images) == 0:
            raise FormatError("empty dataset")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise FormatError(f"label outside [0,{self.num_classes})")
        counts = np.bincount(self.labels, minlength=self.num_classes)
        if (counts == 0).any():
            empty = int(np.flatnonzero(counts == 0)[0])
            raise FormatError(f"class {empty} has no examples")

    @property
    def count(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]

    def normalize(self, ordinals) -> np.ndarray:
        """uint8 images -> normalized float32 (n, C, H, W)."""
        x = self.images[ordinals].astype(np.float32) / 255.0
        return (x - self.mean.reshape(1, -1, 1, 1)) / self.std.reshape(1, -1, 1, 1)

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        """Inverse of normalize, back to [0,1] pixel units."""
        return x * self.std.reshape(1, -1, 1, 1) + self.mean.reshape(1, -1, 1, 1)


@dataclass
class ClassIndex:
    """Sorted per-class ordinal lists partitioning [0, count)."""

    per_class: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def build(cls, ds: RawDataset) -> "ClassIndex":
        return cls([np.flatnonzero(ds.labels == c) for c in range(ds.num_classes)])


def _read_be_u32(buf: bytes, off: int) -> int:
    return struct.unpack_from(">I", buf, off)[0]


def parse_idx(image_path, label_path) -> tuple[np.ndarray, np.ndarray]:
    """Parse an IDX image/label file pair into (images uint8, labels)."""
    img_buf = open(image_path, "rb").read()
    lab_buf = open(label_path, "rb").read()
    if len(img_buf) < 16:
        raise FormatError(f"{image_path}: header truncated at {len(img_buf)} bytes")
    magic = _read_be_u32(img_buf, 0)
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"{image_path}: bad magic 0x{magic:08x}")
    count, rows, cols = (_read_be_u32(img_buf, o) for o in (4, 8, 12))
    expect = 16 + count * rows * cols
    if len(img_buf) != expect:
        raise FormatError(
            f"{image_path}: expected {expect} bytes, found {len(img_buf)}"
        )
    if len(lab_buf) < 8:
        raise FormatError(f"{label_path}: header truncated at {len(lab_buf)} bytes")
    lmagic = _read_be_u32(lab_buf, 0)
    if lmagic != IDX_LABEL_MAGIC:
        raise FormatError(f"{label_path}: bad magic 0x{lmagic:08x}")
    lcount = _read_be_u32(lab_buf, 4)
    if lcount != count:
        raise FormatError(
            f"label count {lcount} != image count {count} "
            f"({label_path} vs {image_path})"
        )
    if len(lab_buf) != 8 + lcount:
        raise FormatError(f"{label_path}: expected {8 + lcount} bytes, found {len(lab_buf)}")
    if count == 0:
        raise FormatError(f"{image_path}: empty dataset")
    images = np.frombuffer(img_buf, dtype=np.uint8, offset=16).reshape(
        count, 1, rows, cols
    )
    labels = np.frombuffer(lab_buf, dtype=np.uint8, offset=8).astype(np.int64)
    return images.copy(), labels


def write_idx(image_path, label_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Serialize (count,1,H,W) uint8 images + labels as an IDX pair."""
    count, c, rows, cols = images.shape
    if c != 1:
        raise FormatError("IDX image files hold single-channel data")
    with open(image_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, count, rows, cols))
        f.write(np.ascontiguousarray(images, dtype=np.uint8).tobytes())
    with open(label_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, count))
        f.write(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())


def parse_cifar_bin(paths) -> tuple[np.ndarray, np.ndarray]:
    """Parse CIFAR-10 binary batch files into (images uint8, labels)."""
    all_images, all_labels = [], []
    for path in paths:
        buf = open(path, "rb").read()
        if len(buf) == 0 or len(buf) % CIFAR_RECORD != 0:
            offset = (len(buf) // CIFAR_RECORD) * CIFAR_RECORD
            raise FormatError(
                f"{path}: length {len(buf)} is not a multiple of {CIFAR_RECORD} "
                f"(truncated record at byte offset {offset})"
            )
        records = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        all_labels.append(records[:, 0].astype(np.int64))
        all_images.append(records[:, 1:].reshape(-1, 3, 32, 32).copy())
    return np.concatenate(all_images), np.concatenate(all_labels)


def write_cifar_bin(path, images: np.ndarray, labels: np.ndarray) -> None:
    """Serialize (count,3,32,32) uint8 images + labels as one binary batch."""
    count = len(images)
    records = np.empty((count, CIFAR_RECORD), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = images.reshape(count, -1)
    open(path, "wb").write(records.tobytes())


def load_dataset(kind: str, image_sources, label_source, num_classes: int,
                 mean, std) -> RawDataset:
    """Parse files of the given kind into a validated RawDataset."""
    if kind == "mnist":
        images, labels = parse_idx(image_sources, label_source)
    elif kind == "cifar10":
        images, labels = parse_cifar_bin(image_sources)
    else:
        raise FormatError(f"unknown dataset kind {kind!r}")
    return RawDataset(
        images=images,
        labels=labels,
        num_classes=num_classes,
        mean=np.asarray(mean, dtype=np.float32),
        std=np.asarray(std, dtype=np.float32),
    )


def sample_init_images(ds: RawDataset, idx: ClassIndex, cls: int, ipc: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Uniformly sample ipc ordinals of one class, without replacement
    when the class is large enough."""
    members = idx.per_class[cls]
    if len(members) == 0:
        raise ValueError(f"class {cls} is empty")
    if ipc == 0:
        return np.empty(0, dtype=np.int64)
    if ipc <= len(members):
        return np.sort(rng.choice(members, size=ipc, replace=False))
    log.warning(
        "class %d has %d members < ipc %d; sampling with replacement",
        cls, len(members), ipc,
    )
    return np.sort(rng.choice(members, size=ipc, replace=True))
