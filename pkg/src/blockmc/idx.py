"""IDX image/label file parsing and writing (big-endian, unsigned bytes).

Images carry magic 0x00000803 with dims (count, rows, cols); labels carry
0x00000801 with dims (count,). Malformed input raises FormatError naming
the offending offset.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def load_idx_images(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header, {len(raw)} bytes at offset 0")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGES_MAGIC:
        raise FormatError(f"{path}: bad magic 0x{magic:08x} at offset 0")
    need = 16 + count * rows * cols
    if len(raw) != need:
        raise FormatError(
            f"{path}: expected {need} bytes ({count}x{rows}x{cols}), got {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=np.uint8, offset=16)
    return data.reshape(count, rows, cols).copy()


def load_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header, {len(raw)} bytes at offset 0")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABELS_MAGIC:
        raise FormatError(f"{path}: bad magic 0x{magic:08x} at offset 0")
    need = 8 + count
    if len(raw) != need:
        raise FormatError(f"{path}: expected {need} bytes ({count} labels), got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).copy()


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Load an image/label pair and check the counts agree."""
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if len(images) != len(labels):
        raise FormatError(
            f"count mismatch: {len(images)} images vs {len(labels)} labels"
        )
    return images, labels


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, count, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())
