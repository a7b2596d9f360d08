"""MNIST IDX parsing, serialization and class-filtered subsets.

IDX layout (all integers big-endian)::

    offset  type     value
    0       uint32   magic: 0x00000803 images, 0x00000801 labels
    4       uint32   item count
    8       uint32   rows        (images only)
    12      uint32   columns     (images only)
    16/8    uint8[]  payload

Gzipped files are decompressed transparently.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyDatasetError, FormatError, InvalidArgument

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
GZIP_MAGIC = b"\x1f\x8b"


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """H x W pixel grid with values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise InvalidArgument(f"image must be 2-D, got shape {v.shape}")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise InvalidArgument("pixel values must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def to_bytes_scale(self) -> np.ndarray:
        """Pixels on the raw 0-255 scale (float)."""
        return self.values * 255.0


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Images stacked as an (n, H, W) array with contiguous class labels.

    ``class_map`` maps an original digit to its class index.
    """

    images: np.ndarray
    labels: np.ndarray
    class_map: dict

    def __post_init__(self):
        images = np.asarray(self.images, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 3 or len(images) != len(labels):
            raise InvalidArgument("images must be (n, H, W) and match the label count")
        n_classes = len(self.class_map)
        if len(labels) and (labels.min() < 0 or labels.max() >= n_classes):
            raise InvalidArgument("label outside the class map")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_map", dict(self.class_map))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_map)

    @property
    def digits(self) -> list[int]:
        inverse = {c: d for d, c in self.class_map.items()}
        return [inverse[c] for c in range(self.num_classes)]

    def tensor(self, index: int) -> ImageTensor:
        return ImageTensor(self.images[index])

    def flat(self) -> np.ndarray:
        return self.images.reshape(len(self), -1)

    def original_digits(self) -> np.ndarray:
        return np.asarray(self.digits, dtype=np.int64)[self.labels]


def _read_bytes(source) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        data = bytes(source)
    elif isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    else:
        data = source.read()
    if data[:2] == GZIP_MAGIC:
        data = gzip.decompress(data)
    return data


def _header(data: bytes, expected_magic: int, n_dims: int) -> tuple[int, ...]:
    size = 4 + 4 * n_dims
    if len(data) < size:
        raise FormatError(f"truncated IDX header: need {size} bytes, have {len(data)}", offset=len(data))
    magic, *dims = struct.unpack(f">I{n_dims}I", data[:size])
    if magic != expected_magic:
        raise FormatError(f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0)
    return tuple(dims)


def parse_idx_images_raw(source) -> np.ndarray:
    """Raw uint8 pixels as an (n, rows, cols) array."""
    data = _read_bytes(source)
    count, rows, cols = _header(data, IMAGE_MAGIC, 3)
    need = 16 + count * rows * cols
    if len(data) < need:
        raise FormatError(f"truncated image payload: need {need} bytes, have {len(data)}", offset=len(data))
    return np.frombuffer(data, dtype=np.uint8, count=count * rows * cols, offset=16).reshape(count, rows, cols)


def parse_idx_images(source) -> list[ImageTensor]:
    raw = parse_idx_images_raw(source)
    scaled = raw.astype(float) / 255.0
    return [ImageTensor(img) for img in scaled]


def parse_idx_labels(source) -> np.ndarray:
    data = _read_bytes(source)
    (count,) = _header(data, LABEL_MAGIC, 1)
    need = 8 + count
    if len(data) < need:
        raise FormatError(f"truncated label payload: need {need} bytes, have {len(data)}", offset=len(data))
    labels = np.frombuffer(data, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise FormatError(f"label byte {labels[bad[0]]} > 9", offset=8 + int(bad[0]))
    return labels


def write_idx_images(images: np.ndarray | Sequence[ImageTensor]) -> bytes:
    """Serialize images (values in [0, 1]) to IDX bytes, rounding to uint8."""
    arr = np.stack([im.values if isinstance(im, ImageTensor) else im for im in images]) if len(images) else np.zeros((0, 0, 0))
    if arr.ndim != 3:
        raise InvalidArgument("images must stack to (n, rows, cols)")
    raw = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    n, rows, cols = raw.shape
    return struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols) + raw.tobytes()


def write_idx_labels(labels: Iterable[int]) -> bytes:
    arr = np.asarray(list(labels), dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise InvalidArgument("labels must fit in one unsigned byte")
    return struct.pack(">II", LABEL_MAGIC, len(arr)) + arr.astype(np.uint8).tobytes()


def load_dataset(images_path, labels_path) -> LabeledDataset:
    """Load a full IDX pair; labels are the digits themselves (class_map identity)."""
    raw = parse_idx_images_raw(images_path)
    labels = parse_idx_labels(labels_path)
    if len(raw) != len(labels):
        raise FormatError(f"image count {len(raw)} does not match label count {len(labels)}")
    return LabeledDataset(raw.astype(float) / 255.0, labels, {d: d for d in range(10)})


def subset(
    dataset: LabeledDataset,
    digits: Iterable[int],
    per_class_cap: int | None = None,
    seed: int = 0,
) -> LabeledDataset:
    """Keep only ``digits``, remap them to 0..k-1 in ascending order, shuffle by ``seed``.

    ``dataset`` labels are interpreted through its own class map, so a subset of
    a subset keeps referring to original digits.
    """
    wanted = sorted(set(int(d) for d in digits))
    if not wanted:
        raise InvalidArgument("digit set must be non-empty")
    original = dataset.original_digits()
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    keep: list[int] = []
    taken = {d: 0 for d in wanted}
    for idx in order:
        d = int(original[idx])
        if d in taken and (per_class_cap is None or taken[d] < per_class_cap):
            taken[d] += 1
            keep.append(int(idx))
    if not keep:
        raise EmptyDatasetError(f"no samples for digits {wanted}")
    class_map = {d: i for i, d in enumerate(wanted)}
    keep_arr = np.asarray(keep)
    new_labels = np.array([class_map[int(d)] for d in original[keep_arr]], dtype=np.int64)
    return LabeledDataset(dataset.images[keep_arr], new_labels, class_map)
