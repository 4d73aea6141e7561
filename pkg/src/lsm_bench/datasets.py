"""Dataset readers: MNIST IDX, N-MNIST AER event files, and PGM directories.

Writers for each format live here too; they produce fixtures and the
bundled MNIST subset used by the benchmarks.
"""

from __future__ import annotations

import gzip
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .encoding import EventStream
from .patterns import GridShape

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
NMNIST_SHAPE = GridShape(34, 34)


class DatasetFormatError(ValueError):
    pass


@dataclass(eq=False)
class FrameDataset:
    images: np.ndarray  # (n, H, W) float64 in [0, 1]
    labels: np.ndarray
    shape: GridShape

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("intensities must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "FrameDataset":
        return FrameDataset(self.images[idx], self.labels[idx], self.shape)


@dataclass(eq=False)
class EventDataset:
    samples: list
    labels: np.ndarray
    shape: GridShape = NMNIST_SHAPE

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.samples) != len(self.labels):
            raise ValueError("samples and labels differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "EventDataset":
        idx = np.arange(len(self))[idx]
        return EventDataset([self.samples[i] for i in idx], self.labels[idx], self.shape)


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    with _open(path) as f:
        data = f.read()
    if len(data) < 4 + 4 * ndim:
        raise DatasetFormatError(f"{path}: truncated IDX header")
    found = struct.unpack(">I", data[:4])[0]
    if found != magic:
        raise DatasetFormatError(f"{path}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    payload = data[4 + 4 * ndim:]
    need = int(np.prod(dims))
    if len(payload) < need:
        raise DatasetFormatError(f"{path}: truncated IDX payload ({len(payload)} of {need} bytes)")
    return np.frombuffer(payload, dtype=np.uint8, count=need).reshape(dims)


def load_idx(images_path, labels_path, limit: Optional[int] = None) -> FrameDataset:
    """Read an IDX image/label pair (optionally gzipped), keeping the first ``limit``."""
    images = _read_idx(images_path, IDX_IMAGE_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC, 1)
    if len(images) != len(labels):
        raise DatasetFormatError(f"{len(images)} images but {len(labels)} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    shape = GridShape(images.shape[1], images.shape[2])
    return FrameDataset(images.astype(np.float64) / 255.0, labels.astype(np.int64), shape)


def write_idx(images: np.ndarray, labels: Sequence[int], images_path, labels_path) -> None:
    images = np.asarray(images)
    if images.dtype != np.uint8:
        raise ValueError("IDX images must be uint8")
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">4I", IDX_IMAGE_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", IDX_LABEL_MAGIC, len(labels)) + labels.tobytes())


def decode_nmnist(data: bytes, shape: GridShape = NMNIST_SHAPE) -> EventStream:
    """Decode 5-byte AER events: x, y, polarity bit + 23-bit microsecond timestamp."""
    if len(data) % 5:
        raise DatasetFormatError(f"event buffer length {len(data)} is not a multiple of 5")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, 5).astype(np.int64)
    x, y = raw[:, 0], raw[:, 1]
    polarity = raw[:, 2] >> 7
    ts_us = ((raw[:, 2] & 0x7F) << 16) | (raw[:, 3] << 8) | raw[:, 4]
    if np.any(x >= shape.width) or np.any(y >= shape.height):
        raise DatasetFormatError(f"event coordinate outside {shape.height}x{shape.width}")
    pixel = y * shape.width + x
    t_ms = ts_us / 1000.0
    on = polarity == 1
    return EventStream(pixel[on], t_ms[on], pixel[~on], t_ms[~on])


def encode_nmnist(x, y, polarity, ts_us) -> bytes:
    x, y, polarity, ts_us = (np.asarray(a, dtype=np.int64) for a in (x, y, polarity, ts_us))
    if np.any(ts_us < 0) or np.any(ts_us >= 1 << 23):
        raise ValueError("timestamp does not fit 23 bits")
    out = np.empty((x.size, 5), dtype=np.uint8)
    out[:, 0] = x
    out[:, 1] = y
    out[:, 2] = ((polarity != 0).astype(np.int64) << 7) | (ts_us >> 16)
    out[:, 3] = (ts_us >> 8) & 0xFF
    out[:, 4] = ts_us & 0xFF
    return out.tobytes()


def load_nmnist_dir(dir_path, limit: Optional[int] = None,
                    shape: GridShape = NMNIST_SHAPE) -> EventDataset:
    """Load ``<dir>/<digit>/*.bin``.

    Samples are interleaved across classes (first file of each class, then the
    second, ...) so that any prefix taken by ``limit`` is class-balanced.
    """
    root = Path(dir_path)
    per_class = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir() and p.name.isdigit()):
        per_class.append((int(sub.name), sorted(sub.glob("*.bin"))))
    if not per_class:
        raise DatasetFormatError(f"{root}: no class subdirectories")
    order = []
    for k in range(max(len(files) for _, files in per_class)):
        order.extend((label, files[k]) for label, files in per_class if k < len(files))
    if limit is not None:
        order = order[:limit]
    samples, labels = [], []
    for label, path in order:
        try:
            samples.append(decode_nmnist(path.read_bytes(), shape))
        except DatasetFormatError as e:
            raise DatasetFormatError(f"{path}: {e}") from None
        labels.append(label)
    return EventDataset(samples, np.array(labels, dtype=np.int64), shape)


# --- PGM directories (stand-in for face-expression sets) -------------------

_PGM_TOKEN = re.compile(rb"(?:\s*(?:#[^\n]*\n)?)*\s*(\S+)")


def read_pgm(path) -> np.ndarray:
    """Binary (P5) PGM to float intensities in [0, 1]."""
    data = Path(path).read_bytes()
    fields, pos = [], 0
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if not m:
            raise DatasetFormatError(f"{path}: truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise DatasetFormatError(f"{path}: not a binary PGM")
    try:
        width, height, maxval = (int(v) for v in fields[1:])
    except ValueError:
        raise DatasetFormatError(f"{path}: bad PGM header") from None
    if not 0 < maxval < 65536:
        raise DatasetFormatError(f"{path}: bad maxval {maxval}")
    pos += 1  # single whitespace byte before the raster
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = width * height * dtype.itemsize
    if len(data) - pos < need:
        raise DatasetFormatError(f"{path}: truncated PGM raster")
    pixels = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    return pixels.reshape(height, width).astype(np.float64) / maxval


def write_pgm(path, image: np.ndarray, maxval: int = 255) -> None:
    image = np.asarray(image)
    h, w = image.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode()
    Path(path).write_bytes(header + image.astype(np.uint8).tobytes())


@dataclass(frozen=True)
class CropSpec:
    """Crop window; ``top``/``left`` of None centers the window on that axis."""

    height: int
    width: int
    top: Optional[int] = None
    left: Optional[int] = None


def crop(image: np.ndarray, spec: Optional[CropSpec]) -> np.ndarray:
    if spec is None:
        return image
    h, w = image.shape
    ch, cw = min(spec.height, h), min(spec.width, w)
    top = (h - ch) // 2 if spec.top is None else spec.top
    left = (w - cw) // 2 if spec.left is None else spec.left
    if top < 0 or left < 0 or top + ch > h or left + cw > w:
        raise ValueError(f"crop window {spec} falls outside a {h}x{w} image")
    return image[top:top + ch, left:left + cw]


def resize_nearest(image: np.ndarray, shape: GridShape) -> np.ndarray:
    h, w = image.shape
    rows = (np.arange(shape.height) * h) // shape.height
    cols = (np.arange(shape.width) * w) // shape.width
    return image[np.ix_(rows, cols)]


def label_from_name(name: str) -> int:
    head = name.split("_", 1)[0]
    if "_" not in name or not head.isdigit():
        raise DatasetFormatError(f"cannot parse class prefix from {name!r}; expected '<class>_<name>.pgm'")
    return int(head)


def load_image_dir(dir_path, target_shape: GridShape, crop_spec: Optional[CropSpec] = None,
                   limit: Optional[int] = None) -> FrameDataset:
    paths = sorted(Path(dir_path).glob("*.pgm"))
    if limit is not None:
        paths = paths[:limit]
    images, labels = [], []
    for p in paths:
        labels.append(label_from_name(p.name))
        images.append(resize_nearest(crop(read_pgm(p), crop_spec), target_shape))
    if not images:
        raise DatasetFormatError(f"{dir_path}: no .pgm files")
    return FrameDataset(np.stack(images), np.array(labels), target_shape)


# --- bundled MNIST subset ----------------------------------------------------

MNIST_SUBSET_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                      "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def mnist_subset_csv() -> Path:
    """Path of the 5000-sample MNIST CSV shipped with ``mlxtend``."""
    try:
        from importlib.util import find_spec
        spec = find_spec("mlxtend")
    except ImportError:
        spec = None
    if spec is None or not spec.submodule_search_locations:
        raise FileNotFoundError("mlxtend is not installed; `pip install mlxtend` provides the MNIST subset")
    path = Path(list(spec.submodule_search_locations)[0]) / "data" / "data" / "mnist_5k.csv.gz"
    if not path.exists():
        raise FileNotFoundError(path)
    return path


def prepare_mnist_subset(out_dir, n_test: int = 1000, seed: int = 0, csv_path=None) -> dict:
    """Shuffle the 5k MNIST subset once and write train/test IDX files.

    The source CSV is sorted by class; the seeded shuffle makes prefixes of
    the written splits class-mixed.  Returns the four written paths.
    """
    csv_path = Path(csv_path) if csv_path else mnist_subset_csv()
    with gzip.open(csv_path, "rt") as f:
        table = np.loadtxt(f, delimiter=",", dtype=np.int64)
    images = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1]
    order = np.random.default_rng(seed).permutation(len(labels))
    images, labels = images[order], labels[order]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in MNIST_SUBSET_FILES}
    n_train = len(labels) - n_test
    write_idx(images[:n_train], labels[:n_train], paths[MNIST_SUBSET_FILES[0]], paths[MNIST_SUBSET_FILES[1]])
    write_idx(images[n_train:], labels[n_train:], paths[MNIST_SUBSET_FILES[2]], paths[MNIST_SUBSET_FILES[3]])
    return {
        "train_images": str(paths[MNIST_SUBSET_FILES[0]]),
        "train_labels": str(paths[MNIST_SUBSET_FILES[1]]),
        "test_images": str(paths[MNIST_SUBSET_FILES[2]]),
        "test_labels": str(paths[MNIST_SUBSET_FILES[3]]),
    }
