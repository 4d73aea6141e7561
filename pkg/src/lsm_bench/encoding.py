"""Frame and event encoding into spike records, plus the spike-file codec.

Spike file layout (little-endian)::

    b"LSMS" | version:u16 | n_records:u32
    per record: label:u16 | n_spikes:u32 | n_spikes * (index:u32, time_ms:f32)

Spike times are stored as float32, so :class:`SpikeRecord` keeps them in
float32 from the start and a write/read cycle is lossless.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .patterns import PixelSelection

SPIKE_MAGIC = b"LSMS"
SPIKE_VERSION = 1
_HEADER = struct.Struct("<4sHI")
_RECORD_HEADER = struct.Struct("<HI")
_PAIR = np.dtype([("index", "<u4"), ("time", "<f4")])


class SpikeFormatError(ValueError):
    pass


@dataclass(eq=False)
class SpikeRecord:
    indices: np.ndarray
    times: np.ndarray
    duration: float
    label: int = 0

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64).ravel()
        self.times = np.asarray(self.times, dtype=np.float32).ravel()
        if self.indices.shape != self.times.shape:
            raise ValueError("indices and times must have equal length")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.times.size and (self.times.min() < 0 or self.times.max() >= self.duration):
            raise ValueError("spike times must lie in [0, duration)")
        if self.indices.size and self.indices.min() < 0:
            raise ValueError("negative input-neuron index")
        self.label = int(self.label)

    def __len__(self) -> int:
        return int(self.indices.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpikeRecord):
            return NotImplemented
        return (
            self.label == other.label
            and float(self.duration) == float(other.duration)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.times, other.times)
        )

    def steps(self, dt_ms: float) -> np.ndarray:
        """Integration step of every spike."""
        return np.floor(self.times.astype(np.float64) / dt_ms).astype(np.int64)


@dataclass(frozen=True)
class EncodeConfig:
    sim_time_ms: float = 100.0
    n_records: int | None = None
    max_rate_hz: float = 100.0
    dt_ms: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.sim_time_ms <= 0 or self.max_rate_hz <= 0 or self.dt_ms <= 0:
            raise ValueError("sim_time_ms, max_rate_hz and dt_ms must be positive")
        if self.n_records is not None and self.n_records < 1:
            raise ValueError("n_records must be >= 1")
        if self.max_rate_hz * self.dt_ms / 1000.0 > 1.0:
            raise ValueError("max_rate_hz * dt_ms exceeds one spike per step")

    @property
    def n_steps(self) -> int:
        return int(np.ceil(self.sim_time_ms / self.dt_ms - 1e-9))


def encode_frame(image: np.ndarray, selection: PixelSelection, cfg: EncodeConfig,
                 rng: np.random.Generator, label: int = 0) -> SpikeRecord:
    """Bernoulli rate code of one frame over the selected pixels."""
    rates = np.asarray(image, dtype=np.float64).ravel()[selection.pixel_ids]
    p = rates * (cfg.max_rate_hz * cfg.dt_ms / 1000.0)
    fired = rng.random((cfg.n_steps, p.size)) < p
    step, idx = np.nonzero(fired)
    times = step * cfg.dt_ms
    keep = times < cfg.sim_time_ms
    return SpikeRecord(idx[keep], times[keep], cfg.sim_time_ms, label)


def encode_frames(images: Sequence[np.ndarray], labels: Sequence[int],
                  selection: PixelSelection, cfg: EncodeConfig) -> list[SpikeRecord]:
    """Encode ``cfg.n_records`` records, record ``i`` drawn from image ``i % len(images)``.

    Each record has its own generator seeded by ``(cfg.seed, i)`` so the output
    does not depend on encoding order.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 2:
        images = images[None]
    n_images = len(images)
    if n_images == 0:
        raise ValueError("no images to encode")
    if len(labels) != n_images:
        raise ValueError("images and labels differ in length")
    if images.min() < 0.0 or images.max() > 1.0:
        raise ValueError("pixel intensities must lie in [0, 1]")
    if images.shape[1:] != selection.shape.as_tuple():
        raise ValueError(f"image shape {images.shape[1:]} does not match selection grid")
    n_records = cfg.n_records if cfg.n_records is not None else n_images
    records = []
    for i in range(n_records):
        rng = np.random.default_rng([cfg.seed, i])
        k = i % n_images
        records.append(encode_frame(images[k], selection, cfg, rng, int(labels[k])))
    return records


@dataclass(eq=False)
class EventStream:
    """ON/OFF event lists of one recording; pixel ids row-major, times in ms."""

    on_pixels: np.ndarray
    on_times: np.ndarray
    off_pixels: np.ndarray
    off_times: np.ndarray

    def __post_init__(self):
        self.on_pixels = np.asarray(self.on_pixels, dtype=np.int64).ravel()
        self.off_pixels = np.asarray(self.off_pixels, dtype=np.int64).ravel()
        self.on_times = np.asarray(self.on_times, dtype=np.float64).ravel()
        self.off_times = np.asarray(self.off_times, dtype=np.float64).ravel()
        if self.on_pixels.shape != self.on_times.shape or self.off_pixels.shape != self.off_times.shape:
            raise ValueError("paired event lists must have equal length")

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("on_pixels", "on_times", "off_pixels", "off_times"))

    def __len__(self) -> int:
        return int(self.on_pixels.size + self.off_pixels.size)

    @classmethod
    def empty(cls) -> "EventStream":
        return cls([], [], [], [])


def filter_events(stream: EventStream, selection: PixelSelection, sim_time_ms: float) -> EventStream:
    """Drop events outside the selection or at/after ``sim_time_ms``; order preserved."""
    keep_on = (stream.on_times < sim_time_ms) & np.isin(stream.on_pixels, selection.pixel_ids)
    keep_off = (stream.off_times < sim_time_ms) & np.isin(stream.off_pixels, selection.pixel_ids)
    return EventStream(stream.on_pixels[keep_on], stream.on_times[keep_on],
                       stream.off_pixels[keep_off], stream.off_times[keep_off])


def reindex_events(stream: EventStream, selection: PixelSelection, sim_time_ms: float,
                   label: int = 0) -> SpikeRecord:
    """Map a filtered stream onto 2K input neurons: ON -> [0, K), OFF -> [K, 2K).

    Spikes are ordered by time, ties by index.
    """
    k = len(selection)
    on = selection.ranks(stream.on_pixels)
    off = selection.ranks(stream.off_pixels)
    if np.any(on < 0) or np.any(off < 0):
        raise ValueError("event pixel outside the selection; filter the stream first")
    indices = np.concatenate([on, off + k])
    times = np.concatenate([stream.on_times, stream.off_times]).astype(np.float32)
    # float32 rounding may push a time just below the window onto its edge
    times = np.minimum(times, np.nextafter(np.float32(sim_time_ms), np.float32(0)))
    order = np.lexsort((indices, times))
    return SpikeRecord(indices[order], times[order], sim_time_ms, label)


def encode_events(streams: Sequence[EventStream], labels: Sequence[int],
                  selection: PixelSelection, sim_time_ms: float) -> list[SpikeRecord]:
    return [reindex_events(filter_events(s, selection, sim_time_ms), selection, sim_time_ms, lab)
            for s, lab in zip(streams, labels)]


def records_nbytes(records: Sequence[SpikeRecord]) -> int:
    """Size :func:`write_records` would produce, without touching disk."""
    return _HEADER.size + sum(_RECORD_HEADER.size + _PAIR.itemsize * len(r) for r in records)


def write_records(records: Sequence[SpikeRecord], path) -> int:
    """Write ``records`` to ``path``; returns the number of bytes written."""
    chunks = [_HEADER.pack(SPIKE_MAGIC, SPIKE_VERSION, len(records))]
    for r in records:
        if not 0 <= r.label < 2 ** 16:
            raise ValueError(f"label {r.label} does not fit u16")
        if len(r) and r.indices.max() >= 2 ** 32:
            raise ValueError("input index does not fit u32")
        pairs = np.empty(len(r), dtype=_PAIR)
        pairs["index"] = r.indices
        pairs["time"] = r.times
        chunks.append(_RECORD_HEADER.pack(r.label, len(r)))
        chunks.append(pairs.tobytes())
    data = b"".join(chunks)
    Path(path).write_bytes(data)
    return len(data)


def read_records(path, sim_time_ms: float) -> list[SpikeRecord]:
    """Read a spike file.  The simulation window is not stored in the file, so
    the caller supplies it."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise SpikeFormatError("file shorter than header")
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != SPIKE_MAGIC:
        raise SpikeFormatError(f"bad magic {magic!r}")
    if version != SPIKE_VERSION:
        raise SpikeFormatError(f"unsupported version {version}")
    off = _HEADER.size
    records = []
    for _ in range(count):
        if off + _RECORD_HEADER.size > len(data):
            raise SpikeFormatError("truncated record header")
        label, n = _RECORD_HEADER.unpack_from(data, off)
        off += _RECORD_HEADER.size
        end = off + n * _PAIR.itemsize
        if end > len(data):
            raise SpikeFormatError("truncated spike pairs")
        pairs = np.frombuffer(data, dtype=_PAIR, count=n, offset=off)
        records.append(SpikeRecord(pairs["index"].astype(np.int64), pairs["time"].copy(),
                                   sim_time_ms, label))
        off = end
    if off != len(data):
        raise SpikeFormatError("trailing bytes after last record")
    return records
