"""Input patterns: which pixels of an H x W frame become input neurons.

Pixel ids are row-major (``id = row * W + col``).  Every selector returns a
:class:`PixelSelection` whose ids are sorted, unique and in range, so the
rank of a pixel inside the selection can be used directly as its
input-neuron id.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

PATTERN_TAGS = ("fullscale", "scanline", "chessboard", "patch")


@dataclass(frozen=True)
class GridShape:
    height: int
    width: int

    def __post_init__(self):
        if int(self.height) < 1 or int(self.width) < 1:
            raise ValueError(f"grid shape must be positive, got {self.height}x{self.width}")

    @property
    def size(self) -> int:
        return self.height * self.width

    def as_tuple(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True, eq=False)
class PixelSelection:
    shape: GridShape
    pixel_ids: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.pixel_ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise ValueError("pixel selection must be a non-empty 1-D id list")
        if ids[0] < 0 or ids[-1] >= self.shape.size or np.any(np.diff(ids) <= 0):
            raise ValueError("pixel ids must be strictly increasing and inside the grid")
        ids.setflags(write=False)
        object.__setattr__(self, "pixel_ids", ids)

    def __len__(self) -> int:
        return int(self.pixel_ids.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PixelSelection):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.pixel_ids, other.pixel_ids)

    def __hash__(self):
        return hash((self.shape, self.pixel_ids.tobytes()))

    def mask(self) -> np.ndarray:
        """Boolean H x W mask of the retained pixels."""
        m = np.zeros(self.shape.size, dtype=bool)
        m[self.pixel_ids] = True
        return m.reshape(self.shape.as_tuple())

    def ranks(self, pixel_ids) -> np.ndarray:
        """Dense input-neuron ids for ``pixel_ids``; -1 where a pixel is not selected."""
        pixel_ids = np.asarray(pixel_ids, dtype=np.int64)
        pos = np.searchsorted(self.pixel_ids, pixel_ids)
        pos_clipped = np.minimum(pos, len(self) - 1)
        hit = self.pixel_ids[pos_clipped] == pixel_ids
        return np.where(hit, pos_clipped, -1)

    def dump(self, path) -> None:
        Path(path).write_text("".join(f"{i}\n" for i in self.pixel_ids))

    @classmethod
    def load(cls, path, shape: GridShape) -> "PixelSelection":
        ids = [int(line) for line in Path(path).read_text().split()]
        return cls(shape, np.array(ids, dtype=np.int64))


def _from_mask(shape: GridShape, mask: np.ndarray) -> PixelSelection:
    return PixelSelection(shape, np.flatnonzero(mask.ravel()))


def select_fullscale(shape: GridShape) -> PixelSelection:
    return PixelSelection(shape, np.arange(shape.size, dtype=np.int64))


def select_chessboard(shape: GridShape, stride: int = 2) -> PixelSelection:
    """Keep pixel (r, c) when both r and c are multiples of ``stride``."""
    if stride < 1:
        raise ValueError("chessboard stride must be >= 1")
    mask = np.zeros(shape.as_tuple(), dtype=bool)
    mask[::stride, ::stride] = True
    return _from_mask(shape, mask)


def select_patch(shape: GridShape, patch_size: int = 2, patch_stride: int = 4) -> PixelSelection:
    """Evenly spaced ``patch_size`` squares whose top-left corners sit on a
    ``patch_stride`` lattice; squares that would cross the border are dropped."""
    if patch_size < 1 or patch_size > min(shape.height, shape.width):
        raise ValueError(f"patch size {patch_size} does not fit grid {shape.height}x{shape.width}")
    if patch_stride < patch_size:
        raise ValueError("patch stride must be >= patch size")
    mask = np.zeros(shape.as_tuple(), dtype=bool)
    for r in range(0, shape.height - patch_size + 1, patch_stride):
        for c in range(0, shape.width - patch_size + 1, patch_stride):
            mask[r:r + patch_size, c:c + patch_size] = True
    return _from_mask(shape, mask)


def rasterize_line(r0: int, c0: int, r1: int, c1: int) -> list[tuple[int, int]]:
    """Integer Bresenham rasterization, endpoints included."""
    points = []
    dr, dc = abs(r1 - r0), -abs(c1 - c0)
    sr = 1 if r0 < r1 else -1
    sc = 1 if c0 < c1 else -1
    err = dr + dc
    r, c = r0, c0
    while True:
        points.append((r, c))
        if r == r1 and c == c1:
            return points
        e2 = 2 * err
        if e2 >= dc:
            err += dc
            r += sr
        if e2 <= dr:
            err += dr
            c += sc


def border_pixels(shape: GridShape) -> np.ndarray:
    """(row, col) pairs of the image border, each listed once."""
    h, w = shape.height, shape.width
    mask = np.zeros((h, w), dtype=bool)
    mask[0, :] = mask[-1, :] = True
    mask[:, 0] = mask[:, -1] = True
    return np.argwhere(mask)


def _draw_endpoints(shape: GridShape, n_lines: int, rng: np.random.Generator):
    border = border_pixels(shape)
    if len(border) < 2:
        # 1x1 grid: the only line is the single pixel
        return [(tuple(border[0]), tuple(border[0]))] * n_lines
    lines = []
    for _ in range(n_lines):
        a = b = rng.integers(len(border))
        while b == a:
            b = rng.integers(len(border))
        lines.append((tuple(int(v) for v in border[a]), tuple(int(v) for v in border[b])))
    return lines


def scanline_from_endpoints(shape: GridShape, endpoints: Iterable[Sequence[Sequence[int]]]) -> PixelSelection:
    mask = np.zeros(shape.as_tuple(), dtype=bool)
    for (r0, c0), (r1, c1) in endpoints:
        for r, c in rasterize_line(r0, c0, r1, c1):
            mask[r, c] = True
    return _from_mask(shape, mask)


def select_scanline(shape: GridShape, n_lines: Optional[int] = None, seed: int = 0) -> PixelSelection:
    """Union of ``n_lines`` random border-to-border lines.

    When ``n_lines`` is None the count from :func:`default_scanline_count` is
    used, which matches the stride-2 chessboard density.
    """
    if n_lines is None:
        n_lines = default_scanline_count(shape)
    if n_lines < 1:
        raise ValueError("scanline pattern needs at least one line")
    rng = np.random.default_rng(seed)
    return scanline_from_endpoints(shape, _draw_endpoints(shape, n_lines, rng))


def default_scanline_count(shape: GridShape, trials: int = 16) -> int:
    target = len(select_chessboard(shape, 2))
    needed = []
    rng = np.random.default_rng(0x5CA9)
    for _ in range(trials):
        mask = np.zeros(shape.as_tuple(), dtype=bool)
        n = 0
        while mask.sum() < target and n < 10 * shape.size:
            ((r0, c0), (r1, c1)), = _draw_endpoints(shape, 1, rng)
            for r, c in rasterize_line(r0, c0, r1, c1):
                mask[r, c] = True
            n += 1
        needed.append(n)
    return max(1, int(round(float(np.mean(needed)))))


@dataclass(frozen=True)
class PatternKind:
    tag: str = "fullscale"
    scanline_count: Optional[int] = None
    scanline_seed: int = 0
    patch_size: int = 2
    patch_stride: int = 4
    chessboard_stride: int = 2

    def __post_init__(self):
        if self.tag not in PATTERN_TAGS:
            raise ValueError(f"unknown pattern {self.tag!r}; expected one of {PATTERN_TAGS}")
        if self.chessboard_stride < 1:
            raise ValueError("chessboard stride must be >= 1")
        if self.scanline_count is not None and self.scanline_count < 1:
            raise ValueError("scanline count must be >= 1")

    def select(self, shape: GridShape) -> PixelSelection:
        if self.tag == "fullscale":
            return select_fullscale(shape)
        if self.tag == "chessboard":
            return select_chessboard(shape, self.chessboard_stride)
        if self.tag == "patch":
            return select_patch(shape, self.patch_size, self.patch_stride)
        return select_scanline(shape, self.scanline_count, self.scanline_seed)
