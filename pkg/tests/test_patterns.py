import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lsm_bench import patterns
from lsm_bench.patterns import (
    GridShape,
    PatternKind,
    PixelSelection,
    rasterize_line,
    scanline_from_endpoints,
    select_chessboard,
    select_fullscale,
    select_patch,
    select_scanline,
)

shapes = st.builds(GridShape, st.integers(1, 32), st.integers(1, 32))


def _well_formed(sel: PixelSelection):
    ids = sel.pixel_ids
    assert ids.size > 0
    assert np.all(np.diff(ids) > 0)
    assert ids[0] >= 0 and ids[-1] < sel.shape.size


class TestFullscale:
    def test_mnist_grid(self):
        sel = select_fullscale(GridShape(28, 28))
        assert len(sel) == 784
        np.testing.assert_array_equal(sel.pixel_ids, np.arange(784))

    def test_single_pixel(self):
        assert select_fullscale(GridShape(1, 1)).pixel_ids.tolist() == [0]

    def test_jaffe1_grid(self):
        sel = select_fullscale(GridShape(10, 45))
        assert len(sel) == 450 and sel.pixel_ids[-1] == 449


class TestChessboard:
    def test_quarter_of_mnist(self):
        assert len(select_chessboard(GridShape(28, 28), 2)) == 196

    def test_small_grid_enumeration(self):
        expected = sorted(r * 4 + c for r in (0, 2) for c in (0, 2))
        assert select_chessboard(GridShape(4, 4), 2).pixel_ids.tolist() == expected

    def test_stride_one_is_fullscale(self):
        assert select_chessboard(GridShape(3, 3), 1) == select_fullscale(GridShape(3, 3))

    def test_rejects_zero_stride(self):
        with pytest.raises(ValueError):
            select_chessboard(GridShape(3, 3), 0)

    @given(shapes)
    def test_count_formula(self, shape):
        sel = select_chessboard(shape, 2)
        _well_formed(sel)
        assert len(sel) == -(-shape.height // 2) * -(-shape.width // 2)
        if shape.height % 2 == 0 and shape.width % 2 == 0:
            assert 4 * len(sel) == shape.size


class TestPatch:
    def test_default_geometry_on_mnist(self):
        sel = select_patch(GridShape(28, 28), 2, 4)
        assert len(sel) == 7 * 7 * 4

    def test_one_patch_covers_grid(self):
        assert len(select_patch(GridShape(4, 4), 4, 4)) == 16

    def test_patch_larger_than_grid(self):
        with pytest.raises(ValueError):
            select_patch(GridShape(3, 3), 4, 4)

    def test_stride_below_size(self):
        with pytest.raises(ValueError):
            select_patch(GridShape(8, 8), 3, 2)

    @given(shapes, st.integers(1, 6), st.integers(0, 6))
    def test_matches_set_union(self, shape, size, extra):
        if size > min(shape.height, shape.width):
            return
        stride = size + extra
        sel = select_patch(shape, size, stride)
        _well_formed(sel)
        oracle = set()
        r = 0
        while r + size <= shape.height:
            c = 0
            while c + size <= shape.width:
                oracle |= {(r + i) * shape.width + (c + j) for i in range(size) for j in range(size)}
                c += stride
            r += stride
        assert set(sel.pixel_ids.tolist()) == oracle


class TestScanline:
    def test_forced_diagonal(self, monkeypatch):
        shape = GridShape(28, 28)
        monkeypatch.setattr(patterns, "_draw_endpoints", lambda s, n, rng: [((0, 0), (27, 27))])
        sel = select_scanline(shape, 1, seed=123)
        assert sel.pixel_ids.tolist() == [k * 29 for k in range(28)]

    def test_diagonal_from_endpoints(self):
        sel = scanline_from_endpoints(GridShape(28, 28), [((0, 0), (27, 27))])
        assert sel.pixel_ids.tolist() == [k * 29 for k in range(28)]

    def test_zero_lines_rejected(self):
        with pytest.raises(ValueError):
            select_scanline(GridShape(5, 5), 0)

    def test_deterministic(self):
        a = select_scanline(GridShape(28, 28), 7, seed=3)
        b = select_scanline(GridShape(28, 28), 7, seed=3)
        assert a == b
        assert a != select_scanline(GridShape(28, 28), 7, seed=4)

    def test_default_count_matches_chessboard_density(self):
        shape = GridShape(28, 28)
        sizes = [len(select_scanline(shape, None, seed=s)) for s in range(20)]
        assert abs(np.mean(sizes) - 196) < 0.15 * 196

    @given(st.integers(-20, 20), st.integers(-20, 20), st.integers(-20, 20), st.integers(-20, 20))
    def test_line_is_connected(self, r0, c0, r1, c1):
        pts = rasterize_line(r0, c0, r1, c1)
        assert pts[0] == (r0, c0) and pts[-1] == (r1, c1)
        assert len(pts) == max(abs(r1 - r0), abs(c1 - c0)) + 1
        for (a, b), (c, d) in zip(pts, pts[1:]):
            assert max(abs(a - c), abs(b - d)) == 1

    @settings(max_examples=30)
    @given(shapes, st.integers(1, 10), st.integers(0, 1000))
    def test_well_formed(self, shape, n, seed):
        _well_formed(select_scanline(shape, n, seed))


def test_pattern_kind_dispatch():
    shape = GridShape(28, 28)
    assert PatternKind("fullscale").select(shape) == select_fullscale(shape)
    assert PatternKind("chessboard").select(shape) == select_chessboard(shape)
    assert PatternKind("patch").select(shape) == select_patch(shape, 2, 4)
    with pytest.raises(ValueError):
        PatternKind("spiral")


def test_ranks_and_dump(tmp_path):
    sel = select_chessboard(GridShape(4, 4))
    np.testing.assert_array_equal(sel.ranks([0, 2, 8, 10, 1]), [0, 1, 2, 3, -1])
    sel.dump(tmp_path / "sel.txt")
    assert (tmp_path / "sel.txt").read_text() == "0\n2\n8\n10\n"
    assert PixelSelection.load(tmp_path / "sel.txt", sel.shape) == sel


def test_invalid_selection():
    with pytest.raises(ValueError):
        PixelSelection(GridShape(2, 2), [1, 1])
    with pytest.raises(ValueError):
        PixelSelection(GridShape(2, 2), [4])
    with pytest.raises(ValueError):
        GridShape(0, 3)
