"""Grid utilities: bilinear resize and cell partitioning."""

import numpy as np
import pytest

from iconmat.gridops import cell_slices, downsample_to_cells, resize_bilinear
from oracles import resize_bilinear_oracle


class TestResizeBilinear:
    def test_identity(self):
        rng = np.random.default_rng(0)
        arr = rng.uniform(size=(9, 13))
        out = resize_bilinear(arr, (9, 13))
        assert np.array_equal(out, arr)
        assert out is not arr

    def test_matches_per_pixel_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            h, w = rng.integers(2, 20, size=2)
            oh, ow = rng.integers(2, 25, size=2)
            arr = rng.uniform(size=(h, w))
            fast = resize_bilinear(arr, (int(oh), int(ow)))
            slow = resize_bilinear_oracle(arr, (int(oh), int(ow)))
            assert np.allclose(fast, slow, atol=1e-12)

    def test_constant_preserved(self):
        arr = np.full((6, 6), 0.37)
        out = resize_bilinear(arr, (17, 5))
        assert np.allclose(out, 0.37, atol=1e-12)

    def test_range_never_exceeds_input(self):
        rng = np.random.default_rng(2)
        arr = rng.uniform(size=(8, 8))
        out = resize_bilinear(arr, (30, 30))
        assert out.min() >= arr.min() - 1e-12
        assert out.max() <= arr.max() + 1e-12


class TestCellSlices:
    @pytest.mark.parametrize("length,cells", [(10, 3), (64, 16), (7, 7), (5, 8), (1, 4)])
    def test_partition_covers_everything(self, length, cells):
        slices = cell_slices(length, cells)
        assert len(slices) == cells
        covered = np.zeros(length, dtype=int)
        for sl in slices:
            assert sl.stop > sl.start  # no empty cell
            covered[sl] += 1
        if length >= cells:
            # a true partition: every index exactly once
            assert np.all(covered == 1)
        else:
            # more cells than pixels: everything covered at least once
            assert np.all(covered >= 1)

    def test_even_split(self):
        slices = cell_slices(8, 4)
        assert [(s.start, s.stop) for s in slices] == [(0, 2), (2, 4), (4, 6), (6, 8)]


class TestDownsampleToCells:
    def test_mean_and_max_on_even_grid(self):
        arr = np.arange(16, dtype=np.float64).reshape(4, 4)
        mean = downsample_to_cells(arr, (2, 2), reduce="mean")
        mx = downsample_to_cells(arr, (2, 2), reduce="max")
        assert np.array_equal(mean, [[2.5, 4.5], [10.5, 12.5]])
        assert np.array_equal(mx, [[5.0, 7.0], [13.0, 15.0]])

    def test_uneven_blocks_match_manual_slices(self):
        rng = np.random.default_rng(3)
        arr = rng.uniform(size=(7, 5))
        out = downsample_to_cells(arr, (3, 2), reduce="mean")
        rows = cell_slices(7, 3)
        cols = cell_slices(5, 2)
        for i, rs in enumerate(rows):
            for j, cs in enumerate(cols):
                assert out[i, j] == pytest.approx(arr[rs, cs].mean(), abs=1e-15)
