import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter

from hazesep import patchwork
from hazesep.metrics import ks_statistic
from hazesep.patchwork import (PatchLayout, extract, extract_all, interleave, max_overlap_disagreement,
                               plan, stitch, write_back)
from hazesep.tensor import SeededRng

LAYOUT = PatchLayout()


def coverage(p):
    hits = np.zeros(p.frame_shape, dtype=int)
    for i in range(len(p)):
        hits[p.window(i)] += 1
    return hits


class TestPlan:
    def test_default_overlap(self):
        assert LAYOUT.overlap == (13, 7)

    def test_single_patch(self):
        p = plan(128, 64, LAYOUT)
        assert p.origins == [(0, 0)]

    def test_two_lateral(self):
        p = plan(128, 122, PatchLayout(128, 64, overlap_cols=6))
        assert p.col_origins == (0, 58)
        assert coverage(p).min() == 1

    def test_clamped_last(self):
        p = plan(128, 130, PatchLayout(128, 64, overlap_cols=6))
        assert p.col_origins == (0, 58, 66)

    def test_three_by_three(self):
        p = plan(256, 160, LAYOUT)
        assert p.grid_shape == (3, 3)
        assert p.row_origins == (0, 115, 128) and p.col_origins == (0, 57, 96)

    def test_too_small(self):
        with pytest.raises(ValueError, match="zero-pad"):
            plan(100, 64, LAYOUT)

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            PatchLayout(overlap_fraction=1.0)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(16, 200), st.integers(8, 120), st.integers(16, 64), st.integers(8, 32),
           st.floats(0.0, 0.5))
    def test_coverage_and_overlap(self, rows, cols, pr, pc, frac):
        if rows < pr or cols < pc:
            return
        layout = PatchLayout(pr, pc, overlap_fraction=frac)
        p = plan(rows, cols, layout)
        assert coverage(p).min() >= 1
        orow, ocol = layout.overlap
        for origins, size, ov in ((p.row_origins, pr, orow), (p.col_origins, pc, ocol)):
            gaps = np.diff(origins)
            assert np.all(size - gaps >= ov)
        assert p == plan(rows, cols, layout)


class TestExtract:
    def test_full_frame(self):
        f = SeededRng(0).normal((8, 6))
        np.testing.assert_array_equal(extract(f, (0, 0), (8, 6)), f)

    def test_write_back_round_trip(self):
        f = SeededRng(0).normal((8, 6))
        np.testing.assert_array_equal(write_back(f, extract(f, (2, 1), (4, 3)), (2, 1)), f)

    def test_overlapping_share_values(self):
        f = SeededRng(0).normal((8, 6))
        a = extract(f, (0, 0), (5, 4))
        b = extract(f, (3, 2), (5, 4))
        np.testing.assert_array_equal(a[3:, 2:], b[:2, :2])

    def test_out_of_bounds(self):
        with pytest.raises(ValueError):
            extract(np.zeros((4, 4)), (2, 2), (3, 3))


class TestInterleave:
    def test_single_patch_identity(self):
        p = plan(16, 8, PatchLayout(16, 8))
        x = SeededRng(1).normal((1, 16, 8))
        np.testing.assert_array_equal(interleave(x.copy(), p), x)

    def test_two_constant_patches(self):
        p = plan(4, 10, PatchLayout(4, 6, overlap_cols=2))
        x = np.stack([np.full((4, 6), 1.0), np.full((4, 6), 2.0)])
        interleave(x, p)
        np.testing.assert_array_equal(x[0][:, 4:], 2.0)
        np.testing.assert_array_equal(x[0][:, :4], 1.0)
        np.testing.assert_array_equal(x[1], 2.0)

    def test_three_by_three_audit(self):
        p = plan(256, 160, LAYOUT)
        x = SeededRng(2).normal((len(p),) + LAYOUT.shape)
        assert max_overlap_disagreement(x, p) > 0
        interleave(x, p)
        assert max_overlap_disagreement(x, p) == 0.0

    def test_later_wins_on_three_neighbours(self):
        p = plan(20, 20, PatchLayout(12, 12, overlap_rows=4, overlap_cols=4))
        assert p.grid_shape == (2, 2)
        x = np.stack([np.full((12, 12), float(i)) for i in range(4)])
        interleave(x, p)
        # patch 3 (lower right) owns its overlaps with left, upper and upper-left neighbours
        assert x[0][8:, 8:].max() == 3 and x[1][8:, :4].max() == 3 and x[2][:4, 8:].max() == 3

    def test_idempotent(self):
        p = plan(256, 160, LAYOUT)
        x = SeededRng(3).normal((len(p),) + LAYOUT.shape)
        once = interleave(x.copy(), p)
        np.testing.assert_array_equal(interleave(once.copy(), p), once)

    def test_batched_leading_axes(self):
        p = plan(256, 160, LAYOUT)
        x = SeededRng(3).normal((2, len(p)) + LAYOUT.shape)
        single = interleave(x[1].copy(), p)
        np.testing.assert_array_equal(interleave(x, p)[1], single)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            interleave(np.zeros((2, 128, 64)), plan(256, 160, LAYOUT))


class TestStitch:
    def test_single(self):
        p = plan(16, 8, PatchLayout(16, 8))
        x = SeededRng(1).normal((1, 16, 8))
        np.testing.assert_array_equal(stitch(x, p), x[0])

    def test_round_trip(self):
        f = SeededRng(4).normal((256, 160))
        p = plan(256, 160, LAYOUT)
        np.testing.assert_array_equal(stitch(extract_all(f, p), p), f)

    def test_missed_interleave(self):
        p = plan(256, 160, LAYOUT)
        x = extract_all(SeededRng(4).normal((256, 160)), p)
        x[4] += 0.1
        with pytest.raises(ValueError, match="interleave"):
            stitch(x, p)
        interleave(x, p)
        stitch(x, p)


def test_no_seam_after_per_step_interleave():
    # stationary smooth field; every step perturbs and smooths each patch on its own
    # (edge-replicating filter, so patch borders see truncated neighbourhoods), then interleaves
    p = plan(128, 120, PatchLayout(64, 32))
    frame = gaussian_filter(SeededRng(6).normal((128, 120)), 4.0)
    frame /= frame.std()
    x = extract_all(frame, p)
    rng = SeededRng(5)
    for _ in range(20):
        x = x + 0.05 * rng.normal(x.shape)
        x = gaussian_filter(x, (0, 0.7, 0.7), mode="nearest")
        interleave(x, p)
    grad = np.diff(stitch(x, p), axis=1)
    boundary = np.zeros(grad.shape[1], dtype=bool)
    for c in p.col_origins[1:]:
        boundary[c - 1 : c + 1] = True
    for c in p.col_origins[:-1]:
        boundary[c + 31 - 1 : c + 31 + 1] = True
    ks = ks_statistic(grad[:, boundary].ravel(), grad[:, ~boundary].ravel())
    assert ks < 0.1
