import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter, shift

from hazesep.imaging import BModeImage
from hazesep.metrics import (RoiMask, fwhm_lateral, gcnr, gcnr_samples, ks_statistic, load_mask,
                             mask_to_polygon, psnr, roi_interpolate, save_mask_png)
from hazesep.tensor import SeededRng


class TestPsnr:
    def test_identical(self):
        img = BModeImage(-np.abs(SeededRng(0).normal((8, 8))) * 10)
        assert psnr(img, img) == math.inf

    def test_one_db_error(self):
        ref = BModeImage(np.full((4, 4), -10.0), 60)
        assert psnr(BModeImage(ref.db_values - 1.0, 60), ref) == pytest.approx(20 * np.log10(60))

    def test_array_range(self):
        ref = np.array([[0.0, 2.0]])
        assert psnr(ref + 0.2, ref) == pytest.approx(10 * np.log10(4 / 0.04))

    def test_decreases_with_noise(self):
        rng = SeededRng(1)
        ref = rng.normal((64, 64))
        z = rng.normal((64, 64))
        values = [psnr(ref + s * z, ref) for s in (0.01, 0.1, 1.0)]
        assert values[0] > values[1] > values[2]

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((2, 2)), np.ones((2, 3)))


class TestGcnr:
    def test_identical(self):
        a = SeededRng(2).normal(5000)
        assert gcnr_samples(a, a) == 0.0

    def test_disjoint(self):
        assert gcnr_samples(np.linspace(0, 1, 100), np.linspace(2, 3, 100)) == 1.0

    def test_half_overlap(self):
        rng = SeededRng(3)
        a, b = rng.uniform(10**5), 0.5 + rng.uniform(10**5)
        assert gcnr_samples(a, b) == pytest.approx(0.5, abs=0.02)

    def test_monotone_invariant(self):
        rng = SeededRng(4)
        a, b = rng.normal(20000), 1.0 + rng.normal(20000)
        f = lambda v: np.exp(v / 2)
        assert abs(gcnr_samples(a, b) - gcnr_samples(f(a), f(b))) < 0.02

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0, 3))
    def test_bounded_symmetric(self, seed, offset):
        rng = SeededRng(seed)
        a, b = rng.normal(300), offset + rng.normal(300)
        g = gcnr_samples(a, b)
        assert 0.0 <= g <= 1.0
        assert g == pytest.approx(gcnr_samples(b, a))

    def test_frame_masks(self):
        frame = np.zeros((4, 4))
        frame[:2] = 1.0
        a = np.zeros((4, 4), bool)
        a[:2] = True
        assert gcnr(frame, RoiMask(a), ~a) == 1.0

    def test_empty_roi(self):
        with pytest.raises(ValueError):
            RoiMask(np.zeros((3, 3)))


class TestKs:
    def test_same(self):
        a = SeededRng(5).normal(100)
        assert ks_statistic(a, a) == 0.0

    def test_disjoint(self):
        assert ks_statistic([0, 1, 2], [5, 6]) == 1.0

    def test_example(self):
        assert ks_statistic([1, 2, 3, 4], [3, 4, 5, 6]) == pytest.approx(0.5)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(-100, 100), min_size=1, max_size=40),
           st.lists(st.integers(-100, 100), min_size=1, max_size=40))
    def test_symmetric_and_monotone_invariant(self, a, b):
        d = ks_statistic(a, b)
        assert 0.0 <= d <= 1.0
        assert d == ks_statistic(b, a)
        assert d == pytest.approx(ks_statistic(np.exp(np.array(a) / 50), np.exp(np.array(b) / 50)))


def _smooth_field(width, shape=(128, 128), seed=6):
    z = SeededRng(seed).normal(shape)
    return z if width == 0 else gaussian_filter(z, width, mode="wrap")


class TestFwhm:
    full = np.ones((128, 128), bool)

    def test_white_noise(self):
        assert fwhm_lateral(_smooth_field(0), self.full) <= 1.5

    def test_gaussian_correlation(self):
        # Gaussian smoothing of std s gives a field autocorrelation of std s*sqrt(2).
        width = 4 / np.sqrt(2)
        fw = np.mean([fwhm_lateral(_smooth_field(width, seed=s), self.full) for s in range(4)])
        assert fw == pytest.approx(2.355 * 4, rel=0.2)

    def test_monotone(self):
        values = [fwhm_lateral(_smooth_field(w), self.full) for w in (1, 2, 4)]
        assert values[0] < values[1] < values[2]

    def test_masked_roi(self):
        roi = np.zeros((128, 128), bool)
        roi[20:100, 10:110] = True
        assert fwhm_lateral(_smooth_field(2), roi) == pytest.approx(2.355 * 2 * np.sqrt(2), rel=0.2)

    def test_constant(self):
        with pytest.raises(ValueError):
            fwhm_lateral(np.ones((32, 32)), np.ones((32, 32), bool))

    def test_small_roi(self):
        roi = np.zeros((64, 64), bool)
        roi[:8, :8] = True
        with pytest.raises(ValueError):
            fwhm_lateral(_smooth_field(1, (64, 64)), roi)


def _disk(shape, center, radius):
    r, c = np.indices(shape)
    return (r - center[0]) ** 2 + (c - center[1]) ** 2 <= radius**2


def _iou(a, b):
    return np.sum(a & b) / np.sum(a | b)


class TestRoiInterpolate:
    shape = (80, 80)

    def test_key_index(self):
        a = _disk(self.shape, (30, 30), 12)
        b = _disk(self.shape, (40, 45), 15)
        assert _iou(roi_interpolate([(0, a), (4, b)], 0), a) >= 0.95

    def test_identical_keys(self):
        a = _disk(self.shape, (40, 40), 14)
        assert _iou(roi_interpolate([(0, a), (10, a)], 5), a) >= 0.95

    def test_translation(self):
        a = _disk(self.shape, (30, 30), 10)
        b = _disk(self.shape, (30, 50), 10)
        mid = roi_interpolate([(0, a), (2, b)], 1)
        cols = np.nonzero(mid)[1]
        assert abs(cols.mean() - 40) <= 1.0
        assert _iou(mid, _disk(self.shape, (30, 40), 10)) >= 0.9

    def test_not_bracketed(self):
        a = _disk(self.shape, (30, 30), 10)
        with pytest.raises(ValueError):
            roi_interpolate([(0, a), (2, a)], 3)

    def test_polygon_vertices(self):
        poly = mask_to_polygon(_disk(self.shape, (40, 40), 20))
        assert 8 <= len(poly) < 200


def test_mask_files(tmp_path):
    m = _disk((32, 32), (16, 16), 8)
    save_mask_png(m, tmp_path / "m.png")
    np.testing.assert_array_equal(load_mask(tmp_path / "m.png"), m)
    (tmp_path / "m.json").write_text(json.dumps({"shape": [10, 10], "vertices": [[2, 2], [2, 7], [7, 7], [7, 2]]}))
    loaded = load_mask(tmp_path / "m.json")
    assert loaded.shape == (10, 10) and loaded[4, 4] and not loaded[0, 0]
