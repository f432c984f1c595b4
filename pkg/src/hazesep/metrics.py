"""Image-quality metrics: PSNR, gCNR, KS statistic, lateral speckle FWHM, ROI interpolation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from skimage.draw import polygon2mask
from skimage.measure import approximate_polygon, find_contours

from ._validation import as_array, check_same_shape
from .imaging import BModeImage
from .tensor import fft_1d, next_pow2, zero_pad


@dataclass(frozen=True)
class RoiMask:
    mask: np.ndarray
    label: str = "A"

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2 or not m.any():
            raise ValueError(f"ROI {self.label!r} must be a non-empty 2-D mask")
        object.__setattr__(self, "mask", m)


def _values(frame):
    if isinstance(frame, BModeImage):
        return frame.db_values
    return as_array(frame, "frame")


def _mask(mask) -> np.ndarray:
    m = mask.mask if isinstance(mask, RoiMask) else np.asarray(mask, dtype=bool)
    if not m.any():
        raise ValueError("ROI mask is empty")
    return m


def psnr(test, reference, data_range: float | None = None) -> float:
    """10 log10(range^2 / MSE); ``math.inf`` for identical images.

    The range defaults to the reference's dynamic range (B-mode input) or its
    value span (plain arrays).
    """
    if data_range is None:
        if isinstance(reference, BModeImage):
            data_range = reference.dynamic_range
        else:
            ref = as_array(reference, "reference")
            data_range = float(ref.max() - ref.min())
    a, b = _values(test), _values(reference)
    check_same_shape(a, b, "test and reference images")
    if data_range <= 0:
        raise ValueError("reference range must be > 0")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def gcnr_samples(a, b, bins: int = 256) -> float:
    """1 - sum_bins min(p_A, p_B) on a shared histogram support."""
    a = np.ravel(np.asarray(a, dtype=np.float64))
    b = np.ravel(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("gCNR needs two non-empty samples")
    if bins < 2:
        raise ValueError("gCNR needs at least 2 bins")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    edges = np.linspace(lo, hi, bins + 1) if hi > lo else np.array([lo - 0.5, lo + 0.5])
    pa, _ = np.histogram(a, bins=edges)
    pb, _ = np.histogram(b, bins=edges)
    overlap = np.minimum(pa / a.size, pb / b.size).sum()
    return float(min(1.0, max(0.0, 1.0 - overlap)))


def gcnr(frame, mask_a, mask_b, bins: int = 256) -> float:
    values = _values(frame)
    return gcnr_samples(values[_mask(mask_a)], values[_mask(mask_b)], bins)


def ks_statistic(sample_a, sample_b) -> float:
    """Largest gap between the two empirical CDFs."""
    a = np.sort(np.ravel(np.asarray(sample_a, dtype=np.float64)))
    b = np.sort(np.ravel(np.asarray(sample_b, dtype=np.float64)))
    if a.size == 0 or b.size == 0:
        raise ValueError("KS statistic needs two non-empty samples")
    ladder = np.concatenate([a, b])
    fa = np.searchsorted(a, ladder, side="right") / a.size
    fb = np.searchsorted(b, ladder, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def lateral_autocorrelation(frame, roi) -> np.ndarray:
    """Normalized lateral profile (non-negative lags) of the ROI's 2-D autocorrelation."""
    values = _values(frame)
    mask = _mask(roi)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    box = (slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1))
    patch, inside = values[box], mask[box]
    if min(patch.shape) < 16:
        raise ValueError(f"ROI bounding box {patch.shape} is smaller than 16x16")
    mean = patch[inside].mean()
    field = np.where(inside, patch - mean, 0.0)
    if not np.any(field):
        raise ValueError("ROI is constant; autocorrelation is undefined")
    spectrum = _fft2(field)
    corr = np.real(_ifft2(spectrum * np.conj(spectrum)))
    counts = np.real(_ifft2(np.abs(_fft2(inside.astype(float))) ** 2))
    width = patch.shape[1]
    row0 = corr[0, :width]
    pairs = np.maximum(np.round(counts[0, :width]), 1.0)
    profile = row0 / pairs
    return profile / profile[0]


def _fft2(field):
    r, c = field.shape
    padded = zero_pad(zero_pad(field, next_pow2(2 * r), axis=0), next_pow2(2 * c), axis=1)
    return fft_1d(fft_1d(padded, axis=0), axis=1)


def _ifft2(spectrum):
    return fft_1d(fft_1d(spectrum, inverse=True, axis=0), inverse=True, axis=1)


def fwhm_lateral(frame, roi) -> float:
    """Full width at half maximum (pixels) of the lateral autocorrelation main lobe."""
    profile = lateral_autocorrelation(frame, roi)
    below = np.flatnonzero(profile < 0.5)
    if below.size == 0:
        raise ValueError("autocorrelation never falls below half maximum inside the ROI")
    j = below[0]
    frac = (profile[j - 1] - 0.5) / (profile[j - 1] - profile[j])
    return float(2.0 * (j - 1 + frac))


# -- ROI polygons -------------------------------------------------------------------


def mask_to_polygon(mask, tolerance: float = 1.0) -> np.ndarray:
    """Outer contour of a mask simplified with Douglas-Peucker, as (row, col) vertices."""
    m = _mask(mask)
    padded = np.pad(m.astype(float), 1)
    contours = find_contours(padded, 0.5)
    contour = max(contours, key=len) - 1.0
    poly = approximate_polygon(contour, tolerance=tolerance)
    if len(poly) > 1 and np.allclose(poly[0], poly[-1]):
        poly = poly[:-1]
    return poly


def polygon_to_mask(poly: np.ndarray, shape) -> np.ndarray:
    return polygon2mask(tuple(shape), np.asarray(poly))


def _signed_area(poly: np.ndarray) -> float:
    r, c = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(r * np.roll(c, -1) - np.roll(r, -1) * c))


def resample_polygon(poly: np.ndarray, count: int) -> np.ndarray:
    """``count`` vertices evenly spaced by arc length along the closed polygon."""
    closed = np.vstack([poly, poly[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, arc[-1], count, endpoint=False)
    return np.column_stack([np.interp(targets, arc, closed[:, k]) for k in range(2)])


def match_polygons(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Equal vertex counts, common orientation and best cyclic alignment."""
    count = min(len(p), len(q))
    p = p if len(p) == count else resample_polygon(p, count)
    q = q if len(q) == count else resample_polygon(q, count)
    if np.sign(_signed_area(p)) != np.sign(_signed_area(q)):
        q = q[::-1]
    costs = [np.sum((p - np.roll(q, -s, axis=0)) ** 2) for s in range(count)]
    return p, np.roll(q, -int(np.argmin(costs)), axis=0)


def roi_interpolate(key_masks, target_index: float, tolerance: float = 1.0) -> np.ndarray:
    """Mask at ``target_index`` by linear vertex interpolation between bracketing key polygons."""
    keys = sorted(((float(i), _mask(m)) for i, m in key_masks), key=lambda k: k[0])
    if len(keys) < 2:
        raise ValueError("need at least two key masks")
    shape = keys[0][1].shape
    for index, mask in keys:
        if index == target_index:
            return polygon_to_mask(mask_to_polygon(mask, tolerance), shape)
    lower = [k for k in keys if k[0] < target_index]
    upper = [k for k in keys if k[0] > target_index]
    if not lower or not upper:
        raise ValueError(f"target index {target_index} is not bracketed by the key frames")
    (i0, m0), (i1, m1) = lower[-1], upper[0]
    p, q = match_polygons(mask_to_polygon(m0, tolerance), mask_to_polygon(m1, tolerance))
    w = (target_index - i0) / (i1 - i0)
    return polygon_to_mask((1 - w) * p + w * q, shape)


def load_mask(path, shape=None) -> np.ndarray:
    """PNG (nonzero = inside) or polygon JSON ``{"shape": [r, c], "vertices": [[row, col], ...]}``."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        spec = json.loads(path.read_text())
        shape = tuple(spec.get("shape", shape))
        return polygon_to_mask(np.asarray(spec["vertices"], dtype=float), shape)
    return np.asarray(Image.open(path)) > 0


def save_mask_png(mask, path) -> None:
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path, format="PNG")
