"""RF to B-mode: envelope detection, log compression, brightness matching, export."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import as_array
from .tensor import fft_1d, next_pow2, zero_pad

DEFAULT_DYNAMIC_RANGE = 60.0


@dataclass(frozen=True)
class BModeImage:
    db_values: np.ndarray
    dynamic_range: float = DEFAULT_DYNAMIC_RANGE

    def __post_init__(self):
        if self.dynamic_range <= 0:
            raise ValueError("dynamic_range must be > 0")
        db = np.asarray(self.db_values, dtype=np.float64)
        object.__setattr__(self, "db_values", db)

    @property
    def shape(self):
        return self.db_values.shape


def envelope(rf) -> np.ndarray:
    """Analytic-signal magnitude along the axial axis (rows)."""
    rf = as_array(rf, "rf")
    n = rf.shape[-2]
    if n < 8:
        raise ValueError(f"envelope needs at least 8 axial samples, got {n}")
    size = next_pow2(n)
    spectrum = fft_1d(zero_pad(rf, size, axis=-2), axis=-2)
    weights = np.zeros(size)
    weights[0] = 1.0
    weights[1 : size // 2] = 2.0
    weights[size // 2] = 1.0 if size > 1 else 0.0
    analytic = fft_1d(spectrum * weights[:, None], inverse=True, axis=-2)
    return np.abs(analytic[..., :n, :])


def log_compress(env, dynamic_range: float = DEFAULT_DYNAMIC_RANGE) -> BModeImage:
    env = as_array(env, "envelope")
    if np.any(env < 0):
        raise ValueError("envelope values must be non-negative")
    peak = float(env.max()) if env.size else 0.0
    if peak == 0:
        raise ValueError("cannot log-compress an all-zero envelope")
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(env / peak)
    return BModeImage(np.clip(db, -dynamic_range, 0.0), dynamic_range)


def bmode(rf, dynamic_range: float = DEFAULT_DYNAMIC_RANGE) -> BModeImage:
    return log_compress(envelope(rf), dynamic_range)


def top_decile_mean(db: np.ndarray) -> float:
    """Mean of the top 10% of values (nearest-rank cutoff)."""
    values = np.sort(np.ravel(db))[::-1]
    count = max(1, math.ceil(0.1 * values.size))
    return float(values[:count].mean())


def brightness_offset(img: BModeImage, reference: BModeImage) -> float:
    return top_decile_mean(reference.db_values) - top_decile_mean(img.db_values)


def brightness_match(img: BModeImage, reference: BModeImage) -> BModeImage:
    """Shift ``img`` in dB so its top-decile mean equals the reference's, then re-clip."""
    if img.dynamic_range != reference.dynamic_range:
        raise ValueError("images use different dynamic ranges")
    shifted = img.db_values + brightness_offset(img, reference)
    return BModeImage(np.clip(shifted, -img.dynamic_range, 0.0), img.dynamic_range)


def to_uint8(img: BModeImage) -> np.ndarray:
    scaled = 255.0 * (img.db_values + img.dynamic_range) / img.dynamic_range
    return np.clip(np.floor(scaled), 0, 255).astype(np.uint8)


def export_png(img: BModeImage, path) -> None:
    """8-bit grayscale PNG, linear in dB from -dynamic_range (black) to 0 dB (white)."""
    Image.fromarray(to_uint8(img)).save(Path(path), format="PNG", optimize=False)


def export_csv(img: BModeImage, path) -> None:
    np.savetxt(path, img.db_values, delimiter=",", fmt="%.6f")


class BModeTransformer(TransformerMixin, BaseEstimator):
    """RF frames -> dB images, optionally brightness-matched to a reference.

    ``fit`` stores the reference B-mode image; without a reference, fitting
    is a no-op and images are only normalized to their own peak.
    """

    def __init__(self, dynamic_range: float = DEFAULT_DYNAMIC_RANGE):
        self.dynamic_range = dynamic_range

    def fit(self, X=None, y=None):
        self.reference_ = None if X is None else bmode(X, self.dynamic_range)
        return self

    def transform(self, X) -> np.ndarray:
        img = bmode(X, self.dynamic_range)
        if getattr(self, "reference_", None) is not None:
            img = brightness_match(img, self.reference_)
        return img.db_values
