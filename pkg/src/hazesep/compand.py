"""mu-law companding with analytic derivatives.

``encode`` compresses values in [-1, 1] logarithmically, ``decode`` expands
them back. Inputs that drift outside [-1, 1] (noisy diffusion iterates) are
clipped first and the number of clipped samples is logged.

``mu=None`` selects the identity map (the mu -> 0 limit), which keeps the
joint sampler linear for closed-form Gaussian checks.
"""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from ._validation import as_array, check_positive
from .tensor import RFGrid

logger = logging.getLogger(__name__)

DEFAULT_MU = 255.0


def _wrap(result: np.ndarray, like):
    return like.with_samples(result) if isinstance(like, RFGrid) else result


def clip_unit(x: np.ndarray) -> tuple[np.ndarray, int]:
    """Clip to [-1, 1]; return the clipped array and how many samples moved."""
    outside = int(np.count_nonzero(np.abs(x) > 1.0))
    return (np.clip(x, -1.0, 1.0) if outside else x), outside


def _checked(x, name):
    arr = as_array(x, name)
    arr, clipped = clip_unit(arr)
    if clipped:
        logger.debug("%s: clipped %d samples to [-1, 1]", name, clipped)
    return arr


def encode(x, mu: float | None = DEFAULT_MU):
    """C(x) = sign(x) ln(1 + mu|x|) / ln(1 + mu)."""
    if mu is None:
        return _wrap(as_array(x, "encode input").copy(), x)
    arr = _checked(x, "encode input")
    mu = check_positive(mu, "mu")
    return _wrap(np.sign(arr) * np.log1p(mu * np.abs(arr)) / np.log1p(mu), x)


def decode(c, mu: float | None = DEFAULT_MU):
    """C^-1(c) = sign(c) ((1 + mu)^|c| - 1) / mu."""
    if mu is None:
        return _wrap(as_array(c, "decode input").copy(), c)
    arr = _checked(c, "decode input")
    mu = check_positive(mu, "mu")
    mag = np.expm1(np.abs(arr) * np.log1p(mu)) / mu
    # expm1(log1p(mu)) / mu can miss 1 by an ulp; keep the endpoints exact
    mag = np.where(np.abs(arr) == 1.0, 1.0, mag)
    return _wrap(np.sign(arr) * mag, c)


def encode_deriv(x, mu: float | None = DEFAULT_MU):
    """C'(x) = mu / ((1 + mu|x|) ln(1 + mu)); even in x, finite at 0."""
    arr = as_array(x, "encode_deriv input")
    if mu is None:
        return _wrap(np.ones_like(arr), x)
    mu = check_positive(mu, "mu")
    return _wrap(mu / ((1.0 + mu * np.abs(arr)) * np.log1p(mu)), x)


def decode_deriv(c, mu: float | None = DEFAULT_MU):
    """(C^-1)'(c) = (1 + mu)^|c| ln(1 + mu) / mu."""
    arr = as_array(c, "decode_deriv input")
    if mu is None:
        return _wrap(np.ones_like(arr), c)
    mu = check_positive(mu, "mu")
    log1p_mu = np.log1p(mu)
    return _wrap(np.exp(np.abs(arr) * log1p_mu) * log1p_mu / mu, c)


def normalize_to_unit(x):
    """Divide by max |x|; returns ``(normalized, scale)``."""
    arr = as_array(x, "normalize input")
    scale = float(np.max(np.abs(arr))) if arr.size else 0.0
    if scale == 0.0:
        raise ValueError("cannot normalize an all-zero grid")
    return _wrap(arr / scale, x), scale


class MuLawCompander(TransformerMixin, BaseEstimator):
    """Normalize-then-compand transformer.

    ``fit`` records the peak magnitude of the training frames (one shared
    scale), ``transform`` maps RF into the companded domain and
    ``inverse_transform`` undoes both steps.

    Parameters
    ----------
    mu : float or None, default=255
        Compression strength; None disables companding.
    """

    def __init__(self, mu: float | None = DEFAULT_MU):
        self.mu = mu

    def fit(self, X, y=None):
        X = as_array(X, "X")
        _, self.scale_ = normalize_to_unit(X)
        return self

    def transform(self, X):
        X = as_array(X, "X")
        return encode(X / self._scale(), self.mu)

    def inverse_transform(self, X):
        return decode(as_array(X, "X"), self.mu) * self._scale()

    def _scale(self):
        if not hasattr(self, "scale_"):
            raise NotFittedError("MuLawCompander is not fitted yet; call fit first")
        return self.scale_
