"""Synthetic tissue RF, correlated haze RF, and their mixtures.

Tissue is a random scatterer field with an anechoic ellipse ("ventricle")
and a bright band ("wall"), convolved axially with a Gaussian-windowed
carrier and laterally with a Gaussian beam. Haze is a complex Gaussian
field with long correlation lengths, modulated onto the same carrier and
weighted toward shallow depths, so it overlaps tissue in frequency and
differs mainly in spatial structure. All units are samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from ._validation import check_same_shape
from .compand import DEFAULT_MU, encode
from .patchwork import PatchLayout, extract_all, plan
from .tensor import SeededRng, fft_1d, next_pow2, zero_pad


@dataclass(frozen=True)
class PhantomSpec:
    rows: int = 256
    cols: int = 128
    center_frequency: float = 0.25
    pulse_std: float = 2.0
    psf_width: float = 1.5
    ellipse_center: tuple[float, float] = (0.3, 0.5)
    ellipse_axes: tuple[float, float] = (0.16, 0.22)
    wall_rows: tuple[float, float] = (0.62, 0.78)
    wall_gain: float = 2.0
    density: float = 0.5

    def __post_init__(self):
        if self.wall_gain <= 1:
            raise ValueError("the hyperechoic wall needs gain > 1")
        if not 0 <= self.density <= 1:
            raise ValueError("scatterer density must lie in [0, 1]")

    def _ellipse(self, shrink: float = 1.0) -> np.ndarray:
        r = np.arange(self.rows)[:, None]
        c = np.arange(self.cols)[None, :]
        cr, cc = self.ellipse_center[0] * self.rows, self.ellipse_center[1] * self.cols
        ar, ac = self.ellipse_axes[0] * self.rows * shrink, self.ellipse_axes[1] * self.cols * shrink
        return ((r - cr) / ar) ** 2 + ((c - cc) / ac) ** 2 <= 1.0

    def _wall(self, margin: int = 0) -> np.ndarray:
        r0, r1 = (int(round(f * self.rows)) for f in self.wall_rows)
        band = np.zeros((self.rows, self.cols), dtype=bool)
        band[r0 + margin : r1 - margin, margin : self.cols - margin] = True
        return band

    def gain_map(self) -> np.ndarray:
        gain = np.ones((self.rows, self.cols))
        gain[self._wall()] = self.wall_gain
        gain[self._ellipse()] = 0.0
        return gain

    def masks(self) -> tuple[np.ndarray, np.ndarray]:
        """Chamber (A) and wall (B) evaluation masks, kept clear of the boundaries."""
        margin = int(np.ceil(3 * max(self.pulse_std, self.psf_width)))
        return self._ellipse(shrink=0.8), self._wall(margin=margin)


@dataclass(frozen=True)
class HazeSpec:
    lateral_length: float = 6.0
    axial_length: float = 6.0
    decay: float | None = None
    level: float = 1.0

    def decay_for(self, rows: int) -> float:
        return self.decay if self.decay is not None else rows / 3.0


def pulse_kernel(spec: PhantomSpec) -> np.ndarray:
    half = int(np.ceil(4 * spec.pulse_std))
    n = np.arange(-half, half + 1)
    return np.cos(2 * np.pi * spec.center_frequency * n) * np.exp(-0.5 * (n / spec.pulse_std) ** 2)


def beam_kernel(spec: PhantomSpec) -> np.ndarray:
    half = int(np.ceil(4 * spec.psf_width))
    n = np.arange(-half, half + 1)
    k = np.exp(-0.5 * (n / spec.psf_width) ** 2)
    return k / k.sum()


def _unit(x: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(x))
    return x / peak if peak > 0 else x


def gen_tissue(spec: PhantomSpec, rng: SeededRng) -> np.ndarray:
    """Speckle RF frame normalized to unit peak magnitude."""
    shape = (spec.rows, spec.cols)
    present = rng.uniform(shape) < spec.density
    scatterers = np.where(present, rng.normal(shape), 0.0) * spec.gain_map()
    rf = convolve1d(scatterers, pulse_kernel(spec), axis=0, mode="constant")
    rf = convolve1d(rf, beam_kernel(spec), axis=1, mode="constant")
    return _unit(rf)


def _gaussian_lowpass(field: np.ndarray, length: float, axis: int) -> np.ndarray:
    """Filter so the output autocorrelation along ``axis`` is exp(-d^2 / (2 length^2))."""
    n = field.shape[axis]
    size = next_pow2(n + int(np.ceil(8 * length)) + 1)
    spec = fft_1d(zero_pad(field, size, axis=axis), axis=axis)
    f = np.fft.fftfreq(size)
    # power spectrum exp(-2 pi^2 l^2 f^2) <-> autocorrelation exp(-d^2 / (2 l^2))
    response = np.exp(-((2 * np.pi * f * length) ** 2) / 4)
    shape = [1] * field.ndim
    shape[axis] = size
    out = fft_1d(spec * response.reshape(shape), inverse=True, axis=axis)
    return np.take(out, np.arange(n), axis=axis)


def gen_haze(spec: HazeSpec, rng: SeededRng, shape: tuple[int, int],
             center_frequency: float = 0.25) -> np.ndarray:
    """Depth-weighted, spatially correlated band-pass haze with unit peak magnitude."""
    rows, cols = shape
    env = rng.normal(shape) + 1j * rng.normal(shape)
    env = _gaussian_lowpass(env, spec.lateral_length, axis=1)
    env = _gaussian_lowpass(env, spec.axial_length, axis=0)
    depth = np.arange(rows)[:, None]
    weight = np.exp(-depth / spec.decay_for(rows))
    carrier = np.exp(2j * np.pi * center_frequency * depth)
    return _unit(np.real(env * carrier) * weight)


def mix(x, h, level: float) -> np.ndarray:
    """Measurement y = x + level * h."""
    if level < 0:
        raise ValueError("haze level must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    check_same_shape(x, h, "tissue and haze")
    return x + level * h


@dataclass
class Dataset:
    tissue_patches: np.ndarray
    haze_patches: np.ndarray
    clean_frames: np.ndarray
    haze_frames: np.ndarray
    seeds: list[tuple[int, int]]

    def mixed(self, level: float) -> np.ndarray:
        return mix(self.clean_frames, self.haze_frames, level)


def make_dataset(phantom: PhantomSpec, haze: HazeSpec, n_frames: int, layout: PatchLayout,
                 rng: SeededRng, mu: float | None = DEFAULT_MU) -> Dataset:
    """Paired frames plus companded patch sets for the two score models.

    Each frame contributes one patch per plan position for tissue and the
    same number of haze patches, drawn with replacement with probability
    proportional to patch energy.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    plan_ = plan(phantom.rows, phantom.cols, layout)
    clean, hazes, tissue_p, haze_p, seeds = [], [], [], [], []
    for i in range(n_frames):
        t_rng, h_rng, pick_rng = rng.child(3 * i), rng.child(3 * i + 1), rng.child(3 * i + 2)
        seeds.append((t_rng.seed, h_rng.seed))
        x = gen_tissue(phantom, t_rng)
        h = gen_haze(haze, h_rng, (phantom.rows, phantom.cols), phantom.center_frequency)
        clean.append(x)
        hazes.append(h)
        tissue_p.append(extract_all(encode(x, mu) if mu else x, plan_))
        h_patches = extract_all(h, plan_)
        energy = np.sum(h_patches**2, axis=(1, 2))
        cdf = np.cumsum(energy) / energy.sum()
        picks = np.searchsorted(cdf, pick_rng.uniform(len(plan_)), side="right")
        picks = np.minimum(picks, len(plan_) - 1)
        chosen = h_patches[picks]
        haze_p.append(encode(chosen, mu) if mu else chosen)
    return Dataset(
        np.concatenate(tissue_p), np.concatenate(haze_p), np.stack(clean), np.stack(hazes), seeds
    )
