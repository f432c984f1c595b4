"""Grid container, seeded random streams, FFT helpers and the URF1 file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "RFGrid",
    "SeededRng",
    "grid_add",
    "gaussian_grid",
    "fft_1d",
    "next_pow2",
    "zero_pad",
    "read_urf",
    "write_urf",
]

URF_MAGIC = b"URF1"
_URF_HEADER = struct.Struct("<4sIIdd")

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RFGrid:
    """Real 2-D samples (axial rows x lateral columns) with axis spacing.

    The sample array is copied on construction and made read-only, so a grid
    can be shared freely between threads.
    """

    samples: np.ndarray
    axial_spacing: float = 1.0
    lateral_spacing: float = 1.0

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64, copy=True)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"RFGrid needs a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("RFGrid samples must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.samples.shape

    def with_samples(self, samples) -> "RFGrid":
        """New grid with the same spacing."""
        return RFGrid(samples, self.axial_spacing, self.lateral_spacing)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.samples
        return self.samples.astype(dtype)


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@dataclass
class SeededRng:
    """Counter-based SplitMix64 stream (Steele, Lea & Flood 2014).

    Draw ``k`` (1-based) is ``mix64(seed + k * 0x9E3779B97F4A7C15)`` with the
    published SplitMix64 finalizer, so any window of the stream can be
    generated in one vectorized call. Gaussians come from Box-Muller on
    consecutive uniform pairs.
    """

    seed: int
    counter: int = field(default=0)

    def __post_init__(self):
        self.seed = int(self.seed) & _MASK64

    def _raw(self, n: int) -> np.ndarray:
        k = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64(np.uint64(self.seed) + k * _GOLDEN)

    def uniform(self, size) -> np.ndarray:
        """Uniform draws on the open interval (0, 1)."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        bits = self._raw(n) >> np.uint64(11)
        return ((bits.astype(np.float64) + 0.5) * 2.0**-53).reshape(shape)

    def normal(self, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        radius = np.sqrt(-2.0 * np.log(u[0::2]))
        angle = 2.0 * np.pi * u[1::2]
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return z[:n].reshape(shape)

    def child(self, index: int) -> "SeededRng":
        """Independent stream for task ``index``: seed XOR index, re-mixed."""
        mixed = _mix64(np.uint64((self.seed ^ int(index)) & _MASK64))
        return SeededRng(int(mixed))

    def integers(self, high: int, size) -> np.ndarray:
        """Integers in ``[0, high)``."""
        return np.minimum((self.uniform(size) * high).astype(np.int64), high - 1)


def grid_add(a: RFGrid, b: RFGrid) -> RFGrid:
    """Elementwise sum; spacing is taken from ``a``."""
    if a.shape != b.shape:
        raise ValueError(f"cannot add grids of shapes {a.shape} and {b.shape}")
    return a.with_samples(a.samples + b.samples)


def gaussian_grid(rng: SeededRng, rows: int, cols: int) -> RFGrid:
    if rows < 1 or cols < 1:
        raise ValueError(f"grid dimensions must be >= 1, got {rows}x{cols}")
    return RFGrid(rng.normal((rows, cols)))


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n) - 1).bit_length()


def zero_pad(signal: np.ndarray, length: int, axis: int = -1) -> np.ndarray:
    signal = np.asarray(signal)
    extra = length - signal.shape[axis]
    if extra < 0:
        raise ValueError(f"cannot pad length {signal.shape[axis]} down to {length}")
    widths = [(0, 0)] * signal.ndim
    widths[axis] = (0, extra)
    return np.pad(signal, widths)


def fft_1d(signal, inverse: bool = False, axis: int = -1) -> np.ndarray:
    """Power-of-two FFT along ``axis``.

    Forward is unscaled, inverse is scaled by 1/N.
    """
    signal = np.asarray(signal, dtype=np.complex128)
    n = signal.shape[axis]
    if n < 1 or n & (n - 1):
        raise ValueError(f"fft_1d needs a power-of-two length, got {n}; zero-pad first")
    return np.fft.ifft(signal, axis=axis) if inverse else np.fft.fft(signal, axis=axis)


def write_urf(path, grid: RFGrid) -> None:
    rows, cols = grid.shape
    header = _URF_HEADER.pack(URF_MAGIC, rows, cols, grid.axial_spacing, grid.lateral_spacing)
    body = np.ascontiguousarray(grid.samples, dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_urf(path) -> RFGrid:
    data = Path(path).read_bytes()
    if len(data) < _URF_HEADER.size:
        raise ValueError(f"{path}: truncated URF1 header")
    magic, rows, cols, dz, dx = _URF_HEADER.unpack_from(data)
    if magic != URF_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {URF_MAGIC!r}")
    expected = _URF_HEADER.size + 4 * rows * cols
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {rows}x{cols}, got {len(data)}")
    samples = np.frombuffer(data, dtype="<f4", offset=_URF_HEADER.size).reshape(rows, cols)
    return RFGrid(samples.astype(np.float64), dz, dx)
