"""Overlapping patch factorization with mask-shift interleaving.

Patches are visited in row-major order. Each patch copies its values into
the pixels it shares with every earlier patch (for a regular layout these
are exactly its left, upper and upper-left neighbours), so after one sweep
each shared pixel holds the value of the last patch covering it. Stitching
then needs no blending.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import as_array
from .tensor import RFGrid


@dataclass(frozen=True)
class PatchLayout:
    patch_rows: int = 128
    patch_cols: int = 64
    overlap_fraction: float = 0.10
    overlap_rows: int | None = None
    overlap_cols: int | None = None

    def __post_init__(self):
        if self.patch_rows < 1 or self.patch_cols < 1:
            raise ValueError("patch dimensions must be >= 1")
        if not 0 <= self.overlap_fraction < 1:
            raise ValueError(f"overlap_fraction must lie in [0, 1), got {self.overlap_fraction}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.patch_rows, self.patch_cols)

    @property
    def overlap(self) -> tuple[int, int]:
        """Nominal overlap in pixels, ceil(fraction * size) unless set explicitly."""
        rows = self.overlap_rows
        cols = self.overlap_cols
        if rows is None:
            rows = math.ceil(self.overlap_fraction * self.patch_rows - 1e-9)
        if cols is None:
            cols = math.ceil(self.overlap_fraction * self.patch_cols - 1e-9)
        if rows >= self.patch_rows or cols >= self.patch_cols:
            raise ValueError(f"overlap {rows, cols} must be smaller than the patch {self.shape}")
        return rows, cols


def _axis_origins(frame: int, patch: int, overlap: int) -> list[int]:
    stride = patch - overlap
    origins = [0]
    while origins[-1] + patch < frame:
        nxt = origins[-1] + stride
        if nxt + patch > frame:
            nxt = frame - patch
        origins.append(nxt)
    return origins


@dataclass(frozen=True)
class PatchPlan:
    frame_shape: tuple[int, int]
    layout: PatchLayout
    row_origins: tuple[int, ...]
    col_origins: tuple[int, ...]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return len(self.row_origins), len(self.col_origins)

    @property
    def origins(self) -> list[tuple[int, int]]:
        """Patch origins in row-major sweep order."""
        return [(r, c) for r in self.row_origins for c in self.col_origins]

    def __len__(self):
        return len(self.row_origins) * len(self.col_origins)

    def window(self, index: int) -> tuple[slice, slice]:
        r, c = self.origins[index]
        return slice(r, r + self.layout.patch_rows), slice(c, c + self.layout.patch_cols)

    def overlaps(self) -> list[tuple[int, int, tuple[slice, slice], tuple[slice, slice]]]:
        """(later, earlier, slices in later, slices in earlier) for every overlapping pair."""
        pr, pc = self.layout.shape
        pairs = []
        origins = self.origins
        for k, (rk, ck) in enumerate(origins):
            for j in range(k):
                rj, cj = origins[j]
                r0, r1 = max(rk, rj), min(rk, rj) + pr
                c0, c1 = max(ck, cj), min(ck, cj) + pc
                if r0 >= r1 or c0 >= c1:
                    continue
                in_k = (slice(r0 - rk, r1 - rk), slice(c0 - ck, c1 - ck))
                in_j = (slice(r0 - rj, r1 - rj), slice(c0 - cj, c1 - cj))
                pairs.append((k, j, in_k, in_j))
        return pairs


def plan(frame_rows: int, frame_cols: int, layout: PatchLayout) -> PatchPlan:
    """Cover a frame with overlapping patches; the last patch per axis sits flush with the edge."""
    pr, pc = layout.shape
    if frame_rows < pr or frame_cols < pc:
        raise ValueError(
            f"frame {frame_rows}x{frame_cols} is smaller than the {pr}x{pc} patch; zero-pad the frame first"
        )
    orow, ocol = layout.overlap
    return PatchPlan(
        (frame_rows, frame_cols),
        layout,
        tuple(_axis_origins(frame_rows, pr, orow)),
        tuple(_axis_origins(frame_cols, pc, ocol)),
    )


def extract(frame, origin: tuple[int, int], shape: tuple[int, int]) -> np.ndarray:
    arr = as_array(frame, "frame")
    r, c = origin
    pr, pc = shape
    if r < 0 or c < 0 or r + pr > arr.shape[-2] or c + pc > arr.shape[-1]:
        raise ValueError(f"patch at {origin} of shape {shape} exceeds frame {arr.shape[-2:]}")
    return arr[..., r : r + pr, c : c + pc].copy()


def extract_all(frames: np.ndarray, plan_: PatchPlan) -> np.ndarray:
    """Patches of one frame (rows, cols) or a stack (n, rows, cols) -> (..., P, pr, pc)."""
    frames = np.asarray(frames)
    if frames.shape[-2:] != plan_.frame_shape:
        raise ValueError(f"frame shape {frames.shape[-2:]} does not match plan {plan_.frame_shape}")
    return np.stack([frames[(...,) + plan_.window(i)] for i in range(len(plan_))], axis=-3)


def interleave(patches: np.ndarray, plan_: PatchPlan, pairs=None) -> np.ndarray:
    """Row-major sweep: each patch overwrites what it shares with earlier patches.

    ``patches`` has shape (..., P, pr, pc) and is modified in place (and returned).
    """
    _check_patches(patches, plan_)
    if pairs is None:
        pairs = plan_.overlaps()
    for k, j, in_k, in_j in pairs:
        patches[(..., j) + in_j] = patches[(..., k) + in_k]
    return patches


def max_overlap_disagreement(patches: np.ndarray, plan_: PatchPlan) -> float:
    worst = 0.0
    for k, j, in_k, in_j in plan_.overlaps():
        diff = np.abs(patches[(..., k) + in_k] - patches[(..., j) + in_j])
        if diff.size:
            worst = max(worst, float(diff.max()))
    return worst


def stitch(patches: np.ndarray, plan_: PatchPlan, tol: float = 1e-9) -> np.ndarray:
    """Write interleaved patches back into a frame; shared pixels must already agree."""
    _check_patches(patches, plan_)
    worst = max_overlap_disagreement(patches, plan_)
    if worst >= tol:
        raise ValueError(f"patch overlaps disagree by {worst:.3g} (>= {tol}); interleave before stitching")
    lead = patches.shape[:-3]
    frame = np.zeros(lead + plan_.frame_shape, dtype=patches.dtype)
    for i in range(len(plan_)):
        frame[(...,) + plan_.window(i)] = patches[..., i, :, :]
    return frame


def _check_patches(patches: np.ndarray, plan_: PatchPlan) -> None:
    if patches.ndim < 3 or patches.shape[-3] != len(plan_) or patches.shape[-2:] != plan_.layout.shape:
        raise ValueError(
            f"patch array of shape {patches.shape} does not match plan with {len(plan_)} patches of "
            f"shape {plan_.layout.shape}"
        )


def write_back(frame: RFGrid | np.ndarray, patch: np.ndarray, origin: tuple[int, int]) -> np.ndarray:
    arr = np.array(as_array(frame, "frame"), copy=True)
    r, c = origin
    arr[r : r + patch.shape[0], c : c + patch.shape[1]] = patch
    return arr
