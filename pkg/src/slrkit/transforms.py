"""Evaluation-time frame transforms for the robustness protocol.

Vertical translation and scaling about the image centre, both with
edge-replicating resampling (bilinear for scale). A positive shift
fraction moves the content downward. The composed transform scales first,
then shifts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Transform", "TRANSFORM_GRID", "shift_vertical", "scale_about_center",
           "apply_transform"]


@dataclass(frozen=True)
class Transform:
    name: str
    shift: float  # fraction of height; positive moves content down
    scale: float

    @property
    def is_identity(self) -> bool:
        return self.shift == 0.0 and self.scale == 1.0


# the robustness grid: original plus four upward and four downward rows
TRANSFORM_GRID = (
    Transform("Original", 0.0, 1.0),
    Transform("A", -0.10, 1.0),
    Transform("B", -0.20, 1.0),
    Transform("C", -0.10, 0.8),
    Transform("D", -0.10, 1.2),
    Transform("E", +0.10, 1.0),
    Transform("F", +0.20, 1.0),
    Transform("G", +0.10, 0.8),
    Transform("H", +0.10, 1.2),
)


def shift_pixels(height: int, frac: float) -> int:
    return int(round(frac * height))


def shift_vertical(frames: np.ndarray, frac: float) -> np.ndarray:
    """Move content down by ``round(frac * H)`` rows, replicating edges."""
    h = frames.shape[-2]
    d = shift_pixels(h, frac)
    if d == 0:
        return frames.copy()
    src = np.clip(np.arange(h) - d, 0, h - 1)
    return np.ascontiguousarray(frames[..., src, :])


def _resample_axis(frames: np.ndarray, axis: int, scale: float) -> np.ndarray:
    n = frames.shape[axis]
    center = (n - 1) / 2.0
    src = (np.arange(n) - center) / scale + center
    src = np.clip(src, 0.0, n - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    frac = (src - lo).astype(frames.dtype)
    lo_v = np.take(frames, lo, axis=axis)
    hi_v = np.take(frames, hi, axis=axis)
    shape = [1] * frames.ndim
    shape[axis] = n
    frac = frac.reshape(shape)
    return lo_v * (1 - frac) + hi_v * frac


def scale_about_center(frames: np.ndarray, scale: float) -> np.ndarray:
    """Bilinear zoom about the centre; sampling clamps at the borders."""
    if scale == 1.0:
        return frames.copy()
    out = _resample_axis(frames, frames.ndim - 2, scale)
    out = _resample_axis(out, frames.ndim - 1, scale)
    return np.ascontiguousarray(out, dtype=frames.dtype)


def apply_transform(frames: np.ndarray, transform: Transform) -> np.ndarray:
    if transform.is_identity:
        return frames
    out = scale_about_center(frames, transform.scale)
    return shift_vertical(out, transform.shift)
