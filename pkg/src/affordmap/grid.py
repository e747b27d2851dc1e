"""Grid types shared by every other module, plus peak extraction.

Coordinates follow image conventions: ``x`` is the column, ``y`` is the row,
the origin is the top-left pixel and pixel centers sit on integer coordinates.
All arrays are stored row-major as ``(height, width)`` and are made read-only
on construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from affordmap.errors import DimensionError


class PixelCoord(NamedTuple):
    x: int
    y: int


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Heatmap:
    """Dense ``height x width`` grid of values in ``[0, 1]``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DimensionError(f"heatmap must be a non-empty 2-D grid, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("heatmap values must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __getitem__(self, xy) -> float:
        x, y = xy
        return float(self.values[y, x])


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2 or b.size == 0:
            raise DimensionError(f"mask must be a non-empty 2-D grid, got shape {b.shape}")
        object.__setattr__(self, "bits", _frozen(b.astype(bool)))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def count(self) -> int:
        return int(self.bits.sum())

    def __getitem__(self, xy) -> bool:
        x, y = xy
        return bool(self.bits[y, x])


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Low-resolution ``(channels, height, width)`` feature grid."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or min(v.shape) < 1:
            raise DimensionError(f"feature map must be (C, h, w) with all dims >= 1, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature map values must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


def _as_grid(m) -> np.ndarray:
    v = m.values if isinstance(m, Heatmap) else np.asarray(m, dtype=np.float64)
    if v.ndim != 2 or v.size == 0:
        raise DimensionError(f"expected a non-empty 2-D grid, got shape {v.shape}")
    return v


def argmax_peak(m: Heatmap) -> tuple[PixelCoord, float]:
    """Highest-valued pixel; ties go to the lowest row-major index."""
    v = _as_grid(m)
    # np.argmax returns the first occurrence on the flattened (row-major) array
    idx = int(np.argmax(v))
    y, x = divmod(idx, v.shape[1])
    return PixelCoord(x, y), float(v[y, x])


def topk_peaks(m: Heatmap, k: int, suppression_radius: float) -> list[tuple[PixelCoord, float]]:
    """Greedy non-maximum suppression.

    Repeatedly takes the current argmax and zeroes every pixel within
    Euclidean distance ``<= suppression_radius`` of it. Stops after ``k``
    picks or once the residual maximum is 0.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if suppression_radius < 0:
        raise ValueError("suppression_radius must be >= 0")
    residual = np.array(_as_grid(m), copy=True)
    h, w = residual.shape
    ys, xs = np.mgrid[0:h, 0:w]
    r2 = float(suppression_radius) ** 2
    picks = []
    for _ in range(min(k, h * w)):
        idx = int(np.argmax(residual))
        y, x = divmod(idx, w)
        value = float(residual[y, x])
        if value <= 0.0:
            break
        picks.append((idx, PixelCoord(x, y), value))
        residual[(xs - x) ** 2 + (ys - y) ** 2 <= r2] = 0.0
        # radius 0 still has to retire the picked pixel itself
        residual[y, x] = 0.0
    picks.sort(key=lambda t: (-t[2], t[0]))
    return [(coord, value) for _, coord, value in picks]
