"""Ground-truth heatmap synthesis from sparse annotations.

Three supervision kinds are supported:

* points  -> max over isotropic Gaussians centered on each point
* box     -> one axis-aligned elliptical Gaussian, std proportional to box size
* mask    -> Gaussian of the exact Euclidean distance to the mask

Pixel centers are evaluated at integer coordinates; annotation coordinates may
be fractional.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from affordmap.errors import DimensionError, ParameterError, SupervisionError, ValidationError
from affordmap.grid import BinaryMask, Heatmap

REFERENCE_RESOLUTION = 224
REFERENCE_SIGMA = 5.0
DEFAULT_ALPHA = 1.0 / 6.0


def default_sigma(width: int, height: int) -> float:
    """5 px at 224x224, scaled linearly with the shorter side."""
    return REFERENCE_SIGMA * min(width, height) / REFERENCE_RESOLUTION


def _check_positive(name, value):
    if not (math.isfinite(value) and value > 0):
        raise ParameterError(f"{name} must be finite and > 0, got {value!r}")


@dataclass(frozen=True)
class PointSupervision:
    points: tuple[tuple[float, float], ...]
    sigma: float

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.points)
        if len(pts) < 1:
            raise SupervisionError("point supervision needs at least one point")
        object.__setattr__(self, "points", pts)
        _check_positive("sigma", self.sigma)


@dataclass(frozen=True)
class BoxSupervision:
    center: tuple[float, float]
    box_width: float
    box_height: float
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        _check_positive("box_width", self.box_width)
        _check_positive("box_height", self.box_height)
        _check_positive("alpha", self.alpha)

    @property
    def sigma_x(self) -> float:
        return self.alpha * self.box_width

    @property
    def sigma_y(self) -> float:
        return self.alpha * self.box_height


@dataclass(frozen=True)
class MaskSupervision:
    mask: BinaryMask
    sigma: float

    def __post_init__(self):
        _check_positive("sigma", self.sigma)
        if self.mask.count() == 0:
            raise SupervisionError("goal mask has no foreground pixels")


Supervision = Union[PointSupervision, BoxSupervision, MaskSupervision]


@dataclass(frozen=True)
class AnnotationRecord:
    id: str
    instruction: str
    width: int
    height: int
    supervision: Supervision = field(repr=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"record {self.id!r}: width and height must be >= 1")
        s = self.supervision
        if isinstance(s, PointSupervision):
            loci = s.points
        elif isinstance(s, BoxSupervision):
            loci = (s.center,)
        elif isinstance(s, MaskSupervision):
            if s.mask.shape != (self.height, self.width):
                raise ValidationError(
                    f"record {self.id!r}: mask is {s.mask.width}x{s.mask.height}, "
                    f"record is {self.width}x{self.height}")
            loci = ()
        else:
            raise ValidationError(f"record {self.id!r}: unsupported supervision {type(s).__name__}")
        for x, y in loci:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValidationError(
                    f"record {self.id!r}: coordinate ({x:g}, {y:g}) outside "
                    f"[0,{self.width})x[0,{self.height})")


def _pixel_axes(width, height):
    if width < 1 or height < 1:
        raise DimensionError(f"grid must be at least 1x1, got {width}x{height}")
    return np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64)


def point_heatmap(s: PointSupervision, width: int, height: int) -> Heatmap:
    xs, ys = _pixel_axes(width, height)
    denom = 2.0 * s.sigma ** 2
    out = np.zeros((height, width))
    for px, py in s.points:
        # max aggregation keeps nearby peaks distinct
        g = np.exp(-((ys[:, None] - py) ** 2 + (xs[None, :] - px) ** 2) / denom)
        np.maximum(out, g, out=out)
    return Heatmap(out)


def box_heatmap(s: BoxSupervision, width: int, height: int) -> Heatmap:
    xs, ys = _pixel_axes(width, height)
    cx, cy = s.center
    ex = (xs - cx) ** 2 / (2.0 * s.sigma_x ** 2)
    ey = (ys - cy) ** 2 / (2.0 * s.sigma_y ** 2)
    return Heatmap(np.exp(-(ey[:, None] + ex[None, :])))


def _lower_envelope_1d(f: np.ndarray) -> np.ndarray:
    """Squared-distance transform of one line (Felzenszwalb & Huttenlocher).

    ``out[q] = min_p (q - p)**2 + f[p]`` over the finite samples of ``f``.
    """
    n = f.shape[0]
    sites = np.flatnonzero(np.isfinite(f))
    out = np.full(n, np.inf)
    if sites.size == 0:
        return out
    v = np.empty(sites.size, dtype=np.int64)
    z = np.empty(sites.size + 1)
    k = 0
    v[0] = sites[0]
    z[0] = -np.inf
    z[1] = np.inf
    for q in sites[1:]:
        fq = f[q] + q * q
        while True:
            p = v[k]
            s = (fq - (f[p] + p * p)) / (2.0 * (q - p))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        p = v[k]
        out[q] = (q - p) ** 2 + f[p]
    return out


def squared_distance_transform(bits: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance to the nearest True pixel."""
    bits = np.asarray(bits, dtype=bool)
    if not bits.any():
        raise SupervisionError("distance transform needs at least one foreground pixel")
    h, w = bits.shape
    f = np.where(bits, 0.0, np.inf)
    cols = np.empty((h, w))
    for x in range(w):
        cols[:, x] = _lower_envelope_1d(f[:, x])
    out = np.empty((h, w))
    for y in range(h):
        out[y] = _lower_envelope_1d(cols[y])
    return out


@dataclass(frozen=True, eq=False)
class DistanceField:
    distances: np.ndarray

    @property
    def height(self) -> int:
        return self.distances.shape[0]

    @property
    def width(self) -> int:
        return self.distances.shape[1]


def euclidean_distance_transform(mask: BinaryMask) -> DistanceField:
    d = np.sqrt(squared_distance_transform(mask.bits))
    d.flags.writeable = False
    return DistanceField(d)


def mask_heatmap(s: MaskSupervision, width: int, height: int) -> Heatmap:
    if s.mask.shape != (height, width):
        raise DimensionError(
            f"mask is {s.mask.width}x{s.mask.height}, requested grid is {width}x{height}")
    d2 = squared_distance_transform(s.mask.bits)
    # squared field is used directly, so foreground is exactly exp(0) = 1
    return Heatmap(np.exp(-d2 / (2.0 * s.sigma ** 2)))


def synthesize(record: AnnotationRecord, width: int | None = None, height: int | None = None) -> Heatmap:
    width = record.width if width is None else width
    height = record.height if height is None else height
    s = record.supervision
    if isinstance(s, PointSupervision):
        return point_heatmap(s, width, height)
    if isinstance(s, BoxSupervision):
        return box_heatmap(s, width, height)
    if isinstance(s, MaskSupervision):
        return mask_heatmap(s, width, height)
    raise SupervisionError(f"unsupported supervision payload {type(s).__name__}")
