"""Seeded synthetic scenes for desk-scale training and evaluation.

A scene is a handful of box-shaped objects on a ``(s*h) x (s*w)`` canvas plus
an instruction that either names one object (a *precise* target, supervised
by a point or a box) or asks for the free space between two objects (an
*ambiguous* target, supervised by a goal mask).

The decoder only sees a coarse ``(C, h, w)`` feature map. It plays the role of
language-conditioned backbone features:

* channel 0       relevance of each cell to the instruction (soft blob on the goal)
* channel 1       any-object occupancy
* channels 2..    one occupancy channel per object type
* next block      constant one-hot query code (target type, or free space)
* remaining       distractor noise

Blobs are sampled at coarse cell centers, so sub-cell position survives only in
the ratios between neighbouring cells.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from affordmap.errors import ParameterError
from affordmap.grid import BinaryMask, FeatureMap, Heatmap
from affordmap.synthesis import (
    DEFAULT_ALPHA,
    AnnotationRecord,
    BoxSupervision,
    MaskSupervision,
    PointSupervision,
    default_sigma,
    synthesize,
)
from affordmap.training import Dataset

SUPERVISION_KINDS = ("points", "box", "mask")


@dataclass(frozen=True)
class SceneConfig:
    feature_size: int = 16
    s: int = 4
    channels: int = 16
    n_types: int = 4
    min_objects: int = 1
    max_objects: int = 4
    mix: tuple[float, float, float] = (0.35, 0.35, 0.3)  # points, box, mask
    sigma: float | None = None
    alpha: float = DEFAULT_ALPHA
    object_size: tuple[float, float] = (6.0, 14.0)
    blob_scale: float = 0.6  # blob std in coarse cells
    noise: float = 0.02

    def __post_init__(self):
        if self.feature_size < 4 or self.s < 1:
            raise ParameterError("feature_size must be >= 4 and s >= 1")
        if not 1 <= self.min_objects <= self.max_objects:
            raise ParameterError("need 1 <= min_objects <= max_objects")
        if self.max_objects < 2 and self.mix[2] > 0:
            raise ParameterError("free-space (mask) scenes need max_objects >= 2")
        if len(self.mix) != 3 or min(self.mix) < 0 or sum(self.mix) <= 0:
            raise ParameterError("mix must be three nonnegative weights with positive sum")
        if self.channels < 3 + 2 * self.n_types:
            raise ParameterError(f"channels must be >= {3 + 2 * self.n_types} for n_types={self.n_types}")

    @property
    def size(self) -> int:
        return self.feature_size * self.s

    @property
    def target_sigma(self) -> float:
        return self.sigma if self.sigma is not None else default_sigma(self.size, self.size)


@dataclass(frozen=True)
class SceneObject:
    kind: int
    center: tuple[float, float]
    width: float
    height: float

    def footprint(self, size: int) -> np.ndarray:
        ys, xs = np.mgrid[0:size, 0:size]
        cx, cy = self.center
        return (np.abs(xs - cx) <= self.width / 2) & (np.abs(ys - cy) <= self.height / 2)


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    features: FeatureMap
    annotation: AnnotationRecord
    target: Heatmap
    success_region: BinaryMask
    objects: tuple[SceneObject, ...]
    precise: bool


def _place_objects(rng, n, cfg):
    size = cfg.size
    lo, hi = cfg.object_size
    objects = []
    attempts = 0
    while len(objects) < n:
        attempts += 1
        if attempts > 2000:
            break
        w, h = rng.uniform(lo, hi, size=2)
        cx = rng.uniform(w / 2 + 1, size - w / 2 - 2)
        cy = rng.uniform(h / 2 + 1, size - h / 2 - 2)
        # keep a 3 px gap so free space between objects exists
        if any(abs(cx - o.center[0]) < (w + o.width) / 2 + 3 and abs(cy - o.center[1]) < (h + o.height) / 2 + 3
               for o in objects):
            continue
        objects.append(SceneObject(int(rng.integers(cfg.n_types)), (float(cx), float(cy)), float(w), float(h)))
    return objects


def _free_space_mask(a, b, objects, size):
    ys, xs = np.mgrid[0:size, 0:size]
    mx, my = (a.center[0] + b.center[0]) / 2, (a.center[1] + b.center[1]) / 2
    gap = np.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1])
    radius = max(3.0, 0.3 * gap)
    region = (xs - mx) ** 2 + (ys - my) ** 2 <= radius ** 2
    for o in objects:
        grown = SceneObject(o.kind, o.center, o.width + 2, o.height + 2)
        region &= ~grown.footprint(size)
    return region


def _blob(cx, cy, cfg, scale=1.0):
    """Gaussian evaluated at coarse cell centres, ``(cx, cy)`` in canvas pixels."""
    g = cfg.feature_size
    centres = np.arange(g) * cfg.s + (cfg.s - 1) / 2
    sd = cfg.blob_scale * cfg.s * scale
    return np.exp(-((centres[:, None] - cy) ** 2 + (centres[None, :] - cx) ** 2) / (2 * sd * sd))


def _object_blob(o, cfg):
    # anisotropic so the coarse channel carries the object's aspect ratio
    g = cfg.feature_size
    centres = np.arange(g) * cfg.s + (cfg.s - 1) / 2
    sx = cfg.blob_scale * cfg.s + o.width / 4
    sy = cfg.blob_scale * cfg.s + o.height / 4
    return np.exp(-(centres[:, None] - o.center[1]) ** 2 / (2 * sy * sy)
                  - (centres[None, :] - o.center[0]) ** 2 / (2 * sx * sx))


def _mask_blob(region, cfg):
    g, s = cfg.feature_size, cfg.s
    frac = region.reshape(g, s, g, s).mean(axis=(1, 3))
    ys, xs = np.nonzero(region)
    return np.maximum(frac, _blob(xs.mean(), ys.mean(), cfg))


def generate_synthetic_scene(seed, cfg: SceneConfig | None = None) -> SyntheticScene:
    """Deterministic in ``(seed, cfg)``."""
    cfg = cfg or SceneConfig()
    rng = np.random.default_rng(seed)
    size = cfg.size
    mix = np.asarray(cfg.mix, dtype=np.float64)
    sup_kind = SUPERVISION_KINDS[int(rng.choice(3, p=mix / mix.sum()))]
    n_min = max(cfg.min_objects, 2) if sup_kind == "mask" else cfg.min_objects
    for _ in range(100):
        objects = _place_objects(rng, int(rng.integers(n_min, cfg.max_objects + 1)), cfg)
        if len(objects) < n_min:
            continue
        if sup_kind != "mask":
            break
        i, j = sorted(rng.choice(len(objects), size=2, replace=False).tolist())
        region = _free_space_mask(objects[i], objects[j], objects, size)
        if region.any():
            break
    else:
        raise ParameterError("could not lay out a scene; loosen object_size or feature_size")

    sigma = cfg.target_sigma
    channels = np.zeros((cfg.channels, cfg.feature_size, cfg.feature_size))
    for o in objects:
        b = _object_blob(o, cfg)
        np.maximum(channels[1], b, out=channels[1])
        np.maximum(channels[2 + o.kind], b, out=channels[2 + o.kind])
    query_base = 2 + cfg.n_types
    if sup_kind == "mask":
        instruction = f"free space between object {i} and object {j}"
        supervision = MaskSupervision(BinaryMask(region), sigma)
        channels[0] = _mask_blob(region, cfg)
        channels[query_base + cfg.n_types] = 1.0
    else:
        t = int(rng.integers(len(objects)))
        target = objects[t]
        instruction = f"the type-{target.kind} object at index {t}"
        if sup_kind == "points":
            supervision = PointSupervision((target.center,), sigma)
        else:
            supervision = BoxSupervision(target.center, target.width, target.height, cfg.alpha)
        region = target.footprint(size)
        channels[0] = _blob(*target.center, cfg)
        channels[query_base + target.kind] = 1.0
    channels += cfg.noise * rng.standard_normal(channels.shape)

    record = AnnotationRecord(f"scene-{seed}", instruction, size, size, supervision)
    return SyntheticScene(
        features=FeatureMap(channels),
        annotation=record,
        target=synthesize(record),
        success_region=BinaryMask(region),
        objects=tuple(objects),
        precise=sup_kind != "mask",
    )


def generate_scenes(n: int, seed: int, cfg: SceneConfig | None = None) -> list[SyntheticScene]:
    seeds = np.random.SeedSequence(seed).generate_state(n, dtype=np.uint32)
    return [generate_synthetic_scene(int(s), cfg) for s in seeds]


def scenes_to_dataset(scenes) -> Dataset:
    return Dataset(np.stack([s.features.values for s in scenes]), np.stack([s.target.values for s in scenes]))


def data_hash(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str((a.dtype.str, a.shape)).encode())
        h.update(a.tobytes())
    return h.hexdigest()
