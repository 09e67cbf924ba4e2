"""Seeded synthetic scenes and detector outputs.

Randomness comes from numpy's PCG64 bit generator keyed by a SeedSequence of
(seed, image index, stream). Only ``Generator.random()`` (53-bit uniform
doubles) is consumed; normal, Poisson and log-uniform draws are derived from
it here so that outputs do not depend on numpy's distribution code.

Per-object draws mix a stream shared by every detector with one keyed by the
profile's noise parameters, weighted by ``shared_noise``. Two identical
profiles therefore emit identical detections, and changing only a recall
keeps all other draws fixed, so lowering it only removes detections.
False-positive clutter is drawn from the profile-keyed stream alone.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import BBox, Detection, DetectorRun, GtObject, ImageRecord

RNG_ALGORITHM = (
    "numpy-PCG64+SeedSequence(seed,image,stream); uniform=(u64>>11)*2^-53; "
    "normal=Box-Muller; poisson=Knuth"
)

VOC_CLASSES = (
    "aeroplane", "bicycle", "bird", "boat", "bottle", "bus", "car", "cat", "chair", "cow",
    "diningtable", "dog", "horse", "motorbike", "person", "pottedplant", "sheep", "sofa",
    "train", "tvmonitor",
)  # fmt: skip

_SCENE_STREAM, _OBJECT_STREAM, _FP_STREAM = 0, 1, 2


def quantize(x: float) -> float:
    """Round to 9 significant digits, the precision used in every output file."""
    return float(f"{x:.9g}")


class _Stream:
    def __init__(self, *key: int):
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * float(self._gen.random())

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        u1 = 1.0 - self.uniform()  # (0, 1]
        u2 = self.uniform()
        return mean + std * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def log_uniform(self, lo: float, hi: float) -> float:
        return math.exp(self.uniform(math.log(lo), math.log(hi)))

    def poisson(self, lam: float) -> int:
        if lam <= 0:
            return 0
        limit, k, prod = math.exp(-lam), 0, self.uniform()
        while prod > limit:
            k += 1
            prod *= self.uniform()
        return k

    def index(self, n: int) -> int:
        return min(int(self.uniform() * n), n - 1)


@dataclass(frozen=True)
class SceneConfig:
    n_images: int = 500
    width: int = 500
    height: int = 375
    classes: tuple[str, ...] = VOC_CLASSES
    mean_objects: float = 2.0
    fixed_objects: int | None = None
    max_objects: int = 12
    min_size: float = 16.0
    max_size: float = 320.0
    small_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "classes", tuple(self.classes))
        if self.n_images < 0 or self.max_objects < 0 or self.mean_objects < 0:
            raise ValueError("counts must be >= 0")
        if self.fixed_objects is not None and self.fixed_objects < 0:
            raise ValueError("fixed_objects must be >= 0")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not 0 < self.min_size < self.max_size:
            raise ValueError("need 0 < min_size < max_size")
        if not 0.0 <= self.small_fraction <= 1.0:
            raise ValueError("small_fraction must be in [0, 1]")
        if not self.classes:
            raise ValueError("at least one class is required")

    def size_thresholds(self) -> tuple[float, float]:
        """sqrt(area) boundaries splitting [min_size, max_size] into thirds."""
        span = self.max_size - self.min_size
        return (self.min_size + span / 3, self.min_size + 2 * span / 3)


@dataclass(frozen=True)
class DetectorProfile:
    detector_id: str
    recall_by_size: tuple[float, float, float] = (0.5, 0.8, 0.95)
    localization_noise: float = 0.05
    false_positive_rate: float = 0.5
    tp_score_mean: float = 0.75
    tp_score_std: float = 0.15
    fp_score_mean: float = 0.35
    fp_score_std: float = 0.15
    class_confusion: float = 0.0
    shared_noise: float = 0.5
    latency_ms: float = 20.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "recall_by_size", tuple(self.recall_by_size))
        if len(self.recall_by_size) != 3:
            raise ValueError("recall_by_size needs (small, medium, large)")
        for p in (*self.recall_by_size, self.class_confusion, self.shared_noise):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")
        if self.localization_noise < 0 or self.false_positive_rate < 0:
            raise ValueError("noise and false_positive_rate must be >= 0")
        if self.tp_score_std < 0 or self.fp_score_std < 0:
            raise ValueError("score spreads must be >= 0")
        if not self.latency_ms > 0:
            raise ValueError("latency_ms must be > 0")


def size_bucket(box: BBox, cfg: SceneConfig) -> int:
    """0 small, 1 medium, 2 large by sqrt(area)."""
    s = math.sqrt(box.area())
    lo, hi = cfg.size_thresholds()
    return 0 if s < lo else (1 if s < hi else 2)


def _draw_box(rng: _Stream, side: float, width: int, height: int) -> BBox:
    aspect = rng.log_uniform(0.5, 2.0)
    w = min(side * math.sqrt(aspect), float(width))
    h = min(side / math.sqrt(aspect), float(height))
    x0 = rng.uniform(0.0, width - w)
    y0 = rng.uniform(0.0, height - h)
    return BBox(quantize(x0), quantize(y0), quantize(min(x0 + w, width)), quantize(min(y0 + h, height)))


def generate_scenes(cfg: SceneConfig) -> list[ImageRecord]:
    lo, _ = cfg.size_thresholds()
    images = []
    for i in range(cfg.n_images):
        rng = _Stream(cfg.seed, i, _SCENE_STREAM)
        if cfg.fixed_objects is not None:
            n = cfg.fixed_objects
        else:
            n = min(1 + rng.poisson(max(cfg.mean_objects - 1.0, 0.0)), cfg.max_objects)
        objects = []
        for _ in range(n):
            cls = rng.index(len(cfg.classes))
            small = rng.uniform() < cfg.small_fraction
            side = rng.uniform(cfg.min_size, lo) if small else rng.log_uniform(lo, cfg.max_size)
            objects.append(GtObject(cls, _draw_box(rng, side, cfg.width, cfg.height)))
        images.append(ImageRecord(f"img{i:06d}", cfg.width, cfg.height, tuple(objects)))
    return images


def _score(rng: _Stream, mean: float, std: float) -> float:
    return quantize(min(max(rng.normal(mean, std), 0.0), 1.0))


def _jitter(rng: _Stream, box: BBox, noise: float, width: int, height: int) -> BBox:
    dx = [rng.normal(0.0, 1.0) for _ in range(4)]
    w, h = box.width, box.height
    x0, x1 = sorted((box.xmin + noise * w * dx[0], box.xmax + noise * w * dx[2]))
    y0, y1 = sorted((box.ymin + noise * h * dx[1], box.ymax + noise * h * dx[3]))
    return BBox(
        quantize(min(max(x0, 0.0), width)),
        quantize(min(max(y0, 0.0), height)),
        quantize(min(max(x1, 0.0), width)),
        quantize(min(max(y1, 0.0), height)),
    )


def _noise_key(profile: DetectorProfile) -> int:
    # everything except identity, recall and latency
    params = asdict(profile)
    for name in ("detector_id", "recall_by_size", "latency_ms"):
        params.pop(name)
    return zlib.crc32(json.dumps(params, sort_keys=True).encode())


class _MixedStream:
    """Normals correlated across profiles: sqrt(rho) * shared + sqrt(1 - rho) * own.

    Uniforms are the standard normal CDF of a mixed normal, so they stay
    exactly uniform while inheriting the correlation.
    """

    def __init__(self, shared: _Stream, own: _Stream, rho: float):
        self._shared, self._own = shared, own
        self._a, self._b = math.sqrt(rho), math.sqrt(1.0 - rho)

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        z = self._a * self._shared.normal() + self._b * self._own.normal()
        return mean + std * z

    def uniform(self) -> float:
        return 0.5 * (1.0 + math.erf(self.normal() / math.sqrt(2.0)))

    def index(self, n: int) -> int:
        return min(int(self.uniform() * n), n - 1)


def simulate_detector(
    scenes: Sequence[ImageRecord],
    profile: DetectorProfile,
    seed: int,
    scene_cfg: SceneConfig | None = None,
) -> DetectorRun:
    """Detections for ``scenes`` drawn from ``profile``.

    ``scene_cfg`` supplies the size buckets and class count; the defaults are
    used when it is omitted.
    """
    cfg = scene_cfg or SceneConfig()
    n_classes = len(cfg.classes)
    key = _noise_key(profile)
    detections: dict[str, tuple[Detection, ...]] = {}
    latency: dict[str, float] = {}
    for i, image in enumerate(scenes):
        out = []
        rng = _MixedStream(
            _Stream(seed, i, _OBJECT_STREAM), _Stream(seed, i, _OBJECT_STREAM, key), profile.shared_noise
        )
        for obj in image.objects:
            # fixed draw pattern per object keeps streams aligned across profiles
            hit = rng.uniform() < profile.recall_by_size[size_bucket(obj.bbox, cfg)]
            box = _jitter(rng, obj.bbox, profile.localization_noise, image.width, image.height)
            score = _score(rng, profile.tp_score_mean, profile.tp_score_std)
            confused = rng.uniform() < profile.class_confusion
            other = rng.index(max(n_classes - 1, 1))
            if not hit:
                continue
            cls = obj.class_id
            if confused and n_classes > 1:
                cls = other if other < obj.class_id else other + 1
            out.append(Detection(cls, score, box))
        rng = _Stream(seed, i, _FP_STREAM, key)
        for _ in range(rng.poisson(profile.false_positive_rate)):
            cls = rng.index(n_classes)
            side = rng.log_uniform(cfg.min_size, cfg.max_size)
            box = _draw_box(rng, side, image.width, image.height)
            out.append(Detection(cls, _score(rng, profile.fp_score_mean, profile.fp_score_std), box))
        detections[image.image_id] = tuple(out)
        latency[image.image_id] = profile.latency_ms
    return DetectorRun(profile.detector_id, detections, latency, 1000.0 / profile.latency_ms)


def default_profiles() -> tuple[DetectorProfile, DetectorProfile, DetectorProfile]:
    """(fast, accurate, generator) profiles tuned for a VOC-like easy majority."""
    fast = DetectorProfile(
        "fast",
        recall_by_size=(0.6, 0.9, 0.96),
        localization_noise=0.06,
        false_positive_rate=0.6,
        tp_score_mean=0.7,
        latency_ms=21.7,
    )
    accurate = DetectorProfile(
        "accurate",
        recall_by_size=(0.85, 0.95, 0.98),
        localization_noise=0.04,
        false_positive_rate=0.4,
        tp_score_mean=0.8,
        latency_ms=52.6,
    )
    generator = DetectorProfile(
        "generator",
        recall_by_size=(0.4, 0.75, 0.9),
        localization_noise=0.1,
        false_positive_rate=1.5,
        tp_score_mean=0.65,
        tp_score_std=0.2,
        fp_score_mean=0.25,
        latency_ms=5.0,
    )
    return fast, accurate, generator


@dataclass(frozen=True)
class Bundle:
    images: list[ImageRecord]
    basic: DetectorRun
    partner: DetectorRun
    generator: DetectorRun
    header: dict = field(default_factory=dict)


def paired_benchmark(
    scene_cfg: SceneConfig,
    fast: DetectorProfile,
    accurate: DetectorProfile,
    generator: DetectorProfile,
    detector_seed: int = 1,
    generator_seed: int = 2,
) -> Bundle:
    """Ground truth plus basic, partner and generator runs over the same scenes.

    Basic and partner share ``detector_seed``; the generator draws from its
    own seed so its misses are not copies of the detectors'.
    """
    images = generate_scenes(scene_cfg)
    basic = simulate_detector(images, fast, detector_seed, scene_cfg)
    partner = simulate_detector(images, accurate, detector_seed, scene_cfg)
    gen = simulate_detector(images, generator, generator_seed, scene_cfg)
    header = {
        "rng": RNG_ALGORITHM,
        "scene": asdict(scene_cfg),
        "size_buckets": {"sqrt_area_thresholds": list(scene_cfg.size_thresholds())},
        "profiles": {"basic": asdict(fast), "partner": asdict(accurate), "generator": asdict(generator)},
        "seeds": {
            "scene": scene_cfg.seed,
            "detectors": detector_seed,
            "generator": generator_seed,
        },
    }
    return Bundle(images, basic, partner, gen, header)
