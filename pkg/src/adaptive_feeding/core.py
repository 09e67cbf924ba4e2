"""Domain types shared across the cascade, plus box geometry."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping


class ValidationError(ValueError):
    """Raised when a record violates a type invariant."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in continuous, 0-based pixel coordinates."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        if not (self.xmin <= self.xmax and self.ymin <= self.ymax):
            raise ValidationError(
                f"inverted box ({self.xmin}, {self.ymin}, {self.xmax}, {self.ymax})"
            )

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)

    @classmethod
    def from_voc(cls, xmin: float, ymin: float, xmax: float, ymax: float) -> BBox:
        """Convert VOC's 1-based inclusive pixel indices to continuous coordinates."""
        return cls(xmin - 1.0, ymin - 1.0, float(xmax), float(ymax))


@dataclass(frozen=True)
class GtObject:
    class_id: int
    bbox: BBox
    difficult: bool = False


@dataclass(frozen=True)
class Detection:
    class_id: int
    score: float
    bbox: BBox

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    width: int
    height: int
    objects: tuple[GtObject, ...] = ()

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(
                f"image {self.image_id}: non-positive size {self.width}x{self.height}"
            )
        for obj in self.objects:
            b = obj.bbox
            if b.xmin < 0 or b.ymin < 0 or b.xmax > self.width or b.ymax > self.height:
                raise ValidationError(
                    f"image {self.image_id}: object box {b.as_tuple()} "
                    f"outside {self.width}x{self.height}"
                )

    def class_ids(self) -> set[int]:
        return {obj.class_id for obj in self.objects}


@dataclass(frozen=True)
class DetectorRun:
    """Detections of one detector over a set of images.

    ``latency_ms`` holds measured per-image latencies where known; ``fps`` is
    the nominal throughput used when no per-image timing exists.
    """

    detector_id: str
    detections: Mapping[str, tuple[Detection, ...]]
    latency_ms: Mapping[str, float] = field(default_factory=dict)
    fps: float | None = None

    def __post_init__(self) -> None:
        for image_id, ms in self.latency_ms.items():
            if not ms > 0:
                raise ValidationError(f"image {image_id}: latency_ms must be > 0, got {ms}")
        if self.fps is not None and not self.fps > 0:
            raise ValidationError(f"fps must be > 0, got {self.fps}")

    def for_image(self, image_id: str) -> tuple[Detection, ...]:
        return self.detections[image_id]

    def has_latency(self, image_ids) -> bool:
        return all(i in self.latency_ms for i in image_ids)

    def check_images(self, images) -> None:
        known = {im.image_id for im in images}
        unknown = sorted(set(self.detections) - known)
        if unknown:
            raise ValidationError(f"run {self.detector_id}: unknown image_id {unknown[0]!r}")


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 when the union has no area."""
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area() + b.area() - inter
    if union <= 0:
        return 0.0
    return min(1.0, inter / union)


def clamp_bbox(b: BBox, width: int, height: int) -> BBox:
    def clip(v: float, hi: float) -> float:
        return min(max(v, 0.0), float(hi))

    return BBox(
        clip(b.xmin, width), clip(b.ymin, height), clip(b.xmax, width), clip(b.ymax, height)
    )
