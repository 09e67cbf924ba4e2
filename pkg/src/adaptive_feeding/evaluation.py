"""VOC-protocol average precision at dataset and single-image level."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import Detection, DetectorRun, GtObject, ImageRecord, iou

TP, FP, IGNORED = 1, 0, -1


class Interpolation(str, Enum):
    ELEVEN_POINT = "eleven_point"
    ALL_POINT = "all_point"


class UndefinedAPError(ValueError):
    """AP requested for a class with no positive ground truth."""


class EmptyDatasetError(ValueError):
    """No class in the dataset has a positive ground-truth instance."""


@dataclass(frozen=True)
class ApConfig:
    iou_threshold: float = 0.5
    interpolation: Interpolation = Interpolation.ELEVEN_POINT
    ignore_difficult: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold must be in (0, 1], got {self.iou_threshold}")
        object.__setattr__(self, "interpolation", Interpolation(self.interpolation))


@dataclass(frozen=True)
class Matching:
    """Detections in rank order with their tp/fp/ignored flags."""

    ranked: tuple[Detection, ...]
    flags: tuple[int, ...]
    n_positives: int


@dataclass(frozen=True)
class PrCurve:
    recall: np.ndarray
    precision: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    n_positives: int


@dataclass(frozen=True)
class ImageEvalResult:
    image_id: str
    p_value: float
    s_classes: int
    class_ap: Mapping[int, float] = field(default_factory=dict)


def rank_key(det: Detection) -> tuple:
    return (-det.score, det.bbox.xmin, det.bbox.ymin, det.class_id)


def _count_positives(gts: Iterable[GtObject], cfg: ApConfig) -> int:
    return sum(1 for g in gts if not (cfg.ignore_difficult and g.difficult))


def _match_ranked(
    entries: Sequence[tuple[int, Detection]],
    gts_by_image: Mapping[int, Sequence[GtObject]],
    cfg: ApConfig,
) -> tuple[list[tuple[int, Detection]], list[int]]:
    # entries: (image index, detection); image index is the final tie-break
    ordered = sorted(entries, key=lambda e: (*rank_key(e[1]), e[0]))
    taken: dict[int, list[bool]] = {k: [False] * len(v) for k, v in gts_by_image.items()}
    flags = []
    for img, det in ordered:
        gts = gts_by_image.get(img, ())
        best, best_j = -1.0, -1
        for j, gt in enumerate(gts):
            ov = iou(det.bbox, gt.bbox)
            if ov > best:
                best, best_j = ov, j
        if best_j < 0 or best < cfg.iou_threshold:
            flags.append(FP)
        elif cfg.ignore_difficult and gts[best_j].difficult:
            flags.append(IGNORED)
        elif not taken[img][best_j]:
            taken[img][best_j] = True
            flags.append(TP)
        else:
            flags.append(FP)
    return ordered, flags


def match_detections(
    dets: Sequence[Detection], gts: Sequence[GtObject], cfg: ApConfig = ApConfig()
) -> Matching:
    """Greedy VOC matching of one class's detections against its ground truth.

    Each detection, in rank order, is compared with every ground-truth box of
    its class; the highest-IoU box wins. If that box is already claimed the
    detection is a duplicate and counts as a false positive.
    """
    classes = {d.class_id for d in dets}
    if len(classes) > 1:
        raise ValueError(f"detections span several classes: {sorted(classes)}")
    ordered, flags = _match_ranked([(0, d) for d in dets], {0: list(gts)}, cfg)
    return Matching(
        ranked=tuple(d for _, d in ordered),
        flags=tuple(flags),
        n_positives=_count_positives(gts, cfg),
    )


def pr_curve(flags: Sequence[int], n_positives: int) -> PrCurve:
    kept = np.array([f for f in flags if f != IGNORED], dtype=np.int64)
    tp = np.cumsum(kept == TP)
    fp = np.cumsum(kept == FP)
    denom = max(n_positives, 1)
    recall = tp / denom
    precision = tp / np.maximum(tp + fp, 1)
    return PrCurve(recall, precision, tp, fp, n_positives)


def average_precision(curve: PrCurve, cfg: ApConfig = ApConfig()) -> float:
    """Area summary of a precision/recall curve.

    Raises:
        UndefinedAPError: if the curve has no positives to recall.
    """
    if curve.n_positives < 1:
        raise UndefinedAPError("average precision is undefined without positives")
    rec, prec = curve.recall, curve.precision
    if rec.size == 0:
        return 0.0
    if cfg.interpolation is Interpolation.ELEVEN_POINT:
        total = 0.0
        for i in range(11):
            mask = rec >= i / 10
            if mask.any():
                total += float(prec[mask].max())
        return total / 11
    mrec = np.concatenate(([0.0], rec, [1.0]))
    mpre = np.concatenate(([0.0], prec, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def _gts_by_class(image: ImageRecord) -> dict[int, list[GtObject]]:
    out: dict[int, list[GtObject]] = defaultdict(list)
    for obj in image.objects:
        out[obj.class_id].append(obj)
    return out


def dataset_map(
    run: DetectorRun, images: Sequence[ImageRecord], cfg: ApConfig = ApConfig()
) -> tuple[float, dict[int, float]]:
    """Mean of per-class AP over classes with at least one positive instance.

    Images absent from ``run`` are treated as having no detections.
    """
    gts: dict[int, dict[int, list[GtObject]]] = defaultdict(dict)
    dets: dict[int, list[tuple[int, Detection]]] = defaultdict(list)
    for idx, image in enumerate(images):
        for cls, objs in _gts_by_class(image).items():
            gts[cls][idx] = objs
        for det in run.detections.get(image.image_id, ()):
            dets[det.class_id].append((idx, det))

    class_ap: dict[int, float] = {}
    for cls in sorted(gts):
        npos = sum(_count_positives(v, cfg) for v in gts[cls].values())
        if npos == 0:
            continue
        _, flags = _match_ranked(dets.get(cls, []), gts[cls], cfg)
        class_ap[cls] = average_precision(pr_curve(flags, npos), cfg)
    if not class_ap:
        raise EmptyDatasetError("no class has a positive ground-truth instance")
    return float(np.mean(list(class_ap.values()))), class_ap


def image_mapi(
    dets: Sequence[Detection], image: ImageRecord, cfg: ApConfig = ApConfig()
) -> ImageEvalResult:
    """Per-image mAP over the classes present in the image's ground truth.

    Detections of classes absent from the image are ignored. An image with no
    positive ground truth scores 0.
    """
    by_class: dict[int, list[Detection]] = defaultdict(list)
    for d in dets:
        by_class[d.class_id].append(d)
    class_ap = {}
    for cls, objs in sorted(_gts_by_class(image).items()):
        if _count_positives(objs, cfg) == 0:
            continue
        m = match_detections(by_class.get(cls, []), objs, cfg)
        class_ap[cls] = average_precision(pr_curve(m.flags, m.n_positives), cfg)
    s = len(class_ap)
    p = float(np.mean(list(class_ap.values()))) if s else 0.0
    return ImageEvalResult(image.image_id, p, s, class_ap)


def run_mapi(
    run: DetectorRun, images: Sequence[ImageRecord], cfg: ApConfig = ApConfig()
) -> list[ImageEvalResult]:
    return [image_mapi(run.detections.get(im.image_id, ()), im, cfg) for im in images]
