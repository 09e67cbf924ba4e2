"""Easy/hard ground truth from the per-image mAPI of two detectors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

from .core import DetectorRun, ImageRecord
from .evaluation import ApConfig, image_mapi


class Label(IntEnum):
    EASY = -1
    HARD = 1


class MissingImageError(KeyError):
    def __init__(self, detector_id: str, image_id: str):
        super().__init__(f"run {detector_id!r} has no entry for image {image_id!r}")
        self.detector_id = detector_id
        self.image_id = image_id

    def __str__(self) -> str:
        return self.args[0]


@dataclass(frozen=True)
class EasyHardLabel:
    image_id: str
    p1: float
    p2: float
    label: Label

    @classmethod
    def from_scores(cls, image_id: str, p1: float, p2: float) -> EasyHardLabel:
        # ties go to the fast detector
        return cls(image_id, p1, p2, Label.HARD if p2 > p1 else Label.EASY)


@dataclass(frozen=True)
class LabelStats:
    n_easy: int
    n_hard: int
    easy_ratio: float
    hard_ratio: float
    balanced_weight: float


def balanced_weight(n_easy: float, n_hard: float) -> float:
    """Cost multiplier for hard examples that equalizes total class cost.

    Accepts counts or percentages alike; infinite when there are no hard images.
    """
    if n_hard == 0:
        return math.inf
    return n_easy / n_hard


def label_images(
    run_basic: DetectorRun,
    run_partner: DetectorRun,
    images: Sequence[ImageRecord],
    cfg: ApConfig = ApConfig(),
) -> list[EasyHardLabel]:
    labels = []
    for image in images:
        for run in (run_basic, run_partner):
            if image.image_id not in run.detections:
                raise MissingImageError(run.detector_id, image.image_id)
        p1 = image_mapi(run_basic.detections[image.image_id], image, cfg).p_value
        p2 = image_mapi(run_partner.detections[image.image_id], image, cfg).p_value
        labels.append(EasyHardLabel.from_scores(image.image_id, p1, p2))
    return labels


def label_stats(labels: Sequence[EasyHardLabel]) -> LabelStats:
    if not labels:
        raise ValueError("cannot summarize an empty label list")
    n_hard = sum(1 for lab in labels if lab.label == Label.HARD)
    n_easy = len(labels) - n_hard
    n = len(labels)
    return LabelStats(n_easy, n_hard, n_easy / n, n_hard / n, balanced_weight(n_easy, n_hard))
