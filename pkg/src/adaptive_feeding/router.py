"""Dispatch images to the basic or partner detector and account for the result."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .core import DetectorRun, ImageRecord
from .evaluation import ApConfig, dataset_map, run_mapi
from .features import FeatureSpec, Proposal, SpecMismatchError, encode_many
from .labeling import EasyHardLabel, Label
from .svm import LinearModel, TrainConfig, evaluate_classifier, predict_many, train


DEFAULT_GENERATOR_MS = 5.0
DEFAULT_CLASSIFIER_MS = 0.1


class Route(str, Enum):
    BASIC = "basic"
    PARTNER = "partner"


class CoverageError(KeyError):
    def __str__(self) -> str:
        return self.args[0]


@dataclass(frozen=True)
class TimingProfile:
    """Per-image costs in milliseconds."""

    t_basic_ms: float
    t_partner_ms: float
    t_generator_ms: float = DEFAULT_GENERATOR_MS
    t_classifier_ms: float = DEFAULT_CLASSIFIER_MS

    def __post_init__(self) -> None:
        for name in ("t_basic_ms", "t_partner_ms", "t_generator_ms", "t_classifier_ms"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")

    @classmethod
    def from_fps(cls, basic_fps: float, partner_fps: float, **kw) -> TimingProfile:
        return cls(1000.0 / basic_fps, 1000.0 / partner_fps, **kw)

    @property
    def overhead_ms(self) -> float:
        return self.t_generator_ms + self.t_classifier_ms


def expected_latency_ms(timing: TimingProfile, fraction_easy: float) -> float:
    """Mean per-image latency when ``fraction_easy`` of images take the basic path."""
    return (
        timing.overhead_ms
        + fraction_easy * timing.t_basic_ms
        + (1.0 - fraction_easy) * timing.t_partner_ms
    )


def fps_from_latency(latency_ms: float) -> float:
    return 1000.0 / latency_ms


def speed_up_ratio(fps_af: float, fps_partner: float) -> float:
    return (fps_af - fps_partner) / fps_partner


def decreased_map(map_partner: float, map_af: float) -> float:
    return map_partner - map_af


@dataclass(frozen=True)
class RoutingResult:
    routes: dict[str, Route]
    detections: DetectorRun
    fraction_easy_predicted: float
    map: float
    mean_mapi: float
    map_partner: float
    latency_ms: float | None = None
    fps: float | None = None
    fps_partner: float | None = None

    @property
    def sur(self) -> float | None:
        if self.fps is None or self.fps_partner is None:
            return None
        return speed_up_ratio(self.fps, self.fps_partner)

    @property
    def dmap(self) -> float:
        return decreased_map(self.map_partner, self.map)


def _check_coverage(images: Sequence[ImageRecord], **sources: Mapping) -> None:
    for image in images:
        for name, src in sources.items():
            if image.image_id not in src:
                raise CoverageError(f"{name} has no entry for image {image.image_id!r}")


def _assemble(
    routes: dict[str, Route],
    run_basic: DetectorRun,
    run_partner: DetectorRun,
    images: Sequence[ImageRecord],
    cfg: ApConfig,
    timing: TimingProfile | None,
) -> RoutingResult:
    chosen = {
        im.image_id: (run_basic if routes[im.image_id] is Route.BASIC else run_partner)
        for im in images
    }
    routed = DetectorRun(
        "af",
        {i: run.detections[i] for i, run in chosen.items()},
        {i: run.latency_ms[i] for i, run in chosen.items() if i in run.latency_ms},
    )
    n = len(images)
    frac_easy = sum(1 for r in routes.values() if r is Route.BASIC) / n
    map_af, _ = dataset_map(routed, images, cfg)
    map_partner, _ = dataset_map(run_partner, images, cfg)
    mean_mapi = float(np.mean([r.p_value for r in run_mapi(routed, images, cfg)]))

    latency = fps = fps_partner = None
    ids = [im.image_id for im in images]
    if run_basic.has_latency(ids) and run_partner.has_latency(ids):
        overhead = timing.overhead_ms if timing else DEFAULT_GENERATOR_MS + DEFAULT_CLASSIFIER_MS
        latency = overhead + math.fsum(routed.latency_ms[i] for i in ids) / n
        fps_partner = fps_from_latency(math.fsum(run_partner.latency_ms[i] for i in ids) / n)
    elif timing is not None:
        latency = expected_latency_ms(timing, frac_easy)
        fps_partner = fps_from_latency(timing.t_partner_ms)
    if latency is not None:
        fps = fps_from_latency(latency)
    return RoutingResult(routes, routed, frac_easy, map_af, mean_mapi, map_partner, latency, fps, fps_partner)


def route(
    model: LinearModel,
    proposals: Mapping[str, Sequence[Proposal]],
    run_basic: DetectorRun,
    run_partner: DetectorRun,
    images: Sequence[ImageRecord],
    spec: FeatureSpec,
    cfg: ApConfig = ApConfig(),
    timing: TimingProfile | None = None,
) -> RoutingResult:
    """Send each image to the detector the classifier picks.

    Latency uses the chosen detectors' per-image timings when both runs carry
    them, otherwise the analytic mix of ``timing``.
    """
    if not images:
        raise ValueError("no images to route")
    model.check_spec(spec.hash)
    if model.dimension != spec.dimension():
        raise SpecMismatchError(f"model dimension {model.dimension} != spec {spec.dimension()}")
    _check_coverage(
        images,
        proposals=proposals,
        basic=run_basic.detections,
        partner=run_partner.detections,
    )
    pred = predict_many(model, encode_many(proposals, images, spec))
    routes = {
        im.image_id: (Route.PARTNER if p == int(Label.HARD) else Route.BASIC)
        for im, p in zip(images, pred)
    }
    return _assemble(routes, run_basic, run_partner, images, cfg, timing)


def route_oracle(
    labels: Sequence[EasyHardLabel],
    run_basic: DetectorRun,
    run_partner: DetectorRun,
    images: Sequence[ImageRecord],
    cfg: ApConfig = ApConfig(),
    timing: TimingProfile | None = None,
) -> RoutingResult:
    """Route by the true easy/hard label, an upper bound on learned routing."""
    if not images:
        raise ValueError("no images to route")
    by_id = {lab.image_id: lab for lab in labels}
    _check_coverage(images, labels=by_id, basic=run_basic.detections, partner=run_partner.detections)
    routes = {
        im.image_id: (Route.PARTNER if by_id[im.image_id].label == Label.HARD else Route.BASIC)
        for im in images
    }
    return _assemble(routes, run_basic, run_partner, images, cfg, timing)


@dataclass(frozen=True)
class SweepRow:
    weight: float
    accuracy: float
    recall: float
    map: float
    mean_mapi: float
    fps: float | None
    sur: float | None
    dmap: float
    fraction_easy: float


def sweep_weights(
    weights: Sequence[float],
    train_features: np.ndarray,
    train_labels: Sequence[int],
    eval_images: Sequence[ImageRecord],
    eval_labels: Sequence[EasyHardLabel],
    proposals: Mapping[str, Sequence[Proposal]],
    run_basic: DetectorRun,
    run_partner: DetectorRun,
    spec: FeatureSpec,
    train_cfg: TrainConfig = TrainConfig(),
    ap_cfg: ApConfig = ApConfig(),
    timing: TimingProfile | None = None,
    threads: int = 1,
) -> list[SweepRow]:
    """Train one classifier per hard-class weight and route the eval set with each.

    Rows come back in the order of ``weights`` regardless of ``threads``.
    """
    if not weights:
        raise ValueError("no weights to sweep")
    if any(not w > 0 for w in weights):
        raise ValueError(f"weights must be > 0, got {list(weights)}")
    by_id = {lab.image_id: int(lab.label) for lab in eval_labels}
    _check_coverage(eval_images, labels=by_id)
    eval_y = [by_id[im.image_id] for im in eval_images]
    eval_X = encode_many(proposals, eval_images, spec)

    def one(weight: float) -> SweepRow:
        model = train(train_features, train_labels, replace(train_cfg, weight_hard=weight), spec.hash)
        metrics = evaluate_classifier(model, eval_X, eval_y)
        res = route(model, proposals, run_basic, run_partner, eval_images, spec, ap_cfg, timing)
        return SweepRow(
            weight, metrics.accuracy, metrics.recall_hard, res.map, res.mean_mapi,
            res.fps, res.sur, res.dmap, res.fraction_easy_predicted,
        )  # fmt: skip

    if threads <= 1:
        return [one(w) for w in weights]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, weights))
