"""Pipeline manifest: where the files live and how each stage is configured.

A manifest is a JSON document; relative paths resolve against its directory::

    {
      "classes": ["aeroplane", "bicycle", ...],
      "ground_truth": "data/gt.jsonl",
      "runs": {"basic": "data/basic.jsonl", "partner": "data/partner.jsonl"},
      "proposals": "data/generator.jsonl",
      "output_dir": "out",
      "features": "20+(conf+4s)x25",
      "ap": {"iou_threshold": 0.5, "interpolation": "eleven_point"},
      "train": {"c": 1.0, "weight_hard": null, "seed": 0},
      "timing": {"t_generator_ms": 5.0, "t_classifier_ms": 0.1},
      "split": {"train_fraction": 0.6},
      "sweep_weights": [1, 2, 3],
      "simulation": {"scene": {"n_images": 500, "seed": 0}, "detector_seed": 1}
    }

Only ``ground_truth``, ``runs`` and ``output_dir`` are required. The
proposal file may alias a detector run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

from .core import DetectorRun, ImageRecord, ValidationError
from .evaluation import ApConfig, Interpolation
from .features import FeatureSpec
from .router import DEFAULT_CLASSIFIER_MS, DEFAULT_GENERATOR_MS, TimingProfile
from .simulator import VOC_CLASSES, DetectorProfile, SceneConfig, default_profiles
from .svm import TrainConfig

INTERP_FLAGS = {"11pt": Interpolation.ELEVEN_POINT, "all": Interpolation.ALL_POINT}


def _typed(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(f"manifest {where}: unknown key {unknown[0]!r}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"manifest {where}: {exc}") from None


@dataclass(frozen=True)
class SimulationConfig:
    scene: SceneConfig
    basic: DetectorProfile
    partner: DetectorProfile
    generator: DetectorProfile
    detector_seed: int = 1
    generator_seed: int = 2


@dataclass
class Manifest:
    path: Path
    classes: list[str]
    ground_truth: Path
    basic: Path
    partner: Path
    proposals: Path
    output_dir: Path
    model: Path
    spec: FeatureSpec = field(default_factory=FeatureSpec)
    ap: ApConfig = field(default_factory=ApConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    timing: dict[str, float] = field(default_factory=dict)
    train_fraction: float = 0.6
    sweep_weights: list[float] = field(default_factory=list)
    simulation: SimulationConfig | None = None

    def output(self, name: str) -> Path:
        return self.output_dir / name

    def split(self, images: Sequence[ImageRecord]) -> tuple[list[ImageRecord], list[ImageRecord]]:
        """First ``train_fraction`` of the ground-truth file trains; the rest evaluates."""
        n_train = math.floor(len(images) * self.train_fraction)
        return list(images[:n_train]), list(images[n_train:])

    def resolve_timing(self, basic: DetectorRun, partner: DetectorRun) -> TimingProfile:
        """Detector latencies from the manifest, else the runs' mean per-image latency."""

        def latency(run: DetectorRun, key: str, fps_key: str) -> float:
            if key in self.timing:
                return float(self.timing[key])
            if fps_key in self.timing:
                return 1000.0 / float(self.timing[fps_key])
            if run.latency_ms:
                return math.fsum(run.latency_ms.values()) / len(run.latency_ms)
            if run.fps:
                return 1000.0 / run.fps
            raise ValidationError(f"no timing for {run.detector_id}: set timing.{key}")

        return TimingProfile(
            latency(basic, "t_basic_ms", "basic_fps"),
            latency(partner, "t_partner_ms", "partner_fps"),
            float(self.timing.get("t_generator_ms", DEFAULT_GENERATOR_MS)),
            float(self.timing.get("t_classifier_ms", DEFAULT_CLASSIFIER_MS)),
        )


_TOP_KEYS = {
    "classes", "ground_truth", "runs", "proposals", "output_dir", "model", "features",
    "ap", "train", "timing", "split", "sweep_weights", "simulation",
}  # fmt: skip


def _simulation(raw: dict, classes: list[str]) -> SimulationConfig:
    fast, accurate, generator = default_profiles()
    scene = _typed(SceneConfig, {"classes": classes, **raw.get("scene", {})}, "simulation.scene")

    def profile(key: str, default: DetectorProfile) -> DetectorProfile:
        over = raw.get(key, {})
        return _typed(DetectorProfile, {**default.__dict__, **over}, f"simulation.{key}")

    extra = sorted(set(raw) - {"scene", "basic", "partner", "generator", "detector_seed", "generator_seed"})
    if extra:
        raise ValidationError(f"manifest simulation: unknown key {extra[0]!r}")
    return SimulationConfig(
        scene,
        profile("basic", fast),
        profile("partner", accurate),
        profile("generator", generator),
        int(raw.get("detector_seed", 1)),
        int(raw.get("generator_seed", 2)),
    )


def load_manifest(path: str | Path, **overrides: Any) -> Manifest:
    """Read a manifest and apply command-line overrides.

    Recognized overrides (``None`` means unset): ``spec``, ``k``, ``seed``,
    ``iou``, ``interp`` ("11pt" or "all") and ``weights``.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: manifest must be a JSON object")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ValidationError(f"{path}: unknown manifest key {unknown[0]!r}")
    base = path.parent

    def resolve(key: str, value: Any) -> Path:
        if not isinstance(value, str):
            raise ValidationError(f"{path}: {key} must be a path string")
        p = Path(value)
        return p if p.is_absolute() else base / p

    for key in ("ground_truth", "runs", "output_dir"):
        if key not in raw:
            raise ValidationError(f"{path}: missing required key {key!r}")
    runs = raw["runs"]
    if not isinstance(runs, dict) or not {"basic", "partner"} <= set(runs):
        raise ValidationError(f"{path}: runs needs 'basic' and 'partner'")
    classes = list(raw.get("classes", VOC_CLASSES))
    output_dir = resolve("output_dir", raw["output_dir"])

    spec = FeatureSpec.parse(overrides.get("spec") or raw.get("features", FeatureSpec().describe()))
    if overrides.get("k") is not None:
        spec = replace(spec, k=int(overrides["k"]))

    ap_raw = dict(raw.get("ap", {}))
    if overrides.get("iou") is not None:
        ap_raw["iou_threshold"] = float(overrides["iou"])
    if overrides.get("interp") is not None:
        ap_raw["interpolation"] = INTERP_FLAGS[overrides["interp"]]
    ap = _typed(ApConfig, ap_raw, "ap")

    train_raw = dict(raw.get("train", {}))
    if overrides.get("seed") is not None:
        train_raw["seed"] = int(overrides["seed"])
    train = _typed(TrainConfig, train_raw, "train")

    weights = overrides.get("weights")
    if weights is None:
        weights = raw.get("sweep_weights", [])
    weights = [float(w) for w in weights]

    split = raw.get("split", {})
    frac = float(split.get("train_fraction", 0.6))
    if not 0.0 < frac < 1.0:
        raise ValidationError(f"{path}: split.train_fraction must be in (0, 1)")

    sim = None
    if "simulation" in raw:
        sim_raw = dict(raw["simulation"])
        if overrides.get("seed") is not None:
            sim_raw["scene"] = {**sim_raw.get("scene", {}), "seed": int(overrides["seed"])}
        sim = _simulation(sim_raw, classes)

    timing = raw.get("timing", {})
    if not isinstance(timing, dict):
        raise ValidationError(f"{path}: timing must be an object")

    return Manifest(
        path=path,
        classes=classes,
        ground_truth=resolve("ground_truth", raw["ground_truth"]),
        basic=resolve("runs.basic", runs["basic"]),
        partner=resolve("runs.partner", runs["partner"]),
        proposals=resolve("proposals", raw.get("proposals", runs["basic"])),
        output_dir=output_dir,
        model=resolve("model", raw["model"]) if "model" in raw else output_dir / "model.json",
        spec=spec,
        ap=ap,
        train=train,
        timing=timing,
        train_fraction=frac,
        sweep_weights=weights,
        simulation=sim,
    )
