"""Command-line pipeline: simulate, label, featurize, train, evaluate, route, sweep, report.

Every command reads ``--manifest``, writes its artifacts atomically into the
manifest's output directory and exits with 0 (ok), 2 (validation), 3 (I/O)
or 4 (solver did not converge). Failures print a one-line JSON envelope
``{"stage", "cause", "file", "line"}`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import errno
import io
import json
import logging
import os
import sys
from dataclasses import asdict
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import formats
from .core import ValidationError
from .evaluation import EmptyDatasetError, dataset_map, run_mapi
from .features import BoxEncoding, FeatureSpec, SpecMismatchError, encode
from .formats import ClassMap, ParseError, fmt
from .labeling import label_images, label_stats
from .manifest import INTERP_FLAGS, Manifest, load_manifest
from .router import CoverageError, route, route_oracle, sweep_weights
from .simulator import paired_benchmark
from .svm import SingleClassError, evaluate_classifier, train, weight_group_report

logger = logging.getLogger("adaptive_feeding")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_CONVERGENCE = 0, 2, 3, 4

CSV_COLUMNS = ["method", "weight", "acc", "recall", "mAP", "mean_mAPI", "FPS", "SUR", "DmAP"]


class ConvergenceError(RuntimeError):
    pass


class PipelineError(Exception):
    def __init__(self, stage: str, cause: str, exit_code: int, file: str | None = None, line: int | None = None):
        super().__init__(cause)
        self.stage, self.cause, self.exit_code = stage, cause, exit_code
        self.file, self.line = file, line

    def envelope(self) -> str:
        return json.dumps({"stage": self.stage, "cause": self.cause, "file": self.file, "line": self.line})


def round_half_up(x: float, ndigits: int = 0) -> float:
    """Round the way printed tables do (2.5 -> 3), from the shortest repr of ``x``."""
    q = Decimal(1).scaleb(-ndigits)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


def _num(x: float | None) -> float | None:
    return None if x is None else fmt(x)


def _stats_dict(stats) -> dict:
    bw = stats.balanced_weight
    return {
        "n_easy": stats.n_easy,
        "n_hard": stats.n_hard,
        "easy_ratio": fmt(stats.easy_ratio),
        "hard_ratio": fmt(stats.hard_ratio),
        "balanced_weight": None if bw == float("inf") else fmt(bw),
    }


def _metrics_dict(m) -> dict:
    return {
        "accuracy": fmt(m.accuracy),
        "recall_hard": fmt(m.recall_hard),
        "recall_defined": m.recall_defined,
        "confusion": {"tp": m.tp, "fp": m.fp, "tn": m.tn, "fn": m.fn},
    }


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(errno.ENOENT, "missing input", str(path))
    return path


class Context:
    """Lazily loaded inputs for one command invocation."""

    def __init__(self, manifest: Manifest):
        self.m = manifest
        self.classes = ClassMap(manifest.classes)
        self._cache: dict[str, Any] = {}

    def _get(self, key, load):
        if key not in self._cache:
            self._cache[key] = load()
        return self._cache[key]

    @property
    def images(self):
        return self._get("gt", lambda: formats.read_ground_truth(_require(self.m.ground_truth), self.classes))

    def run(self, role: str):
        path = self.m.basic if role == "basic" else self.m.partner

        def load():
            run = formats.read_detections(_require(path), self.classes, role)
            run.check_images(self.images)
            return run

        return self._get(role, load)

    @property
    def proposals(self):
        return self._get("proposals", lambda: formats.read_proposals(_require(self.m.proposals), self.classes))

    @property
    def labels(self):
        return self._get("labels", lambda: formats.read_labels(_require(self.m.output("labels.jsonl"))))

    @property
    def features(self):
        return self._get(
            "features", lambda: formats.read_features(_require(self.m.output("features.jsonl")), self.m.spec)
        )

    def model(self):
        def load():
            model, descriptor, metrics = formats.load_model(_require(self.m.model))
            if FeatureSpec.parse(descriptor).hash != self.m.spec.hash:
                raise SpecMismatchError(
                    f"model spec {descriptor} does not match manifest spec {self.m.spec.describe()}"
                )
            return model, metrics

        return self._get("model", load)

    def labels_for(self, images):
        by_id = {lab.image_id: lab for lab in self.labels}
        missing = [im.image_id for im in images if im.image_id not in by_id]
        if missing:
            raise CoverageError(f"labels.jsonl has no entry for image {missing[0]!r}")
        return [by_id[im.image_id] for im in images]

    def feature_matrix(self, images) -> np.ndarray:
        feats = self.features
        missing = [im.image_id for im in images if im.image_id not in feats]
        if missing:
            raise CoverageError(f"features.jsonl has no entry for image {missing[0]!r}")
        if not images:
            return np.zeros((0, self.m.spec.dimension()))
        return np.vstack([feats[im.image_id].values for im in images])

    def timing(self):
        return self.m.resolve_timing(self.run("basic"), self.run("partner"))


def cmd_simulate(ctx: Context, args) -> None:
    sim = ctx.m.simulation
    if sim is None:
        raise ValidationError("manifest has no 'simulation' section")
    bundle = paired_benchmark(sim.scene, sim.basic, sim.partner, sim.generator, sim.detector_seed, sim.generator_seed)
    ids = [im.image_id for im in bundle.images]
    formats.write_jsonl(ctx.m.ground_truth, formats.ground_truth_rows(bundle.images, ctx.classes))
    formats.write_jsonl(ctx.m.basic, formats.detection_rows(bundle.basic, ids, ctx.classes))
    formats.write_jsonl(ctx.m.partner, formats.detection_rows(bundle.partner, ids, ctx.classes))
    if ctx.m.proposals not in (ctx.m.basic, ctx.m.partner):
        formats.write_jsonl(ctx.m.proposals, formats.detection_rows(bundle.generator, ids, ctx.classes))
    formats.write_json(ctx.m.output("bundle.json"), bundle.header)
    logger.info("simulated %d images", len(ids))


def cmd_label(ctx: Context, args) -> None:
    images = ctx.images
    labels = label_images(ctx.run("basic"), ctx.run("partner"), images, ctx.m.ap)
    formats.write_jsonl(ctx.m.output("labels.jsonl"), formats.label_rows(labels))
    n_train = len(ctx.m.split(images)[0])
    stats = {"all": _stats_dict(label_stats(labels))}
    if 0 < n_train < len(labels):
        stats["train"] = _stats_dict(label_stats(labels[:n_train]))
        stats["eval"] = _stats_dict(label_stats(labels[n_train:]))
    formats.write_json(ctx.m.output("label_stats.json"), stats)


def cmd_featurize(ctx: Context, args) -> None:
    props = ctx.proposals
    vectors = []
    for im in ctx.images:
        if im.image_id not in props:
            raise CoverageError(f"proposals have no entry for image {im.image_id!r}")
        vectors.append(encode(props[im.image_id], im, ctx.m.spec))
    ids = [im.image_id for im in ctx.images]
    formats.write_jsonl(ctx.m.output("features.jsonl"), formats.feature_rows(ids, vectors))


def cmd_train(ctx: Context, args) -> None:
    train_images, _ = ctx.m.split(ctx.images)
    X = ctx.feature_matrix(train_images)
    y = [int(lab.label) for lab in ctx.labels_for(train_images)]
    model = train(X, y, ctx.m.train, ctx.m.spec.hash)
    if not model.train_meta["converged"]:
        raise ConvergenceError(
            f"solver stopped after {model.train_meta['epochs']} epochs with duality gap "
            f"{model.train_meta['duality_gap']:.3g}"
        )
    metrics = {"train": _metrics_dict(evaluate_classifier(model, X, y))}
    formats.save_model(ctx.m.model, model, ctx.m.spec, metrics)


def cmd_evaluate(ctx: Context, args) -> None:
    model, _ = ctx.model()
    _, eval_images = ctx.m.split(ctx.images)
    X = ctx.feature_matrix(eval_images)
    y = [int(lab.label) for lab in ctx.labels_for(eval_images)]
    out: dict[str, Any] = {"split": "eval", "n_images": len(eval_images)}
    out["classifier"] = _metrics_dict(evaluate_classifier(model, X, y))
    if ctx.m.spec.box_encoding is BoxEncoding.SIZE_4S:
        out["weight_groups"] = {k: fmt(v) for k, v in weight_group_report(model, ctx.m.spec).items()}
    out["detectors"] = {}
    for role in ("basic", "partner"):
        run = ctx.run(role)
        mapi = [r.p_value for r in run_mapi(run, eval_images, ctx.m.ap)]
        out["detectors"][role] = {
            "mAP": fmt(dataset_map(run, eval_images, ctx.m.ap)[0]),
            "mean_mAPI": fmt(float(np.mean(mapi))),
        }
    formats.write_json(ctx.m.output("classifier.json"), out)


def _routing_summary(res) -> dict:
    return {
        "fraction_easy_predicted": fmt(res.fraction_easy_predicted),
        "mAP": fmt(res.map),
        "mean_mAPI": fmt(res.mean_mapi),
        "latency_ms": _num(res.latency_ms),
        "FPS": _num(res.fps),
        "SUR": _num(res.sur),
        "DmAP": fmt(res.dmap),
    }


def cmd_route(ctx: Context, args) -> None:
    model, _ = ctx.model()
    _, eval_images = ctx.m.split(ctx.images)
    if not eval_images:
        raise ValidationError("evaluation split is empty")
    basic, partner = ctx.run("basic"), ctx.run("partner")
    timing = ctx.timing()
    ap = ctx.m.ap
    eval_labels = ctx.labels_for(eval_images)
    af = route(model, ctx.proposals, basic, partner, eval_images, ctx.m.spec, ap, timing)
    oracle = route_oracle(eval_labels, basic, partner, eval_images, ap, timing)
    X = ctx.feature_matrix(eval_images)
    clf = evaluate_classifier(model, X, [int(lab.label) for lab in eval_labels])

    detectors = {}
    for role, run, t_ms in (("basic", basic, timing.t_basic_ms), ("partner", partner, timing.t_partner_ms)):
        mapi = [r.p_value for r in run_mapi(run, eval_images, ap)]
        detectors[role] = {
            "mAP": fmt(dataset_map(run, eval_images, ap)[0]),
            "mean_mAPI": fmt(float(np.mean(mapi))),
            "FPS": fmt(1000.0 / t_ms),
        }
    out = {
        "n_images": len(eval_images),
        "timing": {k: fmt(v) for k, v in asdict(timing).items()},
        "weight_hard": _num(model.train_meta.get("config", {}).get("weight_hard")),
        "classifier": _metrics_dict(clf),
        "detectors": detectors,
        "af": _routing_summary(af),
        "oracle": _routing_summary(oracle),
    }
    formats.write_json(ctx.m.output("routing.json"), out)
    af_mapi = {r.image_id: r.p_value for r in run_mapi(af.detections, eval_images, ap)}
    formats.write_jsonl(
        ctx.m.output("routes.jsonl"),
        (
            {"image_id": im.image_id, "route": af.routes[im.image_id].value, "p_value": fmt(af_mapi[im.image_id])}
            for im in eval_images
        ),
    )


def _csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row[k]) for k in CSV_COLUMNS})
    return buf.getvalue()


def cmd_sweep(ctx: Context, args) -> None:
    weights = ctx.m.sweep_weights
    if not weights:
        raise ValidationError("no sweep weights: pass --weights or set sweep_weights")
    train_images, eval_images = ctx.m.split(ctx.images)
    rows = sweep_weights(
        weights,
        ctx.feature_matrix(train_images),
        [int(lab.label) for lab in ctx.labels_for(train_images)],
        eval_images,
        ctx.labels_for(eval_images),
        ctx.proposals,
        ctx.run("basic"),
        ctx.run("partner"),
        ctx.m.spec,
        ctx.m.train,
        ctx.m.ap,
        ctx.timing(),
        threads=_threads(),
    )
    table = [
        {
            "method": "af",
            "weight": fmt(r.weight),
            "acc": fmt(r.accuracy),
            "recall": fmt(r.recall),
            "mAP": fmt(r.map),
            "mean_mAPI": fmt(r.mean_mapi),
            "FPS": _num(r.fps),
            "SUR": _num(r.sur),
            "DmAP": fmt(r.dmap),
            "fraction_easy": fmt(r.fraction_easy),
        }
        for r in rows
    ]
    formats.write_atomic(ctx.m.output("sweep.csv"), _csv(table))
    formats.write_json(ctx.m.output("sweep.json"), table)


def _table_line(row: dict) -> str:
    def pct(v, nd=1):
        return "-" if v is None else f"{round_half_up(100 * v, nd):.{nd}f}"

    w = "-" if row.get("weight") is None else f"{row['weight']:.2f}"
    fps = "-" if row.get("FPS") is None else f"{round_half_up(row['FPS'], 1):.1f}"
    sur = "-" if row.get("SUR") is None else f"{pct(row['SUR'], 0)}%"
    return (
        f"{row['method']:<8} W={w:>5}  mAP={pct(row['mAP'])}  mAPI={pct(row['mean_mAPI'])}  "
        f"FPS={fps:>5}  SUR={sur:>5}  DmAP={pct(row.get('DmAP'))}"
    )


def cmd_report(ctx: Context, args) -> None:
    routing_path = _require(ctx.m.output("routing.json"))
    routing = json.loads(routing_path.read_text(encoding="utf-8"))
    stats = json.loads(_require(ctx.m.output("label_stats.json")).read_text(encoding="utf-8"))
    model, train_metrics = ctx.model()
    rows = []
    for role in ("basic", "partner"):
        d = routing["detectors"][role]
        rows.append({"method": role, "mAP": d["mAP"], "mean_mAPI": d["mean_mAPI"], "FPS": d["FPS"]})
    for method in ("oracle", "af"):
        r = routing[method]
        row = {"method": method, "mAP": r["mAP"], "mean_mAPI": r["mean_mAPI"], "FPS": r["FPS"],
               "SUR": r["SUR"], "DmAP": r["DmAP"]}  # fmt: skip
        if method == "af":
            row.update(weight=routing["weight_hard"], acc=routing["classifier"]["accuracy"],
                       recall=routing["classifier"]["recall_hard"])  # fmt: skip
        rows.append(row)
    report = {
        "feature_spec": ctx.m.spec.describe(),
        "spec_hash": ctx.m.spec.hash,
        "label_stats": stats,
        "train_metrics": train_metrics,
        "eval_classifier": routing["classifier"],
        "fraction_easy_predicted": routing["af"]["fraction_easy_predicted"],
        "timing": routing["timing"],
        "rows": rows,
    }
    if ctx.m.spec.box_encoding is BoxEncoding.SIZE_4S:
        report["weight_groups"] = {k: fmt(v) for k, v in weight_group_report(model, ctx.m.spec).items()}
    formats.write_json(ctx.m.output("report.json"), report)
    formats.write_atomic(ctx.m.output("report.csv"), _csv(rows))
    for row in rows:
        print(_table_line(row))


COMMANDS = {
    "simulate": cmd_simulate,
    "label": cmd_label,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "route": cmd_route,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def _threads() -> int:
    raw = os.environ.get("AF_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValidationError(f"AF_THREADS must be an integer, got {raw!r}") from None


def _weights(text: str) -> list[float]:
    try:
        return [float(w) for w in text.split(",") if w.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad weight list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="af-cascade", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--manifest", required=True, type=Path)
        p.add_argument("--weights", type=_weights, help="comma-separated hard-class weights")
        p.add_argument("--k", type=int, help="number of proposals per image")
        p.add_argument("--spec", help="feature spec, e.g. '20+(conf+4s)x25'")
        p.add_argument("--seed", type=int)
        p.add_argument("--iou", type=float)
        p.add_argument("--interp", choices=sorted(INTERP_FLAGS))
    return parser


def _classify(stage: str, exc: BaseException) -> PipelineError:
    if isinstance(exc, ParseError):
        return PipelineError(stage, exc.reason, EXIT_VALIDATION, exc.path, exc.line)
    if isinstance(exc, ConvergenceError):
        return PipelineError(stage, str(exc), EXIT_CONVERGENCE)
    if isinstance(exc, FileNotFoundError):
        return PipelineError(stage, str(exc), EXIT_IO, exc.filename or None)
    if isinstance(exc, OSError):
        return PipelineError(stage, str(exc), EXIT_IO, getattr(exc, "filename", None))
    if isinstance(exc, (ValidationError, SpecMismatchError, SingleClassError, EmptyDatasetError, CoverageError,
                        ValueError, KeyError)):  # fmt: skip
        return PipelineError(stage, str(exc), EXIT_VALIDATION)
    raise exc


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    stage = args.command
    try:
        manifest = load_manifest(
            args.manifest,
            weights=args.weights,
            k=args.k,
            spec=args.spec,
            seed=args.seed,
            iou=args.iou,
            interp=args.interp,
        )
        COMMANDS[stage](Context(manifest), args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        err = _classify(stage, exc)
        print(err.envelope(), file=sys.stderr)
        return err.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
