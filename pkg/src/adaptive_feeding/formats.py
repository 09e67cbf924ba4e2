"""Line-delimited JSON records and the persisted model file.

Files carry class names; in memory classes are integer ids resolved through
the manifest's class list. Floats are written with 9 significant digits,
except model weights which are written exactly.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

from .core import BBox, Detection, DetectorRun, GtObject, ImageRecord, ValidationError
from .features import FeatureSpec, FeatureVector, Proposal
from .labeling import EasyHardLabel, Label
from .svm import LinearModel

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


class ParseError(ValidationError):
    def __init__(self, path: str | Path, line: int | None, reason: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {reason}")
        self.path = str(path)
        self.line = line
        self.reason = reason


def fmt(x: float) -> float:
    return float(f"{x:.9g}")


def dumps(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def write_atomic(path: str | Path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    write_atomic(path, "".join(dumps(r) + "\n" for r in rows))


def write_json(path: str | Path, obj: Any) -> None:
    write_atomic(path, json.dumps(obj, indent=2, ensure_ascii=False) + "\n")


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    path = Path(path)
    n = 0
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                row = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(row, dict):
                raise ParseError(path, lineno, "expected a JSON object")
            n += 1
            yield lineno, row
    if n == 0:
        logger.warning("%s is empty", path)


class ClassMap:
    def __init__(self, names: Sequence[str]):
        self.names = list(names)
        self._ids = {name: i for i, name in enumerate(self.names)}
        if len(self._ids) != len(self.names):
            raise ValidationError("duplicate class names")

    def __len__(self) -> int:
        return len(self.names)

    def id(self, name: str) -> int:
        return self._ids[name]

    def name(self, class_id: int) -> str:
        return self.names[class_id]


def _bbox(raw: Any) -> BBox:
    if not (isinstance(raw, list) and len(raw) == 4):
        raise ValueError("bbox must be [xmin, ymin, xmax, ymax]")
    return BBox(*(float(v) for v in raw))


def _field(row: dict, key: str) -> Any:
    if key not in row:
        raise ValueError(f"missing field {key!r}")
    return row[key]


def _class_id(classes: ClassMap, name: Any) -> int:
    try:
        return classes.id(name)
    except KeyError:
        raise ValueError(f"unknown class {name!r}") from None


def read_ground_truth(path: str | Path, classes: ClassMap) -> list[ImageRecord]:
    images, seen = [], set()
    for lineno, row in iter_jsonl(path):
        try:
            image_id = str(_field(row, "image_id"))
            if image_id in seen:
                raise ValueError(f"duplicate image_id {image_id!r}")
            objects = tuple(
                GtObject(
                    _class_id(classes, _field(o, "class")),
                    _bbox(_field(o, "bbox")),
                    bool(o.get("difficult", False)),
                )
                for o in _field(row, "objects")
            )
            images.append(
                ImageRecord(image_id, int(_field(row, "width")), int(_field(row, "height")), objects)
            )
            seen.add(image_id)
        except (ValueError, TypeError) as exc:
            raise ParseError(path, lineno, str(exc)) from None
    return images


def _read_items(path, classes: ClassMap, make):
    out: dict[str, tuple] = {}
    latency: dict[str, float] = {}
    for lineno, row in iter_jsonl(path):
        try:
            image_id = str(_field(row, "image_id"))
            if image_id in out:
                raise ValueError(f"duplicate image_id {image_id!r}")
            out[image_id] = tuple(make(item) for item in _field(row, "items"))
            if row.get("latency_ms") is not None:
                ms = float(row["latency_ms"])
                if not ms > 0:
                    raise ValueError(f"latency_ms must be > 0, got {ms}")
                latency[image_id] = ms
        except (ValueError, TypeError) as exc:
            raise ParseError(path, lineno, str(exc)) from None
    return out, latency


def read_detections(
    path: str | Path, classes: ClassMap, detector_id: str | None = None, fps: float | None = None
) -> DetectorRun:
    def make(item: dict) -> Detection:
        return Detection(
            _class_id(classes, _field(item, "class")),
            float(_field(item, "score")),
            _bbox(_field(item, "bbox")),
        )

    dets, latency = _read_items(path, classes, make)
    return DetectorRun(detector_id or Path(path).stem, dets, latency, fps)


def read_proposals(path: str | Path, classes: ClassMap) -> dict[str, tuple[Proposal, ...]]:
    def make(item: dict) -> Proposal:
        probs = item.get("probs")
        return Proposal(
            _class_id(classes, _field(item, "class")),
            float(_field(item, "score")),
            _bbox(_field(item, "bbox")),
            None if probs is None else tuple(float(p) for p in probs),
        )

    props, _ = _read_items(path, classes, make)
    return props


def ground_truth_rows(images: Sequence[ImageRecord], classes: ClassMap) -> Iterator[dict]:
    for im in images:
        objects = []
        for o in im.objects:
            obj = {"class": classes.name(o.class_id), "bbox": [fmt(v) for v in o.bbox.as_tuple()]}
            if o.difficult:
                obj["difficult"] = True
            objects.append(obj)
        yield {"image_id": im.image_id, "width": im.width, "height": im.height, "objects": objects}


def detection_rows(run: DetectorRun, image_ids: Sequence[str], classes: ClassMap) -> Iterator[dict]:
    for image_id in image_ids:
        items = [
            {
                "class": classes.name(d.class_id),
                "score": fmt(d.score),
                "bbox": [fmt(v) for v in d.bbox.as_tuple()],
            }
            for d in run.detections[image_id]
        ]
        row: dict[str, Any] = {"image_id": image_id, "items": items}
        if image_id in run.latency_ms:
            row["latency_ms"] = fmt(run.latency_ms[image_id])
        yield row


def label_rows(labels: Sequence[EasyHardLabel]) -> Iterator[dict]:
    for lab in labels:
        yield {"image_id": lab.image_id, "p1": fmt(lab.p1), "p2": fmt(lab.p2), "label": int(lab.label)}


def read_labels(path: str | Path) -> list[EasyHardLabel]:
    names = {"easy": Label.EASY, "hard": Label.HARD}
    labels = []
    for lineno, row in iter_jsonl(path):
        try:
            raw = _field(row, "label")
            label = names[raw] if isinstance(raw, str) else Label(int(raw))
            lab = EasyHardLabel(str(_field(row, "image_id")), float(row["p1"]), float(row["p2"]), label)
        except (ValueError, TypeError, KeyError) as exc:
            raise ParseError(path, lineno, f"bad label record ({exc})") from None
        # equal after rounding is accepted either way
        if (label == Label.HARD and lab.p2 < lab.p1) or (label == Label.EASY and lab.p2 > lab.p1):
            raise ParseError(path, lineno, "label disagrees with p1/p2")
        labels.append(lab)
    return labels


def feature_rows(image_ids: Sequence[str], vectors: Sequence[FeatureVector]) -> Iterator[dict]:
    for image_id, vec in zip(image_ids, vectors):
        yield {"image_id": image_id, "spec_hash": vec.spec_hash, "values": [fmt(v) for v in vec.values]}


def read_features(path: str | Path, spec: FeatureSpec) -> dict[str, FeatureVector]:
    out = {}
    for lineno, row in iter_jsonl(path):
        try:
            vec = FeatureVector(_field(row, "values"), str(_field(row, "spec_hash")))
        except (ValueError, TypeError) as exc:
            raise ParseError(path, lineno, str(exc)) from None
        if vec.spec_hash != spec.hash:
            raise ParseError(path, lineno, f"spec hash {vec.spec_hash} != {spec.hash} ({spec.describe()})")
        if vec.values.shape != (spec.dimension(),):
            raise ParseError(path, lineno, f"expected {spec.dimension()} values, got {vec.values.size}")
        out[str(row["image_id"])] = vec
    return out


def save_model(path: str | Path, model: LinearModel, spec: FeatureSpec, metrics: dict | None = None) -> None:
    body = model.to_dict()
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "spec": {"descriptor": spec.describe(), "hash": spec.hash, "dimension": spec.dimension()},
        **body,
        "metrics": metrics or {},
    }
    write_json(path, doc)


def load_model(path: str | Path) -> tuple[LinearModel, str, dict]:
    """Return (model, spec descriptor, stored metrics)."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, f"invalid JSON ({exc.msg})") from None
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ParseError(path, None, f"unsupported model format {doc.get('format_version')!r}")
    spec = FeatureSpec.parse(doc["spec"]["descriptor"])
    if spec.hash != doc["spec"]["hash"] or doc.get("spec_hash") != spec.hash:
        raise ParseError(path, None, "spec hash does not match descriptor")
    model = LinearModel.from_dict(doc)
    if model.dimension != spec.dimension():
        raise ParseError(path, None, f"{model.dimension} weights for a {spec.dimension()}-dim spec")
    return model, doc["spec"]["descriptor"], doc.get("metrics", {})
