"""Fixed-length encodings of an image's top-K instance proposals.

A spec is written in the same compact notation used for the ablation
variants, for example::

    20+(conf+4s)x25          class histogram, then 25 blocks of [conf, x, y, w, h]
    (20-prob+conf+4s)x25     25 blocks of [20 class probabilities, conf, x, y, w, h]
    20+(conf)x25             histogram plus confidences only
    (conf+4s)x25             class-agnostic
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .core import BBox, Detection, ImageRecord, clamp_bbox


class ClassEncoding(str, Enum):
    HISTOGRAM = "histogram"
    PER_PROPOSAL_PROB = "per_proposal_prob"
    NONE = "none"


class BoxEncoding(str, Enum):
    CORNERS_4C = "corners_4c"
    SIZE_4S = "size_4s"
    NONE = "none"


class SpecMismatchError(ValueError):
    """Features or a model were produced under a different FeatureSpec."""


_BOX_TOKENS = {"4c": BoxEncoding.CORNERS_4C, "4s": BoxEncoding.SIZE_4S}
_BOX_GROUPS = {
    BoxEncoding.CORNERS_4C: ("xmin", "ymin", "xmax", "ymax"),
    BoxEncoding.SIZE_4S: ("xmin", "ymin", "width", "height"),
    BoxEncoding.NONE: (),
}
_SPEC_RE = re.compile(r"^(?:(\d+)\+)?\(([^()]*)\)\s*[x×*]\s*(\d+)$")


@dataclass(frozen=True)
class FeatureSpec:
    n_classes: int = 20
    k: int = 25
    class_encoding: ClassEncoding = ClassEncoding.HISTOGRAM
    include_conf: bool = True
    box_encoding: BoxEncoding = BoxEncoding.SIZE_4S

    def __post_init__(self) -> None:
        object.__setattr__(self, "class_encoding", ClassEncoding(self.class_encoding))
        object.__setattr__(self, "box_encoding", BoxEncoding(self.box_encoding))
        if self.class_encoding is ClassEncoding.NONE:
            object.__setattr__(self, "n_classes", 0)
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.class_encoding is not ClassEncoding.NONE and self.n_classes < 1:
            raise ValueError("class encodings need n_classes >= 1")
        if self.dimension() < 1:
            raise ValueError(f"spec {self.describe()} encodes nothing")

    @property
    def histogram_dim(self) -> int:
        return self.n_classes if self.class_encoding is ClassEncoding.HISTOGRAM else 0

    @property
    def prob_dim(self) -> int:
        return self.n_classes if self.class_encoding is ClassEncoding.PER_PROPOSAL_PROB else 0

    @property
    def conf_dim(self) -> int:
        return int(self.include_conf)

    @property
    def box_dim(self) -> int:
        return 0 if self.box_encoding is BoxEncoding.NONE else 4

    @property
    def block_dim(self) -> int:
        return self.prob_dim + self.conf_dim + self.box_dim

    def dimension(self) -> int:
        return self.histogram_dim + self.k * self.block_dim

    def describe(self) -> str:
        parts = []
        if self.prob_dim:
            parts.append(f"{self.n_classes}-prob")
        if self.include_conf:
            parts.append("conf")
        if self.box_dim:
            parts.append("4c" if self.box_encoding is BoxEncoding.CORNERS_4C else "4s")
        head = f"{self.n_classes}+" if self.histogram_dim else ""
        return f"{head}({'+'.join(parts)})x{self.k}"

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.describe().encode()).hexdigest()[:16]

    @classmethod
    def parse(cls, text: str) -> FeatureSpec:
        m = _SPEC_RE.match(text.strip().replace(" ", ""))
        if not m:
            raise ValueError(f"cannot parse feature spec {text!r}")
        hist, inner, k = m.groups()
        n_classes, class_enc = 0, ClassEncoding.NONE
        if hist:
            n_classes, class_enc = int(hist), ClassEncoding.HISTOGRAM
        include_conf, box = False, BoxEncoding.NONE
        for tok in filter(None, inner.split("+")):
            if tok == "conf":
                include_conf = True
            elif tok in _BOX_TOKENS:
                box = _BOX_TOKENS[tok]
            elif tok.endswith("-prob") and tok[:-5].isdigit() and not hist:
                n_classes, class_enc = int(tok[:-5]), ClassEncoding.PER_PROPOSAL_PROB
            else:
                raise ValueError(f"unknown token {tok!r} in feature spec {text!r}")
        return cls(n_classes, int(k), class_enc, include_conf, box)

    def group_indices(self) -> dict[str, np.ndarray]:
        """Vector positions of each named feature group, gathered over all K blocks."""
        groups: dict[str, list[int]] = {"class": list(range(self.histogram_dim))}
        names = ["class"] * self.prob_dim
        if self.include_conf:
            names.append("conf")
        names.extend(_BOX_GROUPS[self.box_encoding])
        for name in names:
            groups.setdefault(name, [])
        for b in range(self.k):
            start = self.histogram_dim + b * self.block_dim
            for offset, name in enumerate(names):
                groups[name].append(start + offset)
        return {name: np.asarray(idx, dtype=np.int64) for name, idx in groups.items()}


@dataclass(frozen=True)
class Proposal:
    """One instance proposal: predicted class, confidence and box.

    ``probs`` optionally carries the generator's class-probability vector.
    """

    class_id: int
    score: float
    bbox: BBox
    probs: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"proposal score {self.score} outside [0, 1]")

    @classmethod
    def from_detection(cls, det: Detection) -> Proposal:
        return cls(det.class_id, det.score, det.bbox)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    spec_hash: str

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)


def class_agnostic_spec(k: int = 25) -> FeatureSpec:
    return FeatureSpec(0, k, ClassEncoding.NONE, True, BoxEncoding.SIZE_4S)


def select_top_k(proposals: Sequence[Proposal], k: int) -> list[Proposal]:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ranked = sorted(
        proposals, key=lambda p: (-p.score, p.bbox.xmin, p.bbox.ymin, p.class_id)
    )
    return ranked[:k]


def _box_values(box: BBox, spec: FeatureSpec, width: int, height: int) -> list[float]:
    b = clamp_bbox(box, width, height)
    if spec.box_encoding is BoxEncoding.CORNERS_4C:
        return [b.xmin / width, b.ymin / height, b.xmax / width, b.ymax / height]
    return [b.xmin / width, b.ymin / height, b.width / width, b.height / height]


def _probs(p: Proposal, n_classes: int) -> tuple[float, ...]:
    if p.probs is not None:
        if len(p.probs) != n_classes:
            raise SpecMismatchError(
                f"proposal carries {len(p.probs)} class probabilities, spec needs {n_classes}"
            )
        return p.probs
    if not 0 <= p.class_id < n_classes:
        raise SpecMismatchError(f"class id {p.class_id} outside {n_classes} classes")
    # hard class only: substitute one-hot
    return tuple(1.0 if c == p.class_id else 0.0 for c in range(n_classes))


def encode(
    proposals: Sequence[Proposal], image: ImageRecord, spec: FeatureSpec
) -> FeatureVector:
    top = select_top_k(proposals, spec.k)
    out = np.zeros(spec.dimension(), dtype=np.float64)
    if spec.histogram_dim:
        for p in top:
            if not 0 <= p.class_id < spec.n_classes:
                raise SpecMismatchError(
                    f"class id {p.class_id} outside {spec.n_classes} classes"
                )
            out[p.class_id] += 1.0
    pos = spec.histogram_dim
    for p in top:
        block: list[float] = []
        if spec.prob_dim:
            block.extend(_probs(p, spec.n_classes))
        if spec.include_conf:
            block.append(p.score)
        if spec.box_dim:
            block.extend(_box_values(p.bbox, spec, image.width, image.height))
        out[pos : pos + spec.block_dim] = block
        pos += spec.block_dim
    return FeatureVector(out, spec.hash)


def decode_blocks(vector: FeatureVector, spec: FeatureSpec) -> list[dict[str, np.ndarray | float]]:
    """Split a vector back into its per-proposal blocks (zero padding included)."""
    if vector.spec_hash != spec.hash:
        raise SpecMismatchError(f"vector hash {vector.spec_hash} != spec {spec.describe()}")
    blocks = []
    v = vector.values
    for b in range(spec.k):
        pos = spec.histogram_dim + b * spec.block_dim
        block: dict[str, np.ndarray | float] = {}
        if spec.prob_dim:
            block["probs"] = v[pos : pos + spec.prob_dim]
            pos += spec.prob_dim
        if spec.include_conf:
            block["conf"] = float(v[pos])
            pos += 1
        if spec.box_dim:
            block["box"] = v[pos : pos + 4]
        blocks.append(block)
    return blocks


def encode_many(
    proposals: Mapping[str, Sequence[Proposal]],
    images: Sequence[ImageRecord],
    spec: FeatureSpec,
) -> np.ndarray:
    """Stack encodings for ``images`` in order into an (n_images, dim) matrix."""
    rows = np.zeros((len(images), spec.dimension()), dtype=np.float64)
    for i, image in enumerate(images):
        if image.image_id not in proposals:
            raise KeyError(f"no proposals for image {image.image_id!r}")
        rows[i] = encode(proposals[image.image_id], image, spec).values
    return rows
