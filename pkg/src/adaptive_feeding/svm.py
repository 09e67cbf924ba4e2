"""Cost-weighted linear SVM trained by dual coordinate descent.

The problem solved is

    min_w  1/2 |w|^2 + C * sum_i c_{y_i} * max(0, 1 - y_i w.x_i)

where every x_i carries an appended constant 1.0, so the bias is the last
weight and is regularized like the rest. Its dual is a box-constrained QP,

    min_a  1/2 a'Qa - sum(a)    s.t. 0 <= a_i <= C * c_{y_i},   Q_ij = y_i y_j x_i.x_j

which is minimized one coordinate at a time in closed form.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from .features import BoxEncoding, FeatureSpec, FeatureVector, SpecMismatchError
from .labeling import Label, balanced_weight

logger = logging.getLogger(__name__)

FORMULATION = "l1-hinge, bias as augmented constant feature 1.0 (regularized)"


class SingleClassError(ValueError):
    """Training labels contain only one class."""


@dataclass(frozen=True)
class TrainConfig:
    """Solver settings.

    ``weight_hard=None`` means the balanced weight n_easy / n_hard of the
    training labels.
    """

    c: float = 1.0
    weight_hard: float | None = None
    weight_easy: float = 1.0
    tolerance: float = 1e-4
    max_epochs: int = 1000
    seed: int = 0
    rescale: bool = False

    def __post_init__(self) -> None:
        if not self.c > 0:
            raise ValueError(f"c must be > 0, got {self.c}")
        if self.weight_hard is not None and not self.weight_hard > 0:
            raise ValueError(f"weight_hard must be > 0, got {self.weight_hard}")
        if not self.weight_easy > 0:
            raise ValueError(f"weight_easy must be > 0, got {self.weight_easy}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be > 0, got {self.tolerance}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    bias: float
    spec_hash: str | None = None
    train_meta: dict[str, Any] = field(default_factory=dict)
    feature_min: np.ndarray | None = None
    feature_scale: np.ndarray | None = None

    def __post_init__(self) -> None:
        for name in ("weights", "feature_min", "feature_scale"):
            val = getattr(self, name)
            if val is not None:
                arr = np.array(val, dtype=np.float64)
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def dimension(self) -> int:
        return int(self.weights.shape[0])

    def transform(self, X: np.ndarray) -> np.ndarray:
        if self.feature_min is None:
            return X
        return (X - self.feature_min) / self.feature_scale

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dimension:
            raise SpecMismatchError(
                f"feature dimension {X.shape[1]} != model dimension {self.dimension}"
            )
        return self.transform(X) @ self.weights + self.bias

    def check_spec(self, spec_hash: str | None) -> None:
        if self.spec_hash is not None and spec_hash is not None and spec_hash != self.spec_hash:
            raise SpecMismatchError(
                f"model trained on spec {self.spec_hash}, features are {spec_hash}"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "weights": [float(v) for v in self.weights],
            "bias": self.bias,
            "spec_hash": self.spec_hash,
            "train_meta": self.train_meta,
            "feature_min": None if self.feature_min is None else [float(v) for v in self.feature_min],
            "feature_scale": None
            if self.feature_scale is None
            else [float(v) for v in self.feature_scale],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> LinearModel:
        return cls(
            weights=np.asarray(data["weights"], dtype=np.float64),
            bias=data["bias"],
            spec_hash=data.get("spec_hash"),
            train_meta=data.get("train_meta", {}),
            feature_min=data.get("feature_min"),
            feature_scale=data.get("feature_scale"),
        )


@dataclass(frozen=True)
class ClassifierMetrics:
    accuracy: float
    recall_hard: float
    tp: int
    fp: int
    tn: int
    fn: int
    recall_defined: bool = True

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _stack(features, spec_hash: str | None) -> tuple[np.ndarray, str | None]:
    if isinstance(features, np.ndarray):
        return np.atleast_2d(features.astype(np.float64)), spec_hash
    features = list(features)
    if features and isinstance(features[0], FeatureVector):
        hashes = {f.spec_hash for f in features}
        if len(hashes) > 1:
            raise SpecMismatchError(f"features mix specs {sorted(hashes)}")
        (h,) = hashes
        if spec_hash is not None and h != spec_hash:
            raise SpecMismatchError(f"features are spec {h}, expected {spec_hash}")
        return np.vstack([f.values for f in features]), h
    return np.atleast_2d(np.asarray(features, dtype=np.float64)), spec_hash


def primal_objective(
    weights: np.ndarray, bias: float, X: np.ndarray, y: np.ndarray, upper: np.ndarray
) -> float:
    """1/2 |(w, b)|^2 + sum_i upper_i * hinge_i, with upper_i = C * c_{y_i}."""
    margins = y * (X @ weights + bias)
    slack = np.maximum(0.0, 1.0 - margins)
    return float(0.5 * (weights @ weights + bias * bias) + upper @ slack)


def example_costs(y: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    """Per-example box bound C * c_{y_i} (weight_hard must be resolved)."""
    return cfg.c * np.where(y > 0, cfg.weight_hard, cfg.weight_easy)


def train(
    features: Sequence[FeatureVector] | np.ndarray,
    labels: Sequence[int],
    cfg: TrainConfig = TrainConfig(),
    spec_hash: str | None = None,
) -> LinearModel:
    X, spec_hash = _stack(features, spec_hash)
    y = np.asarray([int(v) for v in labels], dtype=np.float64)
    n, d = X.shape
    if n == 0:
        raise ValueError("no training examples")
    if y.shape[0] != n:
        raise SpecMismatchError(f"{n} feature rows but {y.shape[0]} labels")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 (easy) or +1 (hard)")
    n_hard = int(np.sum(y > 0))
    n_easy = n - n_hard
    if n_hard == 0 or n_easy == 0:
        raise SingleClassError(f"need both classes, got {n_easy} easy / {n_hard} hard")
    if cfg.weight_hard is None:
        cfg = TrainConfig(**{**asdict(cfg), "weight_hard": balanced_weight(n_easy, n_hard)})

    fmin = fscale = None
    if cfg.rescale:
        fmin = X.min(axis=0)
        span = X.max(axis=0) - fmin
        fscale = np.where(span > 0, span, 1.0)
        X = (X - fmin) / fscale

    Xa = np.hstack([X, np.ones((n, 1))])
    upper = example_costs(y, cfg)
    qdiag = np.einsum("ij,ij->i", Xa, Xa)
    alpha = np.zeros(n)
    w = np.zeros(d + 1)
    rng = np.random.default_rng(cfg.seed)
    history: list[float] = []
    gap = np.inf
    converged = False
    epoch = 0
    rows = [Xa[i] for i in range(n)]
    for epoch in range(1, cfg.max_epochs + 1):
        for i in rng.permutation(n):
            xi = rows[i]
            g = y[i] * float(w @ xi) - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= upper[i]:
                pg = max(g, 0.0)
            else:
                pg = g
            if pg == 0.0:
                continue
            new = min(max(a - g / qdiag[i], 0.0), upper[i])
            if new != a:
                w += (new - a) * y[i] * xi
                alpha[i] = new
        ww = float(w @ w)
        dual = 0.5 * ww - float(alpha.sum())
        primal = primal_objective(w[:-1], w[-1], X, y, upper)
        history.append(dual)
        gap = primal + dual
        if gap / n <= cfg.tolerance:
            converged = True
            break
    if not converged:
        logger.warning(
            "dual coordinate descent stopped after %d epochs, gap/n = %.3g", epoch, gap / n
        )
    meta = {
        "formulation": FORMULATION,
        "config": asdict(cfg),
        "n_easy": n_easy,
        "n_hard": n_hard,
        "epochs": epoch,
        "converged": converged,
        "primal_objective": primal,
        "duality_gap": gap,
        "dual_history": history,
    }
    return LinearModel(w[:-1].copy(), float(w[-1]), spec_hash, meta, fmin, fscale)


def predict(model: LinearModel, x: FeatureVector | np.ndarray) -> tuple[Label, float]:
    """Classify one image; a margin of exactly zero counts as easy."""
    if isinstance(x, FeatureVector):
        model.check_spec(x.spec_hash)
        x = x.values
    margin = float(model.decision_function(x)[0])
    return (Label.HARD if margin > 0 else Label.EASY), margin


def predict_many(model: LinearModel, X: np.ndarray) -> np.ndarray:
    margins = model.decision_function(X)
    return np.where(margins > 0, int(Label.HARD), int(Label.EASY))


def evaluate_classifier(
    model: LinearModel, features: Sequence[FeatureVector] | np.ndarray, labels: Sequence[int]
) -> ClassifierMetrics:
    X, h = _stack(features, None)
    model.check_spec(h)
    y = np.asarray([int(v) for v in labels])
    if y.size == 0:
        raise ValueError("no examples to evaluate")
    pred = predict_many(model, X)
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == -1)))
    tn = int(np.sum((pred == -1) & (y == -1)))
    fn = int(np.sum((pred == -1) & (y == 1)))
    n_hard = tp + fn
    return ClassifierMetrics(
        accuracy=(tp + tn) / y.size,
        recall_hard=tp / n_hard if n_hard else 1.0,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        recall_defined=n_hard > 0,
    )


def weight_group_report(model: LinearModel, spec: FeatureSpec) -> dict[str, float]:
    """Signed weight sums per feature group, normalized so the groups sum to 1.

    Groups are class, conf, xmin, ymin, width and height; a group that
    ``spec`` does not encode reports 0. The bias is excluded.
    """
    if spec.box_encoding is not BoxEncoding.SIZE_4S:
        raise ValueError(f"weight groups need a 4s box encoding, spec is {spec.describe()}")
    model.check_spec(spec.hash)
    if model.dimension != spec.dimension():
        raise SpecMismatchError(f"model dimension {model.dimension} != {spec.dimension()}")
    total = float(model.weights.sum())
    if total == 0.0:
        raise ValueError("weights sum to zero; cannot normalize")
    idx = spec.group_indices()
    report = {}
    for name in ("class", "conf", "xmin", "ymin", "width", "height"):
        sel = idx.get(name)
        report[name] = float(model.weights[sel].sum()) / total if sel is not None and sel.size else 0.0
    return report
