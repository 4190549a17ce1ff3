"""Per-class binary maxent models under output independence.

Member ``c`` separates class ``c`` from its non-class.  With a conditional
member the probability of the class is ``sigmoid((lambda_pos - lambda_neg) . v(x))``;
joint members only provide the unnormalized score difference.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from sl1max.core import LAMBDA_MAX, Dataset, DistributionKind, SparseVector, WeightMatrix, dot
from sl1max.errors import Unsupported
from sl1max.multilabel import binary_targets
from sl1max.trainers import TrainConfig, fit_width, train

# log-odds of a member trained on a class with no positive example
CONSTANT_NEGATIVE_LOGIT = -LAMBDA_MAX


@dataclass(frozen=True, eq=False)
class BinaryPairModel:
    class_index: int
    lambda_pos: dict
    lambda_neg: dict
    kind: DistributionKind
    num_features: int
    constant_negative: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", DistributionKind(self.kind))

    @property
    def bias(self) -> float:
        return CONSTANT_NEGATIVE_LOGIT if self.constant_negative else 0.0

    def score(self, x: SparseVector) -> float:
        return dot(self.lambda_pos, x) - dot(self.lambda_neg, x) + self.bias

    def difference(self) -> np.ndarray:
        out = np.zeros(self.num_features)
        for j, v in self.lambda_pos.items():
            out[j] += v
        for j, v in self.lambda_neg.items():
            out[j] -= v
        return out

    def nnz(self) -> int:
        return sum(1 for v in self.lambda_pos.values() if v != 0.0) + sum(1 for v in self.lambda_neg.values() if v != 0.0)

    def same_as(self, other: "BinaryPairModel") -> bool:
        return (self.class_index == other.class_index and self.kind == other.kind
                and self.constant_negative == other.constant_negative
                and self.lambda_pos == other.lambda_pos and self.lambda_neg == other.lambda_neg)


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    members: tuple
    kind: DistributionKind
    num_features: int
    threshold: float = 0.5
    config: dict = field(default_factory=dict)
    class_names: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", DistributionKind(self.kind))
        if [m.class_index for m in self.members] != list(range(len(self.members))):
            raise ValueError("ensemble needs exactly one member per class, in class order")

    @property
    def num_classes(self) -> int:
        return len(self.members)

    def score_matrix(self, X) -> np.ndarray:
        """``(m, l)`` weight-difference scores (log-odds for conditional members)."""
        D = np.vstack([mb.difference() for mb in self.members])
        bias = np.array([mb.bias for mb in self.members])
        return np.asarray(fit_width(X, self.num_features) @ D.T) + bias

    def proba_matrix(self, X) -> np.ndarray:
        _require_conditional(self)
        return expit(self.score_matrix(X))


def _require_conditional(obj):
    if obj.kind is not DistributionKind.CONDITIONAL:
        raise Unsupported("joint members are not normalized per example; use their scores")


def member_from_model(c: int, model) -> BinaryPairModel:
    rows = model.weights.rows
    return BinaryPairModel(c, dict(rows[1]), dict(rows[0]), model.kind, model.num_features)


def train_member(data: Dataset, c: int, kind, config: TrainConfig | None = None) -> BinaryPairModel:
    kind = DistributionKind(kind)
    binary = binary_targets(data, c)
    if not any(c in s for s in data.label_sets):
        warnings.warn(f"class {c} has no positive example; using a constant negative member", stacklevel=2)
        return BinaryPairModel(c, {}, {}, kind, data.num_features, constant_negative=True)
    return member_from_model(c, train(binary, kind, config))


def train_ensemble(data: Dataset, kind, config: TrainConfig | None = None, order=None) -> EnsembleModel:
    """Train one independent binary model per class.

    ``kind`` is ``cond`` or ``joint`` (the ``ensemble-`` prefix is accepted).
    ``order`` permutes the training order only; results do not depend on it.
    """
    if isinstance(kind, str) and kind.startswith("ensemble-"):
        kind = kind[len("ensemble-"):]
    kind = DistributionKind(kind)
    if kind is DistributionKind.CLASS_CONDITIONAL:
        raise Unsupported("ensemble members are joint or conditional binary models")
    cfg = config or TrainConfig()
    if cfg.validation is not None:
        warnings.warn("validation early stopping is not applied to separately trained members", stacklevel=2)
        cfg = replace(cfg, validation=None)
    classes = list(range(data.num_classes)) if order is None else list(order)
    workers = max(1, int(cfg.parallel_classes))
    member_cfg = replace(cfg, parallel_classes=1)

    def one(c):
        return train_member(data, c, kind, member_cfg)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trained = list(pool.map(one, classes))
    else:
        trained = [one(c) for c in classes]
    members = sorted(trained, key=lambda mb: mb.class_index)
    return EnsembleModel(tuple(members), kind, data.num_features, 0.5, cfg.echo(), data.class_names)


def binary_prob(member: BinaryPairModel, x: SparseVector) -> float:
    _require_conditional(member)
    return float(expit(member.score(x)))


def predict_code(model: EnsembleModel, x: SparseVector) -> np.ndarray:
    """``y[c] = 1`` iff the member probability strictly exceeds the threshold."""
    _require_conditional(model)
    probs = np.array([binary_prob(mb, x) for mb in model.members])
    return (probs > model.threshold).astype(np.int64)


def predict_top(model: EnsembleModel, x: SparseVector) -> int:
    """Highest member score; lowest class index on ties.

    Conditional members rank by probability, joint members by their
    unnormalized score difference (same order as the sigmoid would give).
    """
    if model.kind is DistributionKind.CONDITIONAL:
        vals = np.array([binary_prob(mb, x) for mb in model.members])
    else:
        vals = np.array([mb.score(x) for mb in model.members])
    return int(np.argmax(vals))


def as_weight_matrix(member: BinaryPairModel) -> WeightMatrix:
    return WeightMatrix([member.lambda_neg, member.lambda_pos], member.kind, member.num_features)
