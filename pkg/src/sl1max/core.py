"""Domain types and empirical statistics.

An input ``x`` is a sparse vector of values ``v_j(x)`` in ``[0, 1]``.  Class
dependent features are never materialized: ``f_{d,j}(x, c)`` equals
``v_j(x)`` when ``c == d`` and zero otherwise, so the score of ``(x, c)`` is
just ``lambda_c . v(x)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from sl1max.errors import EmptyDataset, InputError, SingleLabelViolation

LAMBDA_MAX = 30.0


class DistributionKind(str, enum.Enum):
    JOINT = "joint"
    CLASS_CONDITIONAL = "classcond"
    CONDITIONAL = "cond"


@dataclass(frozen=True, eq=False)
class SparseVector:
    """Sorted, duplicate-free ``(index, value)`` pairs with values in (0, 1]."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        val = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if idx.shape != val.shape:
            raise InputError("indices and values differ in length")
        if idx.size:
            if idx[0] < 0 or np.any(np.diff(idx) <= 0):
                raise InputError("feature indices must be non-negative and strictly increasing")
            if np.any(val <= 0.0) or np.any(val > 1.0) or not np.all(np.isfinite(val)):
                raise InputError("feature values must lie in (0, 1]")
        idx.flags.writeable = False
        val.flags.writeable = False
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]]) -> "SparseVector":
        """Build from unordered pairs; zero values are dropped, duplicates rejected."""
        items = sorted((int(j), float(v)) for j, v in pairs if v != 0.0)
        for a, b in zip(items, items[1:]):
            if a[0] == b[0]:
                raise InputError(f"duplicate feature index {a[0]}")
        if not items:
            return cls(np.empty(0, np.int64), np.empty(0))
        idx, val = zip(*items)
        return cls(np.array(idx), np.array(val))

    def __len__(self):
        return self.indices.size

    def __iter__(self):
        return zip(self.indices.tolist(), self.values.tolist())

    def __eq__(self, other):
        if not isinstance(other, SparseVector):
            return NotImplemented
        return np.array_equal(self.indices, other.indices) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.indices.tobytes(), self.values.tobytes()))

    def to_dense(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        out[self.indices] = self.values
        return out

    @property
    def max_index(self) -> int:
        return int(self.indices[-1]) if self.indices.size else -1


@dataclass(frozen=True)
class Example:
    x: SparseVector
    labels: frozenset = frozenset()
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "labels", frozenset(int(c) for c in self.labels))
        if not (self.weight > 0.0 and np.isfinite(self.weight)):
            raise InputError(f"example weight must be positive, got {self.weight}")


@dataclass(frozen=True, eq=False)
class Dataset:
    examples: tuple
    num_classes: int
    num_features: int
    class_names: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(self.class_names))
            if len(self.class_names) != self.num_classes:
                raise InputError("class_names length differs from num_classes")
        for ex in self.examples:
            if ex.labels and max(ex.labels) >= self.num_classes or any(c < 0 for c in ex.labels):
                raise InputError(f"label outside [0, {self.num_classes})")
            if ex.x.max_index >= self.num_features:
                raise InputError(f"feature index outside [0, {self.num_features})")

    @classmethod
    def from_arrays(cls, X, labels: Sequence, num_classes=None, weights=None, class_names=None):
        """Build from a dense or scipy matrix and per-row labels (int or iterable)."""
        X = sp.csr_matrix(X, dtype=np.float64)
        X.sort_indices()
        X.eliminate_zeros()
        label_sets = [frozenset([c]) if np.isscalar(c) else frozenset(c) for c in labels]
        if weights is None:
            weights = np.ones(X.shape[0])
        if num_classes is None:
            num_classes = 1 + max((max(s) for s in label_sets if s), default=0)
        examples = []
        for i in range(X.shape[0]):
            lo, hi = X.indptr[i], X.indptr[i + 1]
            examples.append(Example(SparseVector(X.indices[lo:hi], X.data[lo:hi]), label_sets[i], float(weights[i])))
        return cls(tuple(examples), int(num_classes), int(X.shape[1]), class_names)

    def __len__(self):
        return len(self.examples)

    @property
    def m(self) -> int:
        return len(self.examples)

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.array([ex.weight for ex in self.examples], dtype=np.float64)
        w.flags.writeable = False
        return w

    @cached_property
    def label_sets(self) -> list:
        return [ex.labels for ex in self.examples]

    def is_single_label(self) -> bool:
        return all(len(s) == 1 for s in self.label_sets)

    @cached_property
    def y(self) -> np.ndarray:
        """Class per row; only defined for single-label data."""
        if not self.is_single_label():
            raise SingleLabelViolation("dataset has rows without exactly one label")
        y = np.array([next(iter(s)) for s in self.label_sets], dtype=np.int64)
        y.flags.writeable = False
        return y

    @cached_property
    def X(self) -> sp.csr_matrix:
        indptr = np.zeros(self.m + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(ex.x) for ex in self.examples])
        if self.m:
            indices = np.concatenate([ex.x.indices for ex in self.examples]).astype(np.int64)
            data = np.concatenate([ex.x.values for ex in self.examples])
        else:
            indices = np.empty(0, np.int64)
            data = np.empty(0)
        return sp.csr_matrix((data, indices, indptr), shape=(self.m, self.num_features))

    @cached_property
    def csc_arrays(self) -> tuple:
        """``(indptr, indices, data)`` of the column-major design matrix."""
        C = self.X.tocsc()
        C.sort_indices()
        return (C.indptr.astype(np.int64), C.indices.astype(np.int64), C.data.astype(np.float64))

    @cached_property
    def label_matrix(self) -> sp.csr_matrix:
        """``m x l`` 0/1 indicator of label membership."""
        rows, cols = [], []
        for i, s in enumerate(self.label_sets):
            for c in sorted(s):
                rows.append(i)
                cols.append(c)
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.m, self.num_classes))

    def subset(self, idx) -> "Dataset":
        return Dataset(tuple(self.examples[i] for i in idx), self.num_classes, self.num_features, self.class_names)

    def with_examples(self, examples, num_classes=None) -> "Dataset":
        return Dataset(tuple(examples), self.num_classes if num_classes is None else num_classes,
                       self.num_features, None if num_classes is not None else self.class_names)


@dataclass(frozen=True)
class EmpiricalStats:
    """Empirical moments, all arrays indexed ``[class, feature]`` or ``[class]``."""

    feature_mean: np.ndarray
    class_prior: np.ndarray
    class_count: np.ndarray
    class_cond_mean: np.ndarray
    feature_std: np.ndarray
    total_weight: float
    class_weight: np.ndarray = field(repr=False, default=None)


def empirical_stats(data: Dataset, multilabel: bool = False) -> EmpiricalStats:
    """Weight-aware empirical statistics of the class-dependent features.

    With ``multilabel`` off, every row must carry exactly one label and the
    class priors sum to one.  With it on, a row counts once for each of its
    labels and the priors are not normalized.
    """
    if data.m == 0:
        raise EmptyDataset("empirical statistics need at least one example")
    if not multilabel and not data.is_single_label():
        raise SingleLabelViolation("single-label mode requires exactly one label per example")
    w = data.weights
    W = float(w.sum())
    Y = data.label_matrix
    Yw = sp.diags(w) @ Y
    X = data.X
    first = np.asarray((Yw.T @ X).todense()) / W
    second = np.asarray((Yw.T @ X.multiply(X)).todense()) / W
    class_weight = np.asarray(Yw.sum(axis=0)).ravel()
    prior = class_weight / W
    count = np.asarray(Y.sum(axis=0)).ravel().astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(prior[:, None] > 0, first / prior[:, None], 0.0)
    std = np.sqrt(np.clip(second - first**2, 0.0, None))
    return EmpiricalStats(first, prior, count, cond, std, W, class_weight)


def dot(row: Mapping[int, float], x: SparseVector) -> float:
    """``sum_j row[j] * v_j(x)`` over the sparse intersection."""
    if not row:
        return 0.0
    total = 0.0
    for j, v in x:
        lam = row.get(j)
        if lam is not None:
            total += lam * v
    return total


class WeightMatrix:
    """One sparse row ``j -> lambda_{c,j}`` per class; absent entries are zero."""

    def __init__(self, rows: Sequence[Mapping[int, float]], kind: DistributionKind, num_features: int):
        self.rows = tuple(dict((int(j), float(v)) for j, v in r.items() if v != 0.0) for r in rows)
        self.kind = DistributionKind(kind)
        self.num_features = int(num_features)
        for r in self.rows:
            for j, v in r.items():
                if not 0 <= j < self.num_features:
                    raise InputError(f"weight index {j} outside [0, {self.num_features})")
                if abs(v) > LAMBDA_MAX * (1 + 1e-12):
                    raise InputError(f"weight {v} exceeds the clamp {LAMBDA_MAX}")

    @classmethod
    def from_dense(cls, lam: np.ndarray, kind, num_features=None) -> "WeightMatrix":
        """``lam`` is ``(l, n)``."""
        lam = np.asarray(lam)
        rows = []
        for r in lam:
            nz = np.flatnonzero(r)
            rows.append(dict(zip(nz.tolist(), r[nz].tolist())))
        return cls(rows, kind, lam.shape[1] if num_features is None else num_features)

    @property
    def num_classes(self) -> int:
        return len(self.rows)

    @cached_property
    def dense(self) -> np.ndarray:
        out = np.zeros((len(self.rows), self.num_features))
        for c, r in enumerate(self.rows):
            if r:
                out[c, list(r.keys())] = list(r.values())
        out.flags.writeable = False
        return out

    def nnz(self) -> int:
        return sum(sum(1 for v in r.values() if v != 0.0) for r in self.rows)

    def scores(self, x: SparseVector) -> np.ndarray:
        """``lambda_c . v(x)`` for every class; indices beyond ``n`` are ignored."""
        keep = x.indices < self.num_features
        return self.dense[:, x.indices[keep]] @ x.values[keep]

    def __eq__(self, other):
        if not isinstance(other, WeightMatrix):
            return NotImplemented
        return self.kind == other.kind and self.num_features == other.num_features and self.rows == other.rows

    def __repr__(self):
        return f"WeightMatrix(kind={self.kind.value}, l={self.num_classes}, n={self.num_features}, nnz={self.nnz()})"
