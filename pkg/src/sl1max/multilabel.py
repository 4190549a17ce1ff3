"""Projections of multi-label data onto single-label and binary problems."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from sl1max.core import Dataset, Example


class WeightingMode(str, enum.Enum):
    DUPLICATE = "duplicate"
    INVERSE_K = "inversek"


@dataclass(frozen=True)
class ExpansionReport:
    original_count: int
    expanded_count: int
    dropped_zero_label: int
    weighting_mode: WeightingMode


def expand(data: Dataset, mode=WeightingMode.INVERSE_K) -> tuple[Dataset, ExpansionReport]:
    """One single-label row per (example, label) pair.

    ``duplicate`` keeps each copy at the original weight, which over-weights
    inputs with many labels; ``inversek`` divides it by the label count so every
    kept input keeps its total weight.  Rows without labels are dropped.
    """
    mode = WeightingMode(mode)
    out = []
    dropped = 0
    for ex in data.examples:
        k = len(ex.labels)
        if k == 0:
            dropped += 1
            continue
        w = ex.weight if mode is WeightingMode.DUPLICATE else ex.weight / k
        out.extend(Example(ex.x, frozenset([c]), w) for c in sorted(ex.labels))
    report = ExpansionReport(data.m, len(out), dropped, mode)
    return data.with_examples(out), report


def binary_targets(data: Dataset, c: int) -> Dataset:
    """Class ``c`` (label 1) against its non-class (label 0); every row kept."""
    rows = [Example(ex.x, frozenset([1 if c in ex.labels else 0]), ex.weight) for ex in data.examples]
    names = None
    if data.class_names is not None:
        names = ("non-" + data.class_names[c], data.class_names[c])
    return Dataset(tuple(rows), 2, data.num_features, names)


def class_priors_multilabel(data: Dataset) -> np.ndarray:
    """Weighted fraction of examples whose label set contains each class (not normalized)."""
    w = data.weights
    prior = np.zeros(data.num_classes)
    for wi, labels in zip(w, data.label_sets):
        for c in labels:
            prior[c] += wi
    return prior / w.sum()
