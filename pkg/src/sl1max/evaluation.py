"""Metrics, cross-validation, sparsity accounting and synthetic data."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from sl1max.core import Dataset, DistributionKind, Example, SparseVector
from sl1max.ensemble import EnsembleModel, train_ensemble
from sl1max.errors import BadK, BadSpec, LengthMismatch, NoPositives
from sl1max.multilabel import expand
from sl1max.trainers import TrainConfig, TrainedModel, fit_width, softmax, train

TIED_KINDS = ("joint", "classcond", "cond")
ENSEMBLE_KINDS = ("ensemble-joint", "ensemble-cond")
ALL_KINDS = TIED_KINDS + ENSEMBLE_KINDS


@dataclass(frozen=True)
class ScoredItem:
    score: float
    is_positive: bool
    example_index: int = -1
    class_index: int = -1


def top_class_error(predictions: Sequence[int], truth: Sequence) -> float:
    """Fraction of rows whose predicted class is not one of the target labels."""
    if len(predictions) != len(truth):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(truth)} targets")
    if len(truth) == 0:
        return 0.0
    miss = sum(int(p) not in set(t) for p, t in zip(predictions, truth))
    return miss / len(truth)


def micro_f_optimal(items: Iterable[ScoredItem]) -> tuple[float, float]:
    """Best micro-averaged F1 over one global threshold, and that threshold.

    An item is called positive when ``score > threshold``.  Candidate
    thresholds are ``+inf``, the midpoints between adjacent distinct scores
    and ``-inf``.
    """
    items = list(items)
    scores = np.array([it.score for it in items], dtype=np.float64)
    pos = np.array([bool(it.is_positive) for it in items])
    return micro_f_optimal_arrays(scores, pos)


def micro_f_optimal_arrays(scores, positives) -> tuple[float, float]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    positives = np.asarray(positives, dtype=bool).ravel()
    total_pos = int(positives.sum())
    if total_pos == 0:
        raise NoPositives("micro-F needs at least one positive item")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    p = positives[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(p)[ends]
    fp = (ends + 1) - tp
    f = 2.0 * tp / (2.0 * tp + fp + (total_pos - tp))
    best = int(np.argmax(f))
    if f[best] <= 0.0:
        return 0.0, float("inf")
    k = ends[best]
    thr = (s[k] + s[k + 1]) / 2.0 if k + 1 < s.size else float("-inf")
    return float(f[best]), float(thr)


def micro_f_at(scores, positives, threshold: float) -> float:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    positives = np.asarray(positives, dtype=bool).ravel()
    called = scores > threshold
    tp = int(np.sum(called & positives))
    fp = int(np.sum(called & ~positives))
    fn = int(np.sum(~called & positives))
    return 0.0 if tp == 0 else 2.0 * tp / (2.0 * tp + fp + fn)


def kfold(data_or_m, k: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled k-fold split; earlier folds take the remainder."""
    m = data_or_m if isinstance(data_or_m, (int, np.integer)) else len(data_or_m)
    if k < 2 or m < k:
        raise BadK(f"k={k} needs 2 <= k <= m={m}")
    perm = np.random.default_rng(seed).permutation(m)
    folds = np.array_split(perm, k)
    out = []
    for t, test in enumerate(folds):
        train_idx = np.sort(np.concatenate([f for u, f in enumerate(folds) if u != t]))
        out.append((train_idx, np.sort(test)))
    return out


def count_nonzero(model) -> int:
    """Stored parameters with ``|lambda| > 0`` (both rows of every ensemble member)."""
    if isinstance(model, EnsembleModel):
        return sum(mb.nnz() for mb in model.members)
    return model.weights.nnz()


def nonzero_per_class(model) -> list[int]:
    if isinstance(model, EnsembleModel):
        return [mb.nnz() for mb in model.members]
    return [sum(1 for v in r.values() if v != 0.0) for r in model.weights.rows]


def synth_generate(m: int, n: int, l: int, noise_rate: float = 0.0, seed: int = 0,
                   background_rate: float = 0.05) -> Dataset:
    """Class-indicator data: feature ``c`` marks class ``c``, features ``l..n-1`` are noise.

    With probability ``noise_rate`` an example carries a uniformly chosen wrong
    indicator instead of its own.
    """
    if m < 1 or l < 1 or n < l or not 0.0 <= noise_rate <= 1.0:
        raise BadSpec(f"bad synthetic spec m={m} n={n} l={l} noise={noise_rate}")
    if l == 1 and noise_rate > 0.0:
        raise BadSpec("noise needs at least two classes")
    rng = np.random.default_rng(seed)
    y = rng.integers(0, l, size=m)
    flip = rng.random(m) < noise_rate
    wrong = (y + rng.integers(1, max(l, 2), size=m)) % l
    indicator = np.where(flip, wrong, y)
    background = rng.random((m, n - l)) < background_rate
    examples = []
    for i in range(m):
        idx = np.r_[indicator[i], l + np.flatnonzero(background[i])].astype(np.int64)
        examples.append(Example(SparseVector(idx, np.ones(idx.size)), frozenset([int(y[i])])))
    return Dataset(tuple(examples), l, n)


# ---------------------------------------------------------------------------
# model-level helpers


def decision_matrix(model, data: Dataset) -> np.ndarray:
    """Per-class decision values used for top-class prediction."""
    if isinstance(model, EnsembleModel):
        return model.score_matrix(data.X)
    return model.decision_scores(data.X)


def sweep_scores(model, data: Dataset) -> np.ndarray:
    """Scores pooled by the micro-F threshold sweep.

    Ensemble-cond: member probabilities; cond: per-example softmax;
    classcond: ``lambda_c . v - ln Z(c) + ln p(c)``; joint kinds: raw scores.
    """
    if isinstance(model, EnsembleModel):
        if model.kind is DistributionKind.CONDITIONAL:
            return model.proba_matrix(data.X)
        return model.score_matrix(data.X)
    s = model.decision_scores(data.X)
    if model.kind is DistributionKind.CONDITIONAL:
        return softmax(s, axis=1)
    return s


def predict_classes(model, data: Dataset) -> np.ndarray:
    return np.argmax(decision_matrix(model, data), axis=1)


def evaluate(model, data: Dataset, metrics=("error", "microf")) -> dict:
    out = {"examples": data.m}
    if "error" in metrics:
        out["error"] = top_class_error(predict_classes(model, data), data.label_sets)
    if "microf" in metrics:
        S = sweep_scores(model, data)
        Y = data.label_matrix.toarray().astype(bool)
        if Y.shape[1] < S.shape[1]:
            Y = np.hstack([Y, np.zeros((Y.shape[0], S.shape[1] - Y.shape[1]), bool)])
        f, thr = micro_f_optimal_arrays(S, Y[:, :S.shape[1]])
        out["microf"] = f
        out["microf_threshold"] = thr
    out["nonzero"] = count_nonzero(model)
    return out


def fit(data: Dataset, kind: str, config: TrainConfig | None = None, multilabel_mode="inversek"):
    """Train any of the five variants; tied kinds expand multi-label data first."""
    cfg = config or TrainConfig()
    if kind in ENSEMBLE_KINDS:
        return train_ensemble(data, kind, cfg)
    if kind not in TIED_KINDS:
        raise BadSpec(f"unknown kind {kind!r}")
    if not data.is_single_label():
        data, _ = expand(data, multilabel_mode)
    if cfg.validation is not None and not cfg.validation.is_single_label():
        cfg = replace(cfg, validation=expand(cfg.validation, multilabel_mode)[0])
    return train(data, kind, cfg)


def cross_validate(data: Dataset, kind: str, k: int = 4, seed: int = 0, config: TrainConfig | None = None,
                   multilabel_mode="inversek", metrics=("error",)) -> list[dict]:
    rows = []
    for t, (tr, te) in enumerate(kfold(data, k, seed)):
        model = fit(data.subset(tr), kind, config, multilabel_mode)
        res = evaluate(model, data.subset(te), metrics)
        rows.append({"fold": t, "kind": kind, **res})
    return rows


def format_report(metrics: dict) -> str:
    return "\n".join(f"{key}={_fmt(v)}" for key, v in metrics.items()) + "\n"


def format_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    keys = list(dict.fromkeys(k for r in rows for k in r))
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(v) for k, v in r.items()})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)
