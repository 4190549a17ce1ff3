"""Tied sequential L1 maxent trainers: joint, class-conditional, conditional.

All three share one loop and differ only in the scope of the normalizer:

* joint: one ``Z`` over every (example, class) cell;
* class-conditional: one ``Z(c)`` over the examples, a separate problem per class;
* conditional: one ``Z(x_i)`` over the classes of each example.

Example weights act as replication counts.  A row of weight ``w`` puts mass
``w`` into a joint or class-conditional normalizer and carries target weight
``w / sum(w)`` in the likelihood.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from sl1max import kernels
from sl1max.core import LAMBDA_MAX, Dataset, DistributionKind, SparseVector, WeightMatrix, empirical_stats
from sl1max.errors import Converged, EmptyClass, EmptyDataset, NonFiniteState, StaleProposal, Unsupported
from sl1max.update import (EPS_LOSS, PricingState, UpdateProposal, default_shortlist_size, feature_betas,
                           select_update)

logger = logging.getLogger(__name__)

GLOBAL = "global"
PER_CLASS = "per_class"
PER_EXAMPLE = "per_example"


@dataclass
class TrainConfig:
    beta: float = 0.5
    beta_scaling: str = "stddev"
    max_rounds: int | None = None
    # candidate-evaluation budget per problem; None means 50 * n * l
    max_evaluations: int | None = None
    eps: float = EPS_LOSS
    shortlist_size: int | None = None
    refresh_period: int | None = None
    recompute_every: int = 1000
    validation: Dataset | None = field(default=None, repr=False)
    eval_every: int = 200
    patience: int = 10
    parallel_classes: int = 1
    seed: int = 0
    record_trace: bool = True

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("validation")
        return d


@dataclass
class Problem:
    """One dual program in array form.

    ``log_base`` is the log base measure of each row for a global normalizer
    and the log target weight of each row for per-example normalizers.
    ``target`` is the likelihood weight of row ``i`` on class ``y[i]`` (sums to 1).
    """

    norm: str
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    m: int
    n: int
    l: int
    y: np.ndarray
    target: np.ndarray
    log_base: np.ndarray
    p_tilde: np.ndarray
    beta: np.ndarray

    @property
    def skip(self) -> np.ndarray:
        return (self.p_tilde == 0.0) & (self.beta == 0.0)


def _betas_for(data: Dataset, y_onehot_weight, total, cfg: TrainConfig):
    X = data.X
    first = np.asarray((y_onehot_weight.T @ X).todense()) / total
    second = np.asarray((y_onehot_weight.T @ X.multiply(X)).todense()) / total
    return first, feature_betas(first, second, total, cfg.beta, cfg.beta_scaling)


def build_problem(data: Dataset, kind, cfg: TrainConfig, cls: int | None = None) -> Problem:
    """Array form of the joint or conditional program, or class ``cls``'s class-conditional one."""
    kind = DistributionKind(kind)
    if data.m == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    y = data.y
    w = np.asarray(data.weights, dtype=np.float64)
    indptr, indices, values = data.csc_arrays
    if kind is DistributionKind.CLASS_CONDITIONAL:
        mask = y == cls
        Wc = float(w[mask].sum())
        if Wc <= 0.0:
            raise EmptyClass(f"class {cls} has no training examples")
        onehot = sp.csr_matrix((w * mask, (np.arange(data.m), np.zeros(data.m, np.int64))), shape=(data.m, 1))
        p_tilde, beta = _betas_for(data, onehot, Wc, cfg)
        return Problem(PER_CLASS, indptr, indices, values, data.m, data.num_features, 1,
                       np.zeros(data.m, np.int64), np.where(mask, w / Wc, 0.0), np.log(w), p_tilde, beta)

    W = float(w.sum())
    onehot = sp.csr_matrix((w, (np.arange(data.m), y)), shape=(data.m, data.num_classes))
    p_tilde, beta = _betas_for(data, onehot, W, cfg)
    target = w / W
    if kind is DistributionKind.JOINT:
        return Problem(GLOBAL, indptr, indices, values, data.m, data.num_features, data.num_classes,
                       y.copy(), target, np.log(w), p_tilde, beta)
    return Problem(PER_EXAMPLE, indptr, indices, values, data.m, data.num_features, data.num_classes,
                   y.copy(), target, np.log(target), p_tilde, beta)


class TrainState:
    """Scores, normalizers and loss for one program, maintained incrementally."""

    def __init__(self, problem: Problem, recompute_every: int = 1000):
        self.problem = problem
        self.recompute_every = recompute_every
        self.lam = np.zeros((problem.l, problem.n))
        self.scores = np.zeros((problem.m, problem.l))
        self.rounds_done = 0
        self.version = 0
        self.loss_trace: list[tuple[int, float]] = []
        self.recompute()

    @property
    def norm_kind(self) -> str:
        return self.problem.norm

    # normalizers -----------------------------------------------------------

    def recompute(self):
        """Full recomputation of the normalizers and the loss."""
        pb = self.problem
        if pb.norm != PER_EXAMPLE:
            self.log_z = float(logsumexp(self.scores + pb.log_base[:, None]))
            self.row_off = pb.log_base.copy()
            self.shift = self.log_z
        else:
            self.log_z = logsumexp(self.scores, axis=1)
            self.row_off = pb.log_base - self.log_z
            self.shift = 0.0
        self.loss = self.full_loss()
        self._check_finite()

    def full_loss(self) -> float:
        pb = self.problem
        s_true = self.scores[np.arange(pb.m), pb.y]
        if pb.norm != PER_EXAMPLE:
            lik = -float(pb.target @ s_true) + self.log_z
        else:
            lik = -float(pb.target @ (s_true - self.log_z))
        return lik + float(np.sum(pb.beta * np.abs(self.lam)))

    @property
    def normalizers(self):
        """``Z`` (global) or the array ``Z(x_i)``."""
        return np.exp(self.log_z)

    def _check_finite(self):
        if not np.all(np.isfinite(self.log_z)) or not math.isfinite(self.loss):
            raise NonFiniteState(f"non-finite normalizer or loss after {self.rounds_done} rounds")

    # expectations ----------------------------------------------------------

    def expectations_all(self) -> np.ndarray:
        pb = self.problem
        q = kernels.column_expectations(pb.indptr, pb.indices, pb.data, self.scores, self.row_off, self.shift)
        return q.T

    def expectations_subset(self, d, j) -> np.ndarray:
        pb = self.problem
        return kernels.candidate_expectations(pb.indptr, pb.indices, pb.data, self.scores, self.row_off,
                                              self.shift, np.asarray(d, np.int64), np.asarray(j, np.int64))

    def model_distribution(self) -> np.ndarray:
        """``q`` on every (row, class) cell; joint sums to 1 overall, conditional per row."""
        pb = self.problem
        if pb.norm != PER_EXAMPLE:
            return np.exp(self.scores + pb.log_base[:, None] - self.log_z)
        return np.exp(self.scores - self.log_z[:, None])

    # update ----------------------------------------------------------------

    def apply(self, proposal: UpdateProposal) -> "TrainState":
        if proposal.version not in (-1, self.version):
            raise StaleProposal(f"proposal built at version {proposal.version}, state is at {self.version}")
        delta = proposal.delta
        if delta == 0.0:
            return self
        pb = self.problem
        d, j = proposal.class_index, proposal.feature_index
        old = self.lam[d, j]
        new = min(max(old + delta, -LAMBDA_MAX), LAMBDA_MAX)
        delta = new - old
        self.lam[d, j] = new
        change = kernels.update_column(pb.indptr, pb.indices, pb.data, self.scores, self.row_off, self.shift,
                                       j, d, delta)
        self.rounds_done += 1
        self.version += 1
        if self.rounds_done % self.recompute_every == 0:
            self.recompute()
            return self
        lin = -delta * pb.p_tilde[d, j] + pb.beta[d, j] * (abs(new) - abs(old))
        if pb.norm != PER_EXAMPLE:
            ratio = 1.0 + change
            if not ratio > 1e-3 or not math.isfinite(ratio):
                self.recompute()
                return self
            step = math.log1p(change)
            self.log_z += step
            self.shift = self.log_z
            self.loss += lin + step
        else:
            rows = pb.indices[pb.indptr[j]:pb.indptr[j + 1]]
            if rows.size:
                fresh = kernels.row_logsumexp(self.scores, rows)
                self.loss += lin + float(pb.target[rows] @ (fresh - self.log_z[rows]))
                self.log_z[rows] = fresh
                self.row_off[rows] = pb.log_base[rows] - fresh
            else:
                self.loss += lin
        self._check_finite()
        return self


def apply_update(state: TrainState, proposal: UpdateProposal) -> TrainState:
    return state.apply(proposal)


def expected_feature(state: TrainState, d: int, j: int) -> float:
    """Model expectation ``q[f_{d,j}]`` (``q'`` for per-example normalizers)."""
    return float(state.expectations_subset([d], [j])[0])


# ---------------------------------------------------------------------------
# training loop


def _budget(problem: Problem, cfg: TrainConfig):
    evals = cfg.max_evaluations if cfg.max_evaluations is not None else 50 * problem.n * problem.l
    rounds = cfg.max_rounds if cfg.max_rounds is not None else math.inf
    return evals, rounds


def fit_problem(problem: Problem, cfg: TrainConfig, validation=None, on_update=None) -> tuple[TrainState, dict]:
    """Run sequential updates until convergence, budget exhaustion or early stop.

    ``validation`` is an optional ``(X_val, label_sets)`` pair evaluated every
    ``cfg.eval_every`` rounds by top-class error.  ``on_update(state, proposal,
    loss_before)`` is called after each accepted update.
    """
    state = TrainState(problem, cfg.recompute_every)
    size = cfg.shortlist_size or default_shortlist_size(problem.n, problem.n * problem.l)
    pricing = PricingState(size=size, refresh_period=cfg.refresh_period or size)
    max_evals, max_rounds = _budget(problem, cfg)
    skip = problem.skip
    if cfg.record_trace:
        state.loss_trace.append((0, state.loss))
    info = {"converged": False, "stopped_early": False}
    best = None
    stale = 0
    while state.rounds_done < max_rounds and pricing.evaluations < max_evals:
        try:
            prop = select_update(problem.p_tilde, state.lam, problem.beta, pricing, state.expectations_all,
                                 state.expectations_subset, skip=skip, eps=cfg.eps)
        except Converged:
            info["converged"] = True
            break
        before = state.loss
        state.apply(prop)
        if cfg.record_trace:
            state.loss_trace.append((state.rounds_done, state.loss))
        if on_update is not None:
            on_update(state, prop, before)
        if validation is not None and state.rounds_done % cfg.eval_every == 0:
            err = _top_error(validation, state.lam)
            if best is None or err < best[0]:
                best = (err, state.lam.copy(), state.rounds_done)
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    info["stopped_early"] = True
                    break
    info["evaluations"] = pricing.evaluations
    info["full_scans"] = pricing.full_scans
    if best is not None and validation is not None:
        err = _top_error(validation, state.lam)
        if best[0] < err:
            info["restored_round"] = best[2]
            info["lam"] = best[1]
    return state, info


def _top_error(validation, lam):
    Xv, sets = validation
    pred = np.argmax(np.asarray(Xv @ lam.T), axis=1)
    return float(np.mean([int(p) not in s for p, s in zip(pred, sets)]))


@dataclass(frozen=True, eq=False)
class TrainedModel:
    weights: WeightMatrix
    kind: DistributionKind
    # both set for class-conditional models only
    log_prior: np.ndarray | None = None
    log_norm_per_class: np.ndarray | None = None
    config: dict = field(default_factory=dict)
    rounds: int = 0
    class_names: tuple | None = None

    @property
    def num_classes(self) -> int:
        return self.weights.num_classes

    @property
    def num_features(self) -> int:
        return self.weights.num_features

    def decision_scores(self, X) -> np.ndarray:
        """``(m, l)`` decision values for a sparse/dense design matrix."""
        s = np.asarray(fit_width(X, self.num_features) @ self.weights.dense.T)
        if self.kind is DistributionKind.CLASS_CONDITIONAL:
            s = s - self.log_norm_per_class + self.log_prior
        return s


def train(data: Dataset, kind, config: TrainConfig | None = None) -> TrainedModel:
    """Fit one of the tied programs on single-label data."""
    cfg = config or TrainConfig()
    kind = DistributionKind(kind)
    if data.m == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    stats = empirical_stats(data)
    validation = None
    if cfg.validation is not None:
        if kind is DistributionKind.CLASS_CONDITIONAL:
            logger.warning("validation early stopping needs a tied normalizer; ignored for classcond")
        else:
            v = cfg.validation
            validation = (fit_width(v.X, data.num_features), v.label_sets)

    if kind is DistributionKind.CLASS_CONDITIONAL:
        for c in range(data.num_classes):
            if stats.class_weight[c] <= 0.0:
                raise EmptyClass(f"class {c} has no training examples")

        def one(c):
            state, info = fit_problem(build_problem(data, kind, cfg, c), cfg)
            return state.lam[0].copy(), state.log_z, state.rounds_done

        workers = max(1, int(cfg.parallel_classes))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(one, range(data.num_classes)))
        else:
            parts = [one(c) for c in range(data.num_classes)]
        log_prior = np.log(stats.class_prior)
        lam = np.vstack([p[0] for p in parts])
        log_norm = np.array([p[1] for p in parts])
        rounds = int(sum(p[2] for p in parts))
        weights = WeightMatrix.from_dense(lam, kind)
        return TrainedModel(weights, kind, log_prior, log_norm, cfg.echo(), rounds, data.class_names)

    state, info = fit_problem(build_problem(data, kind, cfg), cfg, validation)
    lam = info.get("lam", state.lam)
    weights = WeightMatrix.from_dense(lam, kind)
    return TrainedModel(weights, kind, None, None, cfg.echo(), state.rounds_done, data.class_names)


def fit_width(X, n):
    """Drop columns beyond ``n`` (unseen features) or pad with empty ones."""
    X = sp.csr_matrix(X)
    if X.shape[1] > n:
        return X[:, :n]
    if X.shape[1] < n:
        return sp.hstack([X, sp.csr_matrix((X.shape[0], n - X.shape[1]))]).tocsr()
    return X


# ---------------------------------------------------------------------------
# loss, prediction


def loss(model: TrainedModel, data: Dataset, config: TrainConfig | None = None):
    """Regularized training loss of ``model`` on ``data``.

    Returns a float for joint and conditional models and the array of per-class
    losses for class-conditional models.  Betas come from ``config`` (default:
    the model's config echo) and the statistics of ``data``.
    """
    cfg = config or TrainConfig(beta=model.config.get("beta", 0.5),
                                beta_scaling=model.config.get("beta_scaling", "stddev"))
    lam = model.weights.dense
    if model.kind is DistributionKind.CLASS_CONDITIONAL:
        out = np.empty(model.num_classes)
        for c in range(model.num_classes):
            state = state_from_weights(build_problem(data, model.kind, cfg, c), lam[c:c + 1])
            out[c] = state.loss
        return out
    return state_from_weights(build_problem(data, model.kind, cfg), lam).loss


def state_from_weights(problem: Problem, lam) -> TrainState:
    """Fresh state positioned at ``lam`` with normalizers computed from scratch."""
    state = TrainState(problem)
    state.lam = np.array(lam, dtype=np.float64)
    X = _csc_to_csr(problem)
    state.scores = np.asarray(X @ state.lam.T)
    state.recompute()
    return state


def _csc_to_csr(problem: Problem):
    return sp.csc_matrix((problem.data, problem.indices, problem.indptr), shape=(problem.m, problem.n)).tocsr()


def predict(model: TrainedModel, x: SparseVector):
    """``(class, decision values)``; ties go to the lowest class index."""
    s = model.weights.scores(x)
    if model.kind is DistributionKind.CLASS_CONDITIONAL:
        s = s - model.log_norm_per_class + model.log_prior
    return int(np.argmax(s)), s


def predict_proba(model: TrainedModel, x: SparseVector) -> np.ndarray:
    if model.kind is not DistributionKind.CONDITIONAL:
        raise Unsupported(f"{model.kind.value} models are not normalized per example")
    return softmax(model.weights.scores(x))


def softmax(s, axis=-1):
    s = np.asarray(s, dtype=np.float64)
    return np.exp(s - logsumexp(s, axis=axis, keepdims=True))
