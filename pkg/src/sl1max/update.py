"""Single-coordinate step: loss bound, closed-form delta, and pricing.

For one parameter ``lambda_{d,j}`` the change in regularized loss after
``lambda_{d,j} += delta`` is bounded by

    -delta * p + log(1 + (e^delta - 1) * q) + beta * (|lambda + delta| - |lambda|)

where ``p`` is the empirical feature mean and ``q`` the model expectation.
The bound is exact for binary features under a single normalizer and an
upper bound otherwise (per-example normalizers go through Jensen).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from sl1max import kernels
from sl1max.core import LAMBDA_MAX
from sl1max.errors import Converged, DomainError

EPS_LOSS = 1e-6
BETA_SCALINGS = ("uniform", "stddev")


@dataclass(frozen=True)
class UpdateProposal:
    class_index: int
    feature_index: int
    delta: float
    predicted_decrease: float
    version: int = -1


def bound_decrease(delta: float, p_tilde: float, q: float, lam: float, beta: float) -> float:
    if not (0.0 <= q <= 1.0) or beta < 0.0:
        raise DomainError(f"q={q} must lie in [0, 1] and beta={beta} must be non-negative")
    inner = 1.0 + math.expm1(delta) * q
    if not inner > 0.0:
        raise DomainError(f"1 + (e^delta - 1) q = {inner} is not positive")
    return -delta * p_tilde + math.log1p(math.expm1(delta) * q) + beta * (abs(lam + delta) - abs(lam))


def propose_delta(p_tilde: float, q: float, lam: float, beta: float, lam_max: float = LAMBDA_MAX):
    """Return ``(delta, predicted_decrease)`` minimizing :func:`bound_decrease`.

    One-sided stationary points come from ``q e^d / (1 - q + q e^d) = p -+ beta``;
    when neither lands on its own side of the kink the step snaps to
    ``lambda + delta = 0``.  Unbounded steps (degenerate ``q``) are clamped so
    that ``|lambda + delta| <= lam_max``.  Non-improving moves come back as
    ``(0.0, 0.0)``.
    """
    if not (0.0 <= p_tilde <= 1.0 and 0.0 <= q <= 1.0) or beta < 0.0:
        raise DomainError(f"bad arguments p={p_tilde} q={q} beta={beta}")
    d, v = kernels.propose_scalar(float(p_tilde), float(q), float(lam), float(beta), float(lam_max))
    return float(d), float(v)


def feature_betas(mean, second_moment, total_weight, beta, scaling="stddev"):
    """Per-feature regularization from the scalar ``beta``.

    ``uniform``: ``beta / sqrt(m)``.  ``stddev``: ``beta * max(sigma, floor) / sqrt(m)``
    where ``sigma`` is the empirical standard deviation of the feature and
    ``floor = sqrt((1/m) (1 - 1/m))`` (the deviation of a feature seen once).
    ``m`` is the total example weight.
    """
    if scaling not in BETA_SCALINGS:
        raise ValueError(f"unknown beta scaling {scaling!r}")
    m = float(total_weight)
    mean = np.asarray(mean, dtype=np.float64)
    if scaling == "uniform":
        return np.full(mean.shape, beta / math.sqrt(m))
    sigma = np.sqrt(np.clip(np.asarray(second_moment) - mean**2, 0.0, None))
    floor = math.sqrt(max((1.0 / m) * (1.0 - 1.0 / m), 0.0))
    return beta * np.maximum(sigma, floor) / math.sqrt(m)


def default_shortlist_size(num_features: int, num_candidates: int) -> int:
    return int(min(max(64, num_features // 50), num_candidates))


@dataclass
class PricingState:
    """Shortlist of promising ``(d, j)`` coordinates, refreshed by full scans.

    ``shortlist`` holds flat indices ``d * n + j`` in increasing order, so
    ``argmin`` over it breaks ties lexicographically.
    """

    size: int
    refresh_period: int
    shortlist: np.ndarray | None = None
    rounds_since_refresh: int = 0
    evaluations: int = 0
    full_scans: int = field(default=0)

    def due(self) -> bool:
        return self.shortlist is None or self.shortlist.size == 0 or self.rounds_since_refresh + 1 >= self.refresh_period


def select_update(p_tilde, lam, beta, pricing: PricingState, expect_all, expect_subset,
                  skip=None, eps=EPS_LOSS, lam_max=LAMBDA_MAX) -> UpdateProposal:
    """Pick the coordinate with the most negative predicted decrease.

    ``p_tilde``, ``lam``, ``beta`` (and the optional boolean ``skip`` mask) are
    ``(l, n)`` arrays.  ``expect_all()`` returns the full ``(l, n)`` model
    expectation matrix; ``expect_subset(d, j)`` returns expectations for the
    given coordinates only.  Raises :class:`Converged` when even a full scan
    finds no decrease below ``-eps``.
    """
    l, n = p_tilde.shape
    if not pricing.due():
        flat = pricing.shortlist
        d, j = np.divmod(flat, n)
        q = np.clip(expect_subset(d, j), 0.0, 1.0)
        deltas, dec = kernels.propose_all(p_tilde.ravel()[flat], q, lam.ravel()[flat], beta.ravel()[flat], lam_max)
        if skip is not None:
            dec = np.where(skip.ravel()[flat], 0.0, dec)
        pricing.evaluations += flat.size
        t = int(np.argmin(dec))
        if dec[t] < -eps:
            pricing.rounds_since_refresh += 1
            return UpdateProposal(int(d[t]), int(j[t]), float(deltas[t]), float(dec[t]))

    q = np.clip(expect_all(), 0.0, 1.0).ravel()
    deltas, dec = kernels.propose_all(p_tilde.ravel(), q, lam.ravel(), beta.ravel(), lam_max)
    if skip is not None:
        dec = np.where(skip.ravel(), 0.0, dec)
    pricing.evaluations += dec.size
    pricing.full_scans += 1
    k = min(pricing.size, dec.size)
    if k < dec.size:
        best = np.argpartition(dec, k - 1)[:k]
    else:
        best = np.arange(dec.size)
    pricing.shortlist = np.sort(best)
    pricing.rounds_since_refresh = 0
    t = int(np.argmin(dec))
    if not dec[t] < -eps:
        raise Converged(float(dec[t]))
    d, j = divmod(t, n)
    return UpdateProposal(int(d), int(j), float(deltas[t]), float(dec[t]))
