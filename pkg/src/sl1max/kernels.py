"""Hot inner loops of the coordinate-descent trainers.

Every kernel exists twice: a numba version (``nb_*``) and a numpy/scipy
version (``np_*``).  The unprefixed names are bound to one of them by
``sl1max._accel.USE_NUMBA``.  Both variants are always importable so the
test-suite and the benchmark can compare them directly.

Shared conventions: the design matrix is held in CSC form
``(indptr, indices, data)`` with ``m`` rows (examples) and ``n`` columns
(input features); ``S`` is the ``(m, l)`` score matrix; the normalized mass
of cell ``(i, d)`` is ``exp(S[i, d] + row_off[i] - shift)``.
"""
import math

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from sl1max._accel import USE_NUMBA, njit


def propose_scalar(p, q, lam, beta, lam_max):
    """Closed-form minimizer of the single-coordinate loss bound.

    Returns ``(delta, bound_value)``; ``delta`` keeps ``|lam + delta| <= lam_max``.
    """
    lo = -lam_max - lam
    hi = lam_max - lam
    if q <= 0.0:
        # bound is linear: -delta*p + beta*(|lam+delta|-|lam|)
        if p > beta:
            d = hi
        elif p + beta > 0.0:
            d = -lam
        else:
            d = 0.0
    elif q >= 1.0:
        # bound is delta*(1-p) + beta*(...)
        if 1.0 - p + beta < 0.0:
            d = hi
        elif 1.0 - p - beta > 0.0:
            d = lo
        else:
            d = -lam
    else:
        rp = p - beta
        rm = p + beta
        d = -lam
        if 0.0 < rp < 1.0:
            cand = math.log(rp * (1.0 - q) / ((1.0 - rp) * q))
            if lam + cand >= 0.0:
                d = cand
            elif 0.0 < rm < 1.0:
                cand = math.log(rm * (1.0 - q) / ((1.0 - rm) * q))
                if lam + cand <= 0.0:
                    d = cand
        elif rp >= 1.0:
            # slope stays negative on both sides of the kink
            d = hi
        elif 0.0 < rm < 1.0:
            cand = math.log(rm * (1.0 - q) / ((1.0 - rm) * q))
            if lam + cand <= 0.0:
                d = cand
        elif rm <= 0.0:
            d = lo
    if d > hi:
        d = hi
    elif d < lo:
        d = lo
    if d == 0.0:
        return 0.0, 0.0
    val = -d * p + math.log1p(math.expm1(d) * q) + beta * (abs(lam + d) - abs(lam))
    if not val < 0.0:
        return 0.0, 0.0
    return d, val


def bound_scalar(delta, p, q, lam, beta):
    return -delta * p + math.log1p(math.expm1(delta) * q) + beta * (abs(lam + delta) - abs(lam))


nb_propose_scalar = njit(propose_scalar)
nb_bound_scalar = njit(bound_scalar)
if USE_NUMBA:
    propose_scalar = nb_propose_scalar  # noqa: F811
    bound_scalar = nb_bound_scalar  # noqa: F811


# ---------------------------------------------------------------------------
# vectorized proposal over many candidates


def np_propose_all(p, q, lam, beta, lam_max):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    p, q, lam, beta = np.broadcast_arrays(p, q, lam, beta)
    lo = -lam_max - lam
    hi = lam_max - lam
    d = -lam.copy()
    inner = (q > 0.0) & (q < 1.0)
    qs = np.where(inner, q, 0.5)
    with np.errstate(divide="ignore", invalid="ignore"):
        rp = p - beta
        ok_p = inner & (rp > 0.0) & (rp < 1.0)
        rps = np.where(ok_p, rp, 0.5)
        cand_p = np.log(rps * (1.0 - qs) / ((1.0 - rps) * qs))
        ok_p &= lam + cand_p >= 0.0
        rm = p + beta
        ok_m = inner & ~ok_p & (rm > 0.0) & (rm < 1.0)
        rms = np.where(ok_m, rm, 0.5)
        cand_m = np.log(rms * (1.0 - qs) / ((1.0 - rms) * qs))
        ok_m &= lam + cand_m <= 0.0
    d = np.where(ok_p, cand_p, d)
    d = np.where(ok_m, cand_m, d)
    snapped = inner & ~ok_p & ~ok_m
    d = np.where(snapped & (rp >= 1.0), hi, d)
    d = np.where(snapped & (rp < 1.0) & (rm <= 0.0), lo, d)
    # degenerate expectations
    q0 = q <= 0.0
    d = np.where(q0 & (p > beta), hi, d)
    d = np.where(q0 & (p <= beta) & (p + beta <= 0.0), 0.0, d)
    q1 = q >= 1.0
    d = np.where(q1 & (1.0 - p + beta < 0.0), hi, d)
    d = np.where(q1 & (1.0 - p + beta >= 0.0) & (1.0 - p - beta > 0.0), lo, d)
    d = np.clip(d, lo, hi)
    val = -d * p + np.log1p(np.expm1(d) * q) + beta * (np.abs(lam + d) - np.abs(lam))
    bad = ~(val < 0.0) | (d == 0.0)
    d = np.where(bad, 0.0, d)
    val = np.where(bad, 0.0, val)
    return d, val


@njit
def nb_propose_all(p, q, lam, beta, lam_max):
    k = p.shape[0]
    d = np.empty(k)
    v = np.empty(k)
    for t in range(k):
        a, b = nb_propose_scalar(p[t], q[t], lam[t], beta[t], lam_max)
        d[t] = a
        v[t] = b
    return d, v


# ---------------------------------------------------------------------------
# expectations q[f_{d,j}] = sum_i v_ij * exp(S[i,d] + row_off[i] - shift)


def np_column_expectations(indptr, indices, data, S, row_off, shift):
    m, l = S.shape
    n = indptr.shape[0] - 1
    X = sp.csc_matrix((data, indices, indptr), shape=(m, n))
    P = np.exp(S + (row_off - shift)[:, None])
    return np.asarray(X.T @ P)


@njit
def nb_column_expectations(indptr, indices, data, S, row_off, shift):
    m, l = S.shape
    n = indptr.shape[0] - 1
    P = np.empty((m, l))
    for i in range(m):
        off = row_off[i] - shift
        for c in range(l):
            P[i, c] = math.exp(S[i, c] + off)
    out = np.zeros((n, l))
    for j in range(n):
        for k in range(indptr[j], indptr[j + 1]):
            i = indices[k]
            v = data[k]
            for c in range(l):
                out[j, c] += v * P[i, c]
    return out


def np_candidate_expectations(indptr, indices, data, S, row_off, shift, cand_d, cand_j):
    cand_d = np.asarray(cand_d, dtype=np.int64)
    cand_j = np.asarray(cand_j, dtype=np.int64)
    starts = indptr[cand_j]
    counts = indptr[cand_j + 1] - starts
    total = int(counts.sum())
    if total == 0:
        return np.zeros(cand_d.shape[0])
    owner = np.repeat(np.arange(cand_d.shape[0]), counts)
    pos = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts) + np.repeat(starts, counts)
    rows = indices[pos]
    contrib = data[pos] * np.exp(S[rows, cand_d[owner]] + row_off[rows] - shift)
    return np.bincount(owner, weights=contrib, minlength=cand_d.shape[0])


@njit
def nb_candidate_expectations(indptr, indices, data, S, row_off, shift, cand_d, cand_j):
    k = cand_d.shape[0]
    out = np.zeros(k)
    for t in range(k):
        d = cand_d[t]
        j = cand_j[t]
        acc = 0.0
        for p in range(indptr[j], indptr[j + 1]):
            i = indices[p]
            acc += data[p] * math.exp(S[i, d] + row_off[i] - shift)
        out[t] = acc
    return out


# ---------------------------------------------------------------------------
# in-place score update for one coordinate


def np_update_column(indptr, indices, data, S, row_off, shift, j, d, delta):
    lo, hi = indptr[j], indptr[j + 1]
    rows = indices[lo:hi]
    step = delta * data[lo:hi]
    change = float(np.sum(np.exp(S[rows, d] + row_off[rows] - shift) * np.expm1(step)))
    S[rows, d] += step
    return change


@njit
def nb_update_column(indptr, indices, data, S, row_off, shift, j, d, delta):
    change = 0.0
    for p in range(indptr[j], indptr[j + 1]):
        i = indices[p]
        step = delta * data[p]
        change += math.exp(S[i, d] + row_off[i] - shift) * math.expm1(step)
        S[i, d] += step
    return change


def np_row_logsumexp(S, rows):
    return logsumexp(S[rows], axis=1)


@njit
def nb_row_logsumexp(S, rows):
    l = S.shape[1]
    out = np.empty(rows.shape[0])
    for t in range(rows.shape[0]):
        i = rows[t]
        mx = S[i, 0]
        for c in range(1, l):
            if S[i, c] > mx:
                mx = S[i, c]
        acc = 0.0
        for c in range(l):
            acc += math.exp(S[i, c] - mx)
        out[t] = mx + math.log(acc)
    return out


if USE_NUMBA:
    propose_all = nb_propose_all
    column_expectations = nb_column_expectations
    candidate_expectations = nb_candidate_expectations
    update_column = nb_update_column
    row_logsumexp = nb_row_logsumexp
else:
    propose_all = np_propose_all
    column_expectations = np_column_expectations
    candidate_expectations = np_candidate_expectations
    update_column = np_update_column
    row_logsumexp = np_row_logsumexp
