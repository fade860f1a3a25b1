"""Alignment of simulated outcomes to external control totals, plus
iterative proportional fitting for two-way cell imputation.

Binary alignment uses the sort-by-score method: each unit gets a score
q = logit(p) + logistic noise (noise keyed by unit id, so the ranking is
independent of input order and stable across calls), units are sorted by
descending q with ties broken by ascending id, and selected greedily until
the cumulative weight first reaches the target.

Targets are weighted counts throughout; infeasible targets raise rather
than clamp, because control totals come from external files and silent
clamping hides ingestion bugs.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .rng import logistic_noise


class AlignmentError(ValueError):
    pass


class IpfError(ValueError):
    def __init__(self, message, deviation=None):
        super().__init__(message)
        self.deviation = deviation


@dataclass(frozen=True)
class AlignmentTarget:
    """A weighted-count (or mean) target for one stratum."""

    label: str
    target: float


def load_targets(path) -> list:
    """Load (label, target) rows, as used for IPF row/column targets."""
    targets = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(row for row in fh if not row.lstrip().startswith("#"))
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["label", "target"]:
            raise AlignmentError(f"{path}: expected columns label, target")
        for lineno, row in enumerate(reader, start=2):
            try:
                targets.append(AlignmentTarget(row[0].strip(), float(row[1])))
            except (IndexError, ValueError) as exc:
                raise AlignmentError(f"{path}:{lineno}: bad target row") from exc
    return targets


def _logit(p: np.ndarray) -> np.ndarray:
    return np.log(p) - np.log1p(-p)


def align_by_score(ids, scores, weights, target: float) -> np.ndarray:
    """Greedy core: take units in descending score order (ties by ascending
    id) until cumulative weight first reaches `target`. Returns selected
    ids, ascending."""
    ids = np.asarray(ids)
    scores = np.asarray(scores, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    total = float(np.sum(weights))
    tol = 1e-9 * max(1.0, abs(target))
    if target < -tol:
        raise AlignmentError(f"negative target {target}")
    if target <= tol:
        return np.empty(0, dtype=ids.dtype)
    if ids.size == 0:
        raise AlignmentError(f"no units available for target {target}")
    if target > total + max(tol, 1e-9 * total):
        raise AlignmentError(
            f"target {target} exceeds available weight {total}"
        )
    order = np.lexsort((ids, -scores))
    cum = np.cumsum(weights[order])
    k = int(np.searchsorted(cum, target - tol, side="left"))
    k = min(k, ids.size - 1)
    return np.sort(ids[order[: k + 1]])


def align_binary(ids, probs, weights, target: float, seed: int, label: str) -> np.ndarray:
    """Select units so the selected weight matches the target count.

    probs must lie strictly inside (0, 1). The realized weighted count is
    within one unit-weight of the target; higher-probability units are
    selected more often over repeated seeds.
    """
    ids = np.asarray(ids)
    probs = np.asarray(probs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(probs <= 0.0) or np.any(probs >= 1.0):
        raise AlignmentError("alignment probabilities must lie strictly in (0, 1)")
    if np.any(weights <= 0.0):
        raise AlignmentError("alignment weights must be positive")
    scores = _logit(probs) + logistic_noise(seed, "align:" + label, ids)
    return align_by_score(ids, scores, weights, target)


def align_multinomial(ids, prob_matrix, weights, targets, seed: int, label: str) -> np.ndarray:
    """Assign every unit exactly one of m outcomes matching per-outcome
    weighted-count targets.

    Implemented as sequential binary alignment per outcome on the units
    still unassigned, in descending-target order; the smallest-target
    outcome absorbs the remainder. Each aligned outcome lands within one
    unit-weight of its target; the remainder outcome absorbs their summed
    overshoot (at most m-1 unit-weights), which is zero for unit weights
    and integer targets.
    """
    ids = np.asarray(ids)
    probs = np.asarray(prob_matrix, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if probs.shape != (ids.size, targets.size):
        raise AlignmentError("probability matrix shape does not match units x outcomes")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise AlignmentError("probability vectors must sum to 1")
    total = float(np.sum(weights))
    max_w = float(np.max(weights)) if weights.size else 0.0
    if abs(float(np.sum(targets)) - total) > max_w + 1e-9 * max(1.0, total):
        raise AlignmentError(
            f"targets sum to {float(np.sum(targets))} but weights sum to {total}"
        )
    if np.any(targets < 0):
        raise AlignmentError("negative outcome target")

    outcome_order = np.argsort(-targets, kind="stable")
    assignment = np.full(ids.size, -1, dtype=np.int64)
    remaining = np.ones(ids.size, dtype=bool)
    pos = {i: k for k, i in enumerate(ids.tolist())}
    for step, outcome in enumerate(outcome_order):
        if step == len(outcome_order) - 1:
            assignment[remaining] = outcome
            break
        sub = np.flatnonzero(remaining)
        p = np.clip(probs[sub, outcome], 1e-9, 1.0 - 1e-9)
        chosen = align_binary(
            ids[sub], p, weights[sub], float(targets[outcome]),
            seed, f"{label}:outcome{outcome}",
        )
        for i in chosen.tolist():
            k = pos[i]
            assignment[k] = outcome
            remaining[k] = False
    return assignment


def align_continuous(values, weights, target_mean: float) -> np.ndarray:
    """Scale every value by a single factor so the weighted mean hits
    target_mean; ratios (and hence every inequality index) are preserved."""
    v = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    current = float(np.sum(v * w)) / float(np.sum(w))
    if current == 0.0:
        if target_mean == 0.0:
            return v.copy()
        raise AlignmentError("cannot rescale a zero-mean vector to a nonzero mean")
    return v * (target_mean / current)


def ipf(seed_matrix, row_targets, col_targets, tol: float = 1e-8, max_iter: int = 1000) -> np.ndarray:
    """Iterative proportional fitting of a non-negative seed matrix to
    row and column targets.

    Alternates row and column rescaling until the largest absolute
    marginal deviation drops below tol. Zero seed cells stay zero, and
    cross-product ratios of the seed are preserved wherever defined.
    """
    m = np.asarray(seed_matrix, dtype=np.float64).copy()
    rt = np.asarray(row_targets, dtype=np.float64)
    ct = np.asarray(col_targets, dtype=np.float64)
    if m.ndim != 2 or m.shape != (rt.size, ct.size):
        raise IpfError("seed matrix shape does not match targets")
    if np.any(m < 0):
        raise IpfError("seed matrix cells must be non-negative")
    if np.any(rt < 0) or np.any(ct < 0):
        raise IpfError("targets must be non-negative")
    rsum, csum = float(rt.sum()), float(ct.sum())
    if abs(rsum - csum) > 1e-9 * max(1.0, abs(rsum), abs(csum)):
        raise IpfError(f"row targets sum to {rsum} but column targets sum to {csum}")
    if np.any((m.sum(axis=1) == 0) & (rt > 0)) or np.any((m.sum(axis=0) == 0) & (ct > 0)):
        raise IpfError("a row/column with a positive target has no positive seed cell")

    def deviation(mat):
        dr = np.abs(mat.sum(axis=1) - rt).max() if rt.size else 0.0
        dc = np.abs(mat.sum(axis=0) - ct).max() if ct.size else 0.0
        return max(float(dr), float(dc))

    for _ in range(max_iter):
        if deviation(m) < tol:
            return m
        rs = m.sum(axis=1)
        factors = np.divide(rt, rs, out=np.zeros_like(rs), where=rs > 0)
        m *= factors[:, None]
        cs = m.sum(axis=0)
        factors = np.divide(ct, cs, out=np.zeros_like(cs), where=cs > 0)
        m *= factors[None, :]
    dev = deviation(m)
    if dev < tol:
        return m
    raise IpfError(
        f"ipf did not converge after {max_iter} iterations (deviation {dev:.3e})",
        deviation=dev,
    )
