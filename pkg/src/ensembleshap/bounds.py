"""Clopper-Pearson bounds on label probabilities and per-feature conditional vote rates.

Confidence is split by Bonferroni: with overall level ``1 - beta`` over ``m``
two-sided intervals (``m = d`` features or ``m = C`` labels), each tail uses
``beta / (2m)``. Pass ``two_sided_split=False`` for the ``beta / m`` per-tail
variant.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import betainc

from .attribution import AttributionResult
from .ensemble import LabelCounts

MAX_ITER = 200


def beta_quantile_array(q, a, b) -> np.ndarray:
    """Elementwise inverse of the regularized incomplete beta ``I_x(a, b)``.

    Bisection on ``[0, 1]`` until every bracket collapses to adjacent doubles
    (at most 200 halvings). ``q <= 0`` maps to 0 and ``q >= 1`` to 1.
    """
    q, a, b = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (q, a, b)))
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("beta shapes must be positive")
    lo = np.zeros(q.shape)
    hi = np.ones(q.shape)
    for _ in range(MAX_ITER):
        mid = 0.5 * (lo + hi)
        live = (mid > lo) & (mid < hi)
        if not live.any():
            break
        below = betainc(a, b, mid) < q
        lo = np.where(live & below, mid, lo)
        hi = np.where(live & ~below, mid, hi)
    # pick the bracket end with the smaller residual
    r_lo = np.abs(betainc(a, b, lo) - q)
    r_hi = np.abs(betainc(a, b, hi) - q)
    out = np.where(r_lo <= r_hi, lo, hi)
    out = np.where(q <= 0.0, 0.0, out)
    return np.where(q >= 1.0, 1.0, out)


def beta_quantile(q: float, a: float, b: float) -> float:
    """``x`` with ``I_x(a, b) = q``; see :func:`beta_quantile_array`."""
    if a <= 0 or b <= 0:
        raise ValueError(f"beta shapes must be positive, got a={a}, b={b}")
    return float(beta_quantile_array(q, a, b))


def _tail(beta: float, m: int, two_sided_split: bool) -> float:
    return beta / (2 * m) if two_sided_split else beta / m


def clopper_pearson_array(successes, trials, tail: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``(lower, upper)`` cutting ``tail`` mass from each side.

    ``trials == 0`` yields the vacuous interval ``(0, 1)``.
    """
    s = np.asarray(successes, dtype=np.int64)
    n = np.asarray(trials, dtype=np.int64)
    s, n = np.broadcast_arrays(s, n)
    if np.any(s < 0) or np.any(s > n):
        raise ValueError("need 0 <= successes <= trials")
    # dummy shapes where the closed-form boundary value applies
    lower = beta_quantile_array(tail, np.maximum(s, 1), np.maximum(n - s + 1, 1))
    upper = beta_quantile_array(1.0 - tail, s + 1, np.maximum(n - s, 1))
    lower = np.where(s == 0, 0.0, lower)
    upper = np.where(s == n, 1.0, upper)
    return lower, upper


def clopper_pearson(successes: int, trials: int, tail: float) -> tuple[float, float]:
    lo, hi = clopper_pearson_array(successes, trials, tail)
    return float(lo), float(hi)


@dataclass(frozen=True)
class BoundSet:
    alpha_lower: np.ndarray  # (d, C), already scaled by 1/d
    alpha_upper: np.ndarray
    p_lower: np.ndarray  # (C,)
    p_upper: np.ndarray
    beta: float
    degenerate: np.ndarray  # (d,) features that never appeared

    @property
    def d(self) -> int:
        return self.alpha_lower.shape[0]


def feature_bounds(
    appearances, successes, beta: float, d: int | None = None, two_sided_split: bool = True
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bounds on ``alpha_i = Pr(h(z)=c | i in z) / d`` for one label.

    Returns ``(lower, upper, degenerate)``; features with ``N_i = 0`` get
    ``(0, 1/d)`` and are flagged.
    """
    appearances = np.asarray(appearances, dtype=np.int64)
    successes = np.asarray(successes, dtype=np.int64)
    d = len(appearances) if d is None else d
    if np.any(successes > appearances):
        raise ValueError("success count exceeds appearance count")
    lo, hi = clopper_pearson_array(successes, appearances, _tail(beta, d, two_sided_split))
    return lo / d, hi / d, appearances == 0


def label_bounds(counts: LabelCounts, beta: float, two_sided_split: bool = True) -> tuple[np.ndarray, np.ndarray]:
    C = counts.num_labels
    tail = _tail(beta, C, two_sided_split)
    return clopper_pearson_array(counts.counts, counts.N, tail)


def bound_set(
    attribution: AttributionResult, counts: LabelCounts, beta: float, two_sided_split: bool = True
) -> BoundSet:
    """Simultaneous bounds for every (feature, label) and every label."""
    d, C = attribution.d, attribution.num_labels
    lo = np.empty((d, C))
    hi = np.empty((d, C))
    degenerate = np.zeros(d, dtype=bool)
    for c in range(C):
        lo[:, c], hi[:, c], degenerate = feature_bounds(
            attribution.appearances, attribution.successes[:, c], beta, d, two_sided_split
        )
    p_lo, p_hi = label_bounds(counts, beta, two_sided_split)
    return BoundSet(lo, hi, p_lo, p_hi, beta, degenerate)


def exact_bound_set(attribution: AttributionResult, counts: LabelCounts) -> BoundSet:
    """Plug exact enumeration values in as both bounds (no statistics).

    Entries are ``Fraction`` objects so certification comparisons are exact.
    """
    if not attribution.exact:
        raise ValueError("exact bounds need an exact (enumerated) attribution")
    d, C = attribution.d, attribution.num_labels
    alpha = np.empty((d, C), dtype=object)
    for i in range(d):
        for c in range(C):
            alpha[i, c] = Fraction(int(attribution.successes[i, c]), d * int(attribution.appearances[i]))
    p = np.array([Fraction(int(n), counts.N) for n in counts.counts], dtype=object)
    return BoundSet(alpha, alpha, p, p, 0.0, np.zeros(d, dtype=bool))
