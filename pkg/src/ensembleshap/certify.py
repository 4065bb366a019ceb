"""Certified detection of adversarial features.

For an input predicted as ``y`` and an attacker who edits at most ``T``
features, ``certified_detection_size`` returns the largest ``r`` such that
every successful attack leaves at least ``r`` edited features among the
top-``e`` reported features. Two sufficient conditions are checked per
alternative label (an individual bound on the reported features and a joint
one); ``r`` is certified when, for every alternative label, either holds.

Inputs may be floats (statistical bounds) or ``Fraction`` (exact bounds); the
arithmetic stays exact in the latter case.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import binom

from .attribution import attribute_run
from .bounds import BoundSet, bound_set, exact_bound_set, feature_bounds
from .core import AblationRule, BaseModel, Sample
from .ensemble import EnsembleConfig, derive_seed, run_ensemble


@dataclass(frozen=True)
class AlternativeBounds:
    """Bounds against one alternative label: margin and both score bounds, sorted descending."""

    label: int
    delta: float | Fraction
    upper_sorted: tuple  # upper bounds, w_1 first
    lower_sorted: tuple  # lower bounds, q_1 first


def _sorted_desc(values) -> tuple:
    # descending by value, ties by ascending index; only the values are needed downstream
    order = sorted(range(len(values)), key=lambda i: (-values[i], i))
    return tuple(values[i] for i in order)


@dataclass(frozen=True)
class CertificationInput:
    d: int
    k: int
    e: int
    T: int
    target: int
    alternatives: tuple[AlternativeBounds, ...]

    def __post_init__(self):
        if not 1 <= self.e <= self.d:
            raise ValueError(f"e must lie in 1..{self.d}, got {self.e}")
        if not 1 <= self.T <= self.d:
            raise ValueError(f"T must lie in 1..{self.d}, got {self.T}")
        if not 1 <= self.k <= self.d:
            raise ValueError(f"k must lie in 1..{self.d}, got {self.k}")

    @classmethod
    def from_bounds(cls, bounds: BoundSet, k: int, e: int, T: int, target: int) -> "CertificationInput":
        d, C = bounds.alpha_lower.shape
        alts = []
        for c in range(1, C + 1):
            if c == target:
                continue
            delta = bounds.p_lower[target - 1] - bounds.p_upper[c - 1]
            alts.append(
                AlternativeBounds(
                    c,
                    delta,
                    _sorted_desc(list(bounds.alpha_upper[:, c - 1])),
                    _sorted_desc(list(bounds.alpha_lower[:, c - 1])),
                )
            )
        return cls(d, k, e, T, target, tuple(alts))


def _exact(*vals) -> bool:
    return any(isinstance(v, Fraction) for v in vals)


def _ratio(a: int, b: int, exact: bool):
    return Fraction(a, b) if exact else a / b


def unaffected_fraction(d: int, k: int, T: int, exact: bool = False):
    """``C(d-1-T, k-1) / C(d, k)``, zero when ``d-1-T < k-1``."""
    top = d - 1 - T
    num = math.comb(top, k - 1) if top >= k - 1 >= 0 else 0
    return _ratio(num, math.comb(d, k), exact)


def _check_r(r: int, d: int, e: int, T: int) -> None:
    if not 1 <= r <= min(T, e):
        raise ValueError(f"r must lie in 1..min(T, e) = {min(T, e)}, got {r}")
    if e > d or T > d:
        raise ValueError("e and T must not exceed d")


def _smallest_lower_sum(lower_sorted: Sequence, d: int, T: int, r: int):
    # 1-based positions d-T+r .. d of the descending order: the T-r+1 smallest lower bounds
    return sum(lower_sorted[d - T + r - 1 : d])


def condition_individual(r: int, d: int, k: int, e: int, T: int, alt: AlternativeBounds) -> bool:
    """Largest unreported edited score beats the ``(e-r+1)``-th reported clean score, feature by feature."""
    _check_r(r, d, e, T)
    exact = _exact(alt.delta, *alt.upper_sorted[:1], *alt.lower_sorted[:1])
    m = T - r + 1
    tail = _smallest_lower_sum(alt.lower_sorted, d, T, r)
    lhs = (alt.delta / (2 * k) - _ratio(r - 1, d, exact) + tail) / m
    rhs = alt.upper_sorted[e - r] + _ratio(1, d, exact) - unaffected_fraction(d, k, T, exact) / k
    return bool(lhs > rhs)


def condition_joint(r: int, d: int, k: int, e: int, T: int, alt: AlternativeBounds) -> bool:
    """Same comparison with the ``e-r+1`` reported clean features bounded jointly."""
    _check_r(r, d, e, T)
    exact = _exact(alt.delta, *alt.upper_sorted[:1], *alt.lower_sorted[:1])
    m = T - r + 1
    a = e - r + 1
    slope = _ratio(1, m, exact) - _ratio(k - 1, a, exact)
    if slope <= 0:
        return False
    tail = _smallest_lower_sum(alt.lower_sorted, d, T, r)
    top_mean = sum(alt.upper_sorted[:a]) / a
    lhs = alt.delta / (2 * k) * slope
    rhs = top_mean + _ratio(r - 1, d * m, exact) - tail / m
    return bool(lhs > rhs)


@dataclass(frozen=True)
class ConditionRecord:
    r: int
    label: int
    individual: bool
    joint: bool


@dataclass
class CertificationResult:
    D: int
    T: int
    e: int
    audit: list[ConditionRecord] = field(default_factory=list)
    note: str = ""

    @property
    def rate(self) -> float:
        return self.D / self.T

    @property
    def binding_branch(self) -> str:
        """Which condition certified ``D`` (``none`` when D = 0)."""
        if self.D == 0:
            return "none"
        fired = {("both" if a.individual and a.joint else "individual" if a.individual else "joint")
                 for a in self.audit if a.r == self.D}
        return fired.pop() if len(fired) == 1 else "mixed"


def certified_detection_size(cin: CertificationInput) -> CertificationResult:
    """Largest certified ``r`` by a descending scan over ``min(T, e), ..., 1``."""
    res = CertificationResult(0, cin.T, cin.e)
    if not cin.alternatives:
        res.note = "no alternative label"
        return res
    if any(alt.delta <= 0 for alt in cin.alternatives):
        res.note = "no margin"
        return res
    for r in range(min(cin.T, cin.e), 0, -1):
        ok = True
        for alt in cin.alternatives:
            ind = condition_individual(r, cin.d, cin.k, cin.e, cin.T, alt)
            jnt = condition_joint(r, cin.d, cin.k, cin.e, cin.T, alt)
            res.audit.append(ConditionRecord(r, alt.label, ind, jnt))
            if not (ind or jnt):
                ok = False
                break
        if ok:
            res.D = r
            return res
    return res


@dataclass(frozen=True)
class CurveRow:
    sample_id: str
    e: int
    T: int
    D: int
    rate: float
    binding_branch: str


CURVE_COLUMNS = ("sample_id", "e", "T", "D", "rate", "binding_branch")


def certify_sample(
    sample: Sample,
    h: BaseModel,
    cfg: EnsembleConfig,
    beta: float,
    e_grid: Iterable[int],
    T_grid: Iterable[int],
    rule: AblationRule = AblationRule(),
    exact_bounds: bool = False,
) -> list[CurveRow]:
    """Certification rows for one sample; ``e`` and ``T`` are clamped to ``d``."""
    run = run_ensemble(sample.tokens, h, cfg, rule, exact=exact_bounds)
    attr = attribute_run(run)
    bounds = exact_bound_set(attr, run.counts) if exact_bounds else bound_set(attr, run.counts, beta)
    rows = []
    for e in e_grid:
        for T in T_grid:
            ee, TT = min(e, run.d), min(T, run.d)
            cert = certified_detection_size(CertificationInput.from_bounds(bounds, run.k, ee, TT, run.prediction))
            rows.append(CurveRow(sample.id, e, T, cert.D, cert.D / TT, cert.binding_branch))
    return rows


def detection_rate_curve(
    samples: Sequence[Sample],
    h: BaseModel,
    cfg: EnsembleConfig,
    beta: float,
    e_grid: Sequence[int],
    T_grid: Sequence[int],
    rule: AblationRule = AblationRule(),
    exact_bounds: bool = False,
) -> tuple[list[CurveRow], dict[tuple[int, int], float]]:
    """Per-sample rows and the mean certified detection rate per ``(e, T)``.

    Sample ``j`` uses the seed derived from ``(cfg.seed, j)``.
    """
    rows: list[CurveRow] = []
    for j, s in enumerate(samples):
        rows += certify_sample(s, h, cfg.with_seed(derive_seed(cfg.seed, j)), beta, e_grid, T_grid, rule, exact_bounds)
    return rows, mean_rates(rows)


def mean_rates(rows: Iterable[CurveRow]) -> dict[tuple[int, int], float]:
    acc: dict[tuple[int, int], list[float]] = {}
    for row in rows:
        acc.setdefault((row.e, row.T), []).append(row.rate)
    return {key: float(np.mean(v)) for key, v in sorted(acc.items())}


def write_curve_csv(path, rows: Iterable[CurveRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for row in rows:
            w.writerow([row.sample_id, row.e, row.T, row.D, f"{row.rate:.6f}", row.binding_branch])


def synthetic_detection_rate(
    d: int,
    k: int,
    rho: float,
    N: int,
    delta: float,
    beta: float,
    e: int,
    T: int,
    samples: int = 200,
    seed: int = 0,
) -> float:
    """Mean ``D/T`` for binary inputs with simulated vote statistics.

    Each feature's appearance count is ``Binomial(N, 1 - rho)`` and its
    alternative-label votes are ``Binomial(N_i, (1 - delta) / 2)``; ``delta``
    is used directly as the label-probability margin. Draws use common
    uniforms per ``(seed, sample)`` (inverse-CDF coupling) so neighbouring
    grid points see correlated inputs.
    """
    rates = []
    for s in range(samples):
        rng = np.random.default_rng(np.random.SeedSequence([seed, s]))
        u1, u2 = rng.random(d), rng.random(d)
        n_app = binom.ppf(u1, N, 1.0 - rho).astype(np.int64)
        n_alt = binom.ppf(u2, n_app, (1.0 - delta) / 2.0)
        n_alt = np.nan_to_num(n_alt, nan=0.0).astype(np.int64)
        lo, hi, _ = feature_bounds(n_app, n_alt, beta, d)
        alt = AlternativeBounds(2, delta, _sorted_desc(list(hi)), _sorted_desc(list(lo)))
        cert = certified_detection_size(CertificationInput(d, k, min(e, d), min(T, d), 1, (alt,)))
        rates.append(cert.D / min(T, d))
    return float(np.mean(rates))
