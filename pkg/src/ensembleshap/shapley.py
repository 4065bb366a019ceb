"""Exact and permutation-sampled Shapley values.

Two value functions are provided. ``SubsetValueFunction`` is the ensemble's
label probability restricted to a feature subset ``S`` (groups of size ``k``
drawn from ``S``; ``1/C`` when ``|S| < k``). ``BaselineValueFunction`` is the
base model's indicator on ``x`` with features outside ``S`` masked, the usual
"baseline Shapley" comparison. Subsets are int bitmasks (bit ``i`` = feature ``i``).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import (
    AblationRule,
    BaseModel,
    ConfigurationError,
    EnumerationTooLargeError,
    SimplifiedModel,
    TokenSequence,
)
from .ensemble import ENUMERATION_CAP

EXACT_D_CAP = 14


def mask_of(indices) -> int:
    m = 0
    for i in indices:
        m |= 1 << int(i)
    return m


class SubsetValueFunction:
    """``v(S) = p_target(S, h, k)`` with exact enumeration over size-k subsets of ``S``."""

    def __init__(
        self,
        x: TokenSequence,
        h: BaseModel,
        k: int,
        target: int,
        rule: AblationRule = AblationRule(),
        cap: int = ENUMERATION_CAP,
    ):
        if not 1 <= k <= x.d:
            raise ConfigurationError(f"need 1 <= k <= d, got k={k}, d={x.d}")
        total = math.comb(x.d, k)
        if total > cap:
            raise EnumerationTooLargeError(f"C({x.d},{k}) = {total} groups exceeds cap {cap}")
        self.x, self.h, self.k, self.target, self.rule = x, h, k, target, rule
        self.d = x.d
        self.num_labels = h.num_labels
        hz = SimplifiedModel(h, x, rule)
        combos = list(itertools.combinations(range(self.d), k))
        self._group_masks = np.array([mask_of(g) for g in combos], dtype=np.int64)
        self._hits = np.array([hz(g) == target for g in combos], dtype=bool)
        self.queries = len(combos)
        self._memo: dict[int, float] = {}

    def __call__(self, S: int) -> float:
        v = self._memo.get(S)
        if v is None:
            if S.bit_count() < self.k:
                v = 1.0 / self.num_labels
            else:
                inside = (self._group_masks & ~S) == 0
                v = float(self._hits[inside].sum()) / float(inside.sum())
            self._memo[S] = v
        return v

    def all_values(self) -> np.ndarray:
        """``v`` on every subset, indexed by bitmask."""
        n = 1 << self.d
        masks = np.arange(n, dtype=np.int64)
        sizes = np.array([int(m).bit_count() for m in range(n)])
        out = np.full(n, 1.0 / self.num_labels)
        big = sizes >= self.k
        # groups inside S: accumulate hit/total counts per mask
        num = np.zeros(n)
        den = np.zeros(n)
        for gm, hit in zip(self._group_masks, self._hits):
            inside = (masks & gm) == gm
            den[inside] += 1.0
            if hit:
                num[inside] += 1.0
        out[big] = num[big] / den[big]
        return out


class BaselineValueFunction:
    """``v(S) = 1[f(ABLATE(x, S)) = target]`` on the base model, queries counted."""

    def __init__(self, x: TokenSequence, h: BaseModel, target: int, rule: AblationRule = AblationRule()):
        self.x, self.h, self.target, self.rule = x, h, target, rule
        self.d = x.d
        self.num_labels = h.num_labels
        self.queries = 0
        self._memo: dict[int, float] = {}

    def __call__(self, S: int) -> float:
        v = self._memo.get(S)
        if v is None:
            mask = self.rule.special_value
            toks = tuple(t if (S >> i) & 1 else mask for i, t in enumerate(self.x.tokens))
            self.queries += 1
            v = 1.0 if self.h.classify(toks) == self.target else 0.0
            self._memo[S] = v
        return v


@dataclass(frozen=True)
class ShapleyResult:
    values: np.ndarray
    exact: bool
    permutations: int = 0
    queries: int = 0

    def __getitem__(self, i: int) -> float:
        return float(self.values[i])


def shapley_exact(vf, d_cap: int = EXACT_D_CAP) -> ShapleyResult:
    """Shapley values by enumerating all ``2^d`` coalitions."""
    d = vf.d
    if d > d_cap:
        raise EnumerationTooLargeError(f"exact Shapley limited to d <= {d_cap}, got d={d}")
    n = 1 << d
    if hasattr(vf, "all_values"):
        v = vf.all_values()
    else:
        v = np.array([vf(S) for S in range(n)])
    masks = np.arange(n, dtype=np.int64)
    sizes = np.array([int(m).bit_count() for m in range(n)])
    fact = [math.factorial(m) for m in range(d + 1)]
    weight = np.array([fact[s] * fact[d - s - 1] / fact[d] if s < d else 0.0 for s in range(d + 1)])
    phi = np.empty(d)
    for i in range(d):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        phi[i] = np.sum(weight[sizes[without]] * (v[without | bit] - v[without]))
    return ShapleyResult(phi, exact=True, queries=getattr(vf, "queries", 0))


def shapley_permutation_estimate(vf, permutations: int, seed: int = 0) -> ShapleyResult:
    """Average marginal contributions along uniformly random feature orderings."""
    if permutations < 1:
        raise ValueError("permutations must be >= 1")
    d = vf.d
    rng = np.random.default_rng(seed)
    phi = np.zeros(d)
    start = getattr(vf, "queries", 0)
    empty = vf(0)
    for _ in range(permutations):
        S, prev = 0, empty
        for i in rng.permutation(d):
            S |= 1 << int(i)
            cur = vf(S)
            phi[i] += cur - prev
            prev = cur
    return ShapleyResult(phi / permutations, exact=False, permutations=permutations,
                         queries=getattr(vf, "queries", 0) - start)


def permutations_for_budget(N: int, d: int) -> int:
    """Permutations affordable with ``N`` base-model queries (one shared empty query, ``d`` per ordering)."""
    return max(1, (N - 1) // d)
