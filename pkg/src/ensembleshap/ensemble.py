"""Random-subspace ensemble: group sampling, vote counting and the decision rule."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    AblationRule,
    BaseModel,
    ConfigurationError,
    EnumerationTooLargeError,
    PredictionCache,
    SimplifiedModel,
    TokenSequence,
)

ENUMERATION_CAP = 10**6
# groups per derived RNG stream; stream c covers groups [c*CHUNK, (c+1)*CHUNK)
CHUNK = 1024


def k_from_rho(rho: float, d: int) -> int:
    """Group size for dropping rate ``rho``: round-half-up of ``(1-rho)*d``, at least 1."""
    return max(1, min(d, int(math.floor((1.0 - rho) * d + 0.5))))


@dataclass(frozen=True)
class EnsembleConfig:
    rho: float | None = 0.8
    k: int | None = None
    N: int = 1000
    tau: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.k is None and self.rho is None:
            raise ConfigurationError("either rho or k must be given")
        if self.rho is not None and self.k is None and not 0.0 <= self.rho < 1.0:
            raise ConfigurationError(f"rho must lie in [0, 1), got {self.rho}")
        if self.k is not None and self.k < 1:
            raise ConfigurationError(f"k must be >= 1, got {self.k}")
        if self.N < 1:
            raise ConfigurationError(f"N must be >= 1, got {self.N}")
        if self.tau is not None and not 0.0 < self.tau < 1.0:
            raise ConfigurationError(f"tau must lie in (0, 1), got {self.tau}")

    def group_size(self, d: int) -> int:
        if self.k is not None:
            if self.k > d:
                raise ConfigurationError(f"group size k={self.k} exceeds d={d}")
            return self.k
        return k_from_rho(self.rho, d)

    def with_seed(self, seed: int) -> "EnsembleConfig":
        return EnsembleConfig(self.rho, self.k, self.N, self.tau, seed)


@dataclass
class GroupSampleSet:
    """``N`` feature groups of size ``k`` over ``d`` features, one row per group."""

    groups: np.ndarray
    d: int
    seed: int | None = None
    exact: bool = False
    _membership: np.ndarray | None = field(default=None, repr=False)

    @property
    def N(self) -> int:
        return self.groups.shape[0]

    @property
    def k(self) -> int:
        return self.groups.shape[1]

    @property
    def membership(self) -> np.ndarray:
        """Boolean (N, d) matrix; row j marks the features of group j."""
        if self._membership is None:
            m = np.zeros((self.N, self.d), dtype=bool)
            np.put_along_axis(m, self.groups, True, axis=1)
            self._membership = m
        return self._membership

    @property
    def appearances(self) -> np.ndarray:
        return self.membership.sum(axis=0)

    def __iter__(self):
        return (tuple(int(i) for i in row) for row in self.groups)


def derive_seed(seed: int, *keys: int) -> int:
    """A 63-bit seed derived from ``seed`` and integer ``keys`` (order-independent streams)."""
    state = np.random.SeedSequence([seed & (2**64 - 1), *keys]).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), chunk]))


def sample_groups(d: int, cfg: EnsembleConfig) -> GroupSampleSet:
    """Draw ``cfg.N`` i.i.d. uniform size-k subsets of ``range(d)``."""
    k = cfg.group_size(d)
    out = np.empty((cfg.N, k), dtype=np.int64)
    for c, start in enumerate(range(0, cfg.N, CHUNK)):
        n = min(CHUNK, cfg.N - start)
        keys = _chunk_rng(cfg.seed, c).random((n, d))
        # the k smallest of d i.i.d. uniform keys are a uniform k-subset
        part = np.argpartition(keys, k - 1, axis=1)[:, :k] if k < d else np.tile(np.arange(d), (n, 1))
        out[start:start + n] = np.sort(part, axis=1)
    return GroupSampleSet(out, d, seed=cfg.seed)


def enumerate_groups(d: int, k: int, cap: int = ENUMERATION_CAP) -> GroupSampleSet:
    """All ``C(d, k)`` groups in lexicographic order."""
    if not 1 <= k <= d:
        raise ConfigurationError(f"need 1 <= k <= d, got k={k}, d={d}")
    total = math.comb(d, k)
    if total > cap:
        raise EnumerationTooLargeError(f"C({d},{k}) = {total} groups exceeds cap {cap}; use Monte-Carlo mode")
    groups = np.array(list(itertools.combinations(range(d), k)), dtype=np.int64).reshape(total, k)
    return GroupSampleSet(groups, d, exact=True)


@dataclass(frozen=True)
class LabelCounts:
    counts: np.ndarray  # counts[c-1] = n_c

    @property
    def N(self) -> int:
        return int(self.counts.sum())

    @property
    def num_labels(self) -> int:
        return len(self.counts)

    def __getitem__(self, label: int) -> int:
        return int(self.counts[label - 1])

    def probabilities(self) -> np.ndarray:
        return self.counts / self.counts.sum()


def classify_groups(h: SimplifiedModel, G: GroupSampleSet) -> np.ndarray:
    """Base-model label for every group of ``G`` (the reusable byproduct)."""
    return np.fromiter((h(g) for g in G), dtype=np.int64, count=G.N)


def count_labels(group_labels: np.ndarray, num_labels: int) -> LabelCounts:
    return LabelCounts(np.bincount(group_labels - 1, minlength=num_labels)[:num_labels].astype(np.int64))


def ensemble_counts(
    x: TokenSequence,
    h: BaseModel,
    G: GroupSampleSet,
    rule: AblationRule = AblationRule(),
    cache: PredictionCache | None = None,
) -> tuple[LabelCounts, np.ndarray]:
    """Vote counts ``n_c`` plus the per-group labels that produced them."""
    if G.d != x.d:
        raise ConfigurationError(f"groups were drawn for d={G.d}, input has d={x.d}")
    labels = classify_groups(SimplifiedModel(h, x, rule, cache), G)
    return count_labels(labels, h.num_labels), labels


def ensemble_predict(counts: LabelCounts, tau: float | None = None) -> int:
    """Majority vote (ties go to the smallest label) or the binary threshold rule.

    With ``tau`` the ensemble outputs label 2 iff ``n_2 / N > tau``.
    """
    if tau is not None:
        if counts.num_labels != 2:
            raise ConfigurationError(f"threshold rule needs C = 2, got C = {counts.num_labels}")
        return 2 if counts[2] / counts.N > tau else 1
    return int(np.argmax(counts.counts)) + 1


def exact_label_probability(
    x: TokenSequence,
    h: BaseModel,
    k: int,
    c: int,
    rule: AblationRule = AblationRule(),
    cap: int = ENUMERATION_CAP,
) -> float:
    G = enumerate_groups(x.d, k, cap)
    counts, _ = ensemble_counts(x, h, G, rule)
    return counts[c] / G.N


@dataclass
class EnsembleRun:
    """Everything one ensemble prediction produces, kept for attribution and certification."""

    x: TokenSequence
    groups: GroupSampleSet
    group_labels: np.ndarray
    counts: LabelCounts
    prediction: int

    @property
    def d(self) -> int:
        return self.x.d

    @property
    def k(self) -> int:
        return self.groups.k


def run_ensemble(
    x: TokenSequence,
    h: BaseModel,
    cfg: EnsembleConfig,
    rule: AblationRule = AblationRule(),
    cache: PredictionCache | None = None,
    exact: bool = False,
    cap: int = ENUMERATION_CAP,
) -> EnsembleRun:
    """Sample (or enumerate) groups, classify them and take the ensemble decision."""
    if exact:
        G = enumerate_groups(x.d, cfg.group_size(x.d), cap)
    else:
        G = sample_groups(x.d, cfg)
    counts, labels = ensemble_counts(x, h, G, rule, cache)
    return EnsembleRun(x, G, labels, counts, ensemble_predict(counts, cfg.tau))


def ensemble_label(
    x: TokenSequence,
    h: BaseModel,
    cfg: EnsembleConfig,
    rule: AblationRule = AblationRule(),
    exact: bool = False,
) -> int:
    return run_ensemble(x, h, cfg, rule, exact=exact).prediction


def predictor(h: BaseModel, cfg: EnsembleConfig, rule: AblationRule = AblationRule(), exact: bool = False):
    """Closure ``tokens -> ensemble label`` for attack code."""

    def H(x: TokenSequence | Sequence[str]) -> int:
        if not isinstance(x, TokenSequence):
            x = TokenSequence(x)
        return ensemble_label(x, h, cfg, rule, exact)

    return H
