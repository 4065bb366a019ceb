"""EnsembleSHAP importance scores computed from the ensemble's own group votes.

The score of feature ``i`` for label ``c`` is ``(1/d) * Pr(h(z) = c | i in z)``.
In Monte-Carlo mode the conditional probability is estimated by the fraction
of sampled groups containing ``i`` that voted ``c`` (frequency-normalized).
No extra base-model queries are made.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import AblationRule, BaseModel, ConfigurationError, TokenSequence
from .ensemble import (
    ENUMERATION_CAP,
    EnsembleRun,
    GroupSampleSet,
    enumerate_groups,
    ensemble_counts,
    ensemble_predict,
)


@dataclass(frozen=True)
class AttributionResult:
    scores: np.ndarray  # (d, C); scores[i, c-1] = alpha_i^c
    appearances: np.ndarray  # (d,) N_i
    successes: np.ndarray  # (d, C) n_hat_i^c
    target: int
    exact: bool

    @property
    def d(self) -> int:
        return self.scores.shape[0]

    @property
    def num_labels(self) -> int:
        return self.scores.shape[1]

    @property
    def mode(self) -> str:
        return "exact" if self.exact else "monte-carlo"

    @property
    def zero_appearance(self) -> np.ndarray:
        return self.appearances == 0

    def for_label(self, c: int | None = None) -> np.ndarray:
        return self.scores[:, (self.target if c is None else c) - 1]

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "mode": self.mode,
            "scores": [float(v) for v in self.for_label()],
            "appearances": [int(v) for v in self.appearances],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def attribution_from_votes(
    G: GroupSampleSet, group_labels: np.ndarray, num_labels: int, target: int
) -> AttributionResult:
    """Frequency-normalized scores for every label from (groups, group labels)."""
    group_labels = np.asarray(group_labels)
    if group_labels.shape[0] != G.N:
        raise ValueError(f"{group_labels.shape[0]} labels for {G.N} groups")
    if not 1 <= target <= num_labels:
        raise ValueError(f"target {target} outside 1..{num_labels}")
    member = G.membership.astype(np.int64)
    onehot = np.zeros((G.N, num_labels), dtype=np.int64)
    onehot[np.arange(G.N), group_labels - 1] = 1
    successes = member.T @ onehot
    appearances = member.sum(axis=0)
    denom = G.d * appearances
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = np.where(appearances[:, None] > 0, successes / np.maximum(denom, 1)[:, None], 0.0)
    return AttributionResult(scores, appearances, successes, target, G.exact)


def attribute_run(run: EnsembleRun, target: int | None = None) -> AttributionResult:
    """Attribute the ensemble decision of ``run`` (or another label) from its byproducts."""
    return attribution_from_votes(
        run.groups, run.group_labels, run.counts.num_labels, run.prediction if target is None else target
    )


def attribute_mc(
    x: TokenSequence, h: BaseModel, G: GroupSampleSet, group_labels: np.ndarray, target: int
) -> AttributionResult:
    if G.d != x.d:
        raise ConfigurationError(f"groups were drawn for d={G.d}, input has d={x.d}")
    return attribution_from_votes(G, group_labels, h.num_labels, target)


def attribute_exact(
    x: TokenSequence,
    h: BaseModel,
    k: int,
    target: int | None = None,
    rule: AblationRule = AblationRule(),
    cap: int = ENUMERATION_CAP,
) -> AttributionResult:
    """Scores by full enumeration of the ``C(d, k)`` groups.

    ``target`` defaults to the exact ensemble's majority label.
    """
    if k > x.d:
        raise ConfigurationError(f"group size k={k} exceeds d={x.d}")
    G = enumerate_groups(x.d, k, cap)
    counts, labels = ensemble_counts(x, h, G, rule)
    if target is None:
        target = ensemble_predict(counts)
    res = attribution_from_votes(G, labels, h.num_labels, target)
    assert np.all(res.appearances == math.comb(x.d - 1, k - 1))
    return res


def unnormalized_scores(G: GroupSampleSet, group_labels: np.ndarray, target: int) -> np.ndarray:
    """The plain estimator ``(1/(kN)) * sum_j 1[i in z_j] 1[h(z_j) = target]``."""
    hit = G.membership & (np.asarray(group_labels) == target)[:, None]
    return hit.sum(axis=0) / (G.k * G.N)


def top_e(scores, e: int) -> list[int]:
    """Indices of the ``e`` largest scores; ties go to the smaller index."""
    if isinstance(scores, AttributionResult):
        scores = scores.for_label()
    scores = np.asarray(scores, dtype=float)
    d = scores.shape[0]
    if not 1 <= e <= d:
        raise ValueError(f"e must lie in 1..{d}, got {e}")
    order = np.lexsort((np.arange(d), -scores))
    return [int(i) for i in order[:e]]
