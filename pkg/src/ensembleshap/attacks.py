"""Synthetic base classifiers, empirical attacks and the worst-case group adversary."""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .core import (
    DEFAULT_MASK,
    AblationRule,
    BaseModel,
    ConfigurationError,
    EnumerationTooLargeError,
    SimplifiedModel,
    TokenSequence,
)
from .ensemble import enumerate_groups

ADVERSARY_CAP = 1 << 22


# ---------------------------------------------------------------- models


@dataclass(frozen=True)
class ConstantModel:
    label: int = 1
    num_labels: int = 2

    def classify(self, tokens) -> int:
        return self.label


@dataclass(frozen=True)
class KeywordVoteModel:
    """Linear bag-of-words vote: ``score_c = bias_c + sum of keyword weights``.

    Tokens without a weight (including the mask) contribute nothing; the
    argmax with ties to the smallest label is returned.
    """

    weights: Mapping[str, Sequence[float]]
    num_labels: int = 2
    bias: Sequence[float] | None = None

    def scores(self, tokens) -> np.ndarray:
        s = np.zeros(self.num_labels) if self.bias is None else np.array(self.bias, dtype=float)
        for t in tokens:
            w = self.weights.get(t)
            if w is not None:
                s = s + np.asarray(w, dtype=float)
        return s

    def classify(self, tokens) -> int:
        return int(np.argmax(self.scores(tokens))) + 1


@dataclass(frozen=True)
class TriggerBackdoorModel:
    """Predicts ``target`` whenever at least one trigger token survives, else defers to ``clean``."""

    triggers: frozenset
    target: int
    clean: BaseModel
    num_labels: int = 2

    def __init__(self, triggers, target: int, clean: BaseModel | None = None, num_labels: int | None = None):
        clean = clean if clean is not None else ConstantModel(1, num_labels or 2)
        object.__setattr__(self, "triggers", frozenset(triggers))
        object.__setattr__(self, "target", int(target))
        object.__setattr__(self, "clean", clean)
        object.__setattr__(self, "num_labels", num_labels or clean.num_labels)

    def classify(self, tokens) -> int:
        if any(t in self.triggers for t in tokens):
            return self.target
        return self.clean.classify(tokens)

    def scores(self, tokens) -> np.ndarray:
        if any(t in self.triggers for t in tokens):
            s = np.zeros(self.num_labels)
            s[self.target - 1] = 1e6
            return s
        if hasattr(self.clean, "scores"):
            return self.clean.scores(tokens)
        s = np.zeros(self.num_labels)
        s[self.clean.classify(tokens) - 1] = 1.0
        return s


def _hash_label(seed: int, payload: bytes, num_labels: int) -> int:
    h = hashlib.blake2b(payload, digest_size=8, key=seed.to_bytes(8, "big", signed=False))
    return 1 + int.from_bytes(h.digest(), "big") % num_labels


@dataclass(frozen=True)
class RandomHashModel:
    """Pseudo-random but deterministic labels from a keyed hash of the whole masked input."""

    seed: int = 0
    num_labels: int = 2

    def classify(self, tokens) -> int:
        return _hash_label(self.seed, "\x1f".join(tokens).encode("utf-8"), self.num_labels)


@dataclass(frozen=True)
class BagHashModel:
    """Keyed hash of the sorted multiset of surviving tokens.

    Position-free, so two features carrying the same token are interchangeable.
    """

    seed: int = 0
    num_labels: int = 2
    mask: str = DEFAULT_MASK

    def classify(self, tokens) -> int:
        bag = sorted(t for t in tokens if t != self.mask)
        return _hash_label(self.seed, "\x1f".join(bag).encode("utf-8"), self.num_labels)


def build_model(spec: Mapping) -> BaseModel:
    """Model from a JSON-style spec, e.g. ``{"kind": "trigger-backdoor", "triggers": ["cf"], ...}``."""
    kind = spec.get("kind")
    C = int(spec.get("num_labels", 2))
    if kind == "constant":
        return ConstantModel(int(spec.get("label", 1)), C)
    if kind == "keyword-vote":
        weights = {t: tuple(float(v) for v in w) for t, w in spec["weights"].items()}
        bias = spec.get("bias")
        return KeywordVoteModel(weights, C, None if bias is None else tuple(float(b) for b in bias))
    if kind == "trigger-backdoor":
        clean = build_model(spec["clean"]) if "clean" in spec else ConstantModel(1, C)
        return TriggerBackdoorModel(spec.get("triggers", ["cf"]), int(spec.get("target", 2)), clean, C)
    if kind == "random-hash":
        return RandomHashModel(int(spec.get("seed", 0)), C)
    if kind == "bag-hash":
        return BagHashModel(int(spec.get("seed", 0)), C)
    raise ConfigurationError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------- attacks


@dataclass
class AttackOutcome:
    x: TokenSequence
    edits: list[int]  # ground-truth set L(x): edited / inserted positions in the attacked sequence
    success: bool
    kind: str
    original_label: int | None = None
    final_label: int | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "success": self.success,
            "tokens": list(self.x.tokens),
            "edits": self.edits,
            "original_label": self.original_label,
            "final_label": self.final_label,
        }


def insert_triggers(
    x: TokenSequence, triggers: Sequence[str], count: int, seed: int = 0
) -> tuple[TokenSequence, list[int]]:
    """Insert ``count`` trigger tokens at seeded random positions.

    Triggers are used round-robin. Returns the new sequence and the trigger
    positions in it.
    """
    if count <= 0:
        return x, []
    triggers = list(triggers)
    if not triggers:
        raise ValueError("need at least one trigger token")
    rng = np.random.default_rng(seed)
    n = x.d + count
    pos = sorted(int(p) for p in rng.choice(n, size=count, replace=False))
    out, src, t = [], iter(x.tokens), 0
    for i in range(n):
        if t < count and pos[t] == i:
            out.append(triggers[t % len(triggers)])
            t += 1
        else:
            out.append(next(src))
    return TokenSequence(out), pos


def _label_score(model: BaseModel, tokens, label: int) -> float:
    """Margin of ``label`` over the best other label (label-only models: +1 / -1)."""
    if hasattr(model, "scores"):
        s = np.asarray(model.scores(tokens), dtype=float)
        other = np.delete(s, label - 1)
        return float(s[label - 1] - (other.max() if other.size else 0.0))
    return 1.0 if model.classify(tokens) == label else -1.0


def leave_one_out_ranking(model: BaseModel, x: TokenSequence, label: int) -> list[int]:
    """Positions by how much deleting each one lowers ``label``'s margin; ties left to right."""
    base = _label_score(model, x.tokens, label)
    drops = [base - _label_score(model, x.delete([i]).tokens, label) for i in range(x.d)]
    return sorted(range(x.d), key=lambda i: (-drops[i], i))


def greedy_substitute(
    x: TokenSequence,
    H: Callable[[TokenSequence], int],
    base_model: BaseModel,
    synonyms: Mapping[str, Sequence[str]],
    max_T: int,
    target: int | None = None,
) -> AttackOutcome:
    """Substitute words (most important first, by leave-one-out on the base model)
    until the ensemble ``H`` changes its label (or reaches ``target``).
    """
    y0 = H(x)
    done = (lambda y: y == target) if target is not None else (lambda y: y != y0)
    if target is not None and y0 == target:
        return AttackOutcome(x, [], True, "greedy-substitute", y0, y0)
    cands = [i for i in leave_one_out_ranking(base_model, x, y0) if synonyms.get(x[i])]
    toks = list(x.tokens)
    edits: list[int] = []
    y = y0
    for i in cands:
        if len(edits) >= max_T:
            break
        # substitute that most lowers the original label's margin on the base model
        best = min(synonyms[toks[i]], key=lambda s: _label_score(base_model, toks[:i] + [s] + toks[i + 1:], y0))
        toks[i] = best
        edits.append(i)
        y = H(TokenSequence(toks))
        if done(y):
            return AttackOutcome(TokenSequence(toks), sorted(edits), True, "greedy-substitute", y0, y)
    return AttackOutcome(TokenSequence(toks), sorted(edits), False, "greedy-substitute", y0, y)


def load_synonyms(path: str | Path) -> dict[str, list[str]]:
    with Path(path).open(encoding="utf-8") as fh:
        data = json.load(fh)
    return {str(k): [str(v) for v in vs] for k, vs in data.items()}


# ---------------------------------------------------------------- worst-case adversary


@dataclass
class GroupTable:
    """All ``C(d, k)`` groups of an input with their clean base-model labels."""

    groups: np.ndarray  # (G, k)
    labels: np.ndarray  # (G,)
    d: int
    num_labels: int
    member: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.member = np.zeros((len(self.groups), self.d), dtype=bool)
        np.put_along_axis(self.member, self.groups, True, axis=1)

    @classmethod
    def build(cls, x: TokenSequence, h: BaseModel, k: int, rule: AblationRule = AblationRule()) -> "GroupTable":
        G = enumerate_groups(x.d, k)
        hz = SimplifiedModel(h, x, rule)
        labels = np.array([hz(g) for g in G], dtype=np.int64)
        return cls(G.groups, labels, x.d, h.num_labels)

    def hitting(self, M: Sequence[int]) -> np.ndarray:
        if not len(M):
            return np.zeros(0, dtype=np.int64)
        return np.flatnonzero(self.member[:, list(M)].any(axis=1))


def worst_case_group_adversary(
    table: GroupTable, T: int, cap: int = ADVERSARY_CAP
) -> Iterator[tuple[tuple[int, ...], dict[int, int]]]:
    """Every ``(M, relabeling)`` with ``|M| <= T``; groups meeting ``M`` take arbitrary labels.

    A relabeling maps group row index to its new label. Yields lazily.
    """
    total = count_worst_case_attacks(table, T)
    if total > cap:
        raise EnumerationTooLargeError(f"{total} attacks exceed adversary cap {cap}")
    C = table.num_labels
    for size in range(T + 1):
        for M in itertools.combinations(range(table.d), size):
            hit = table.hitting(M).tolist()
            for labels in itertools.product(range(1, C + 1), repeat=len(hit)):
                yield M, dict(zip(hit, labels))


def count_worst_case_attacks(table: GroupTable, T: int) -> int:
    total = 0
    for size in range(T + 1):
        for M in itertools.combinations(range(table.d), size):
            total += table.num_labels ** len(table.hitting(M))
    return total


def _argmax_smallest(counts: np.ndarray) -> np.ndarray:
    return np.argmax(counts, axis=1) + 1


def min_detection_for(
    table: GroupTable, M: Sequence[int], target: int, e: int, chunk: int = 1 << 15, cap: int = ADVERSARY_CAP
) -> int | None:
    """Smallest ``|M ∩ top_e(after)|`` over relabelings of groups meeting ``M`` that flip the
    majority label away from ``target``; ``None`` when no relabeling flips it.

    After the attack the explanation is taken for the new majority label.
    Vectorized over relabelings.
    """
    C, d = table.num_labels, table.d
    hit = table.hitting(M)
    g = len(hit)
    if C ** g > cap:
        raise EnumerationTooLargeError(f"{C}^{g} relabelings exceed cap {cap}")
    keep = np.ones(len(table.labels), dtype=bool)
    keep[hit] = False
    fixed_counts = np.bincount(table.labels[keep] - 1, minlength=C)[:C]
    fixed_feat = np.stack([(table.member[keep] & (table.labels[keep] == c)[:, None]).sum(axis=0)
                           for c in range(1, C + 1)], axis=1)  # (d, C)
    member_hit = table.member[hit].astype(np.int64)  # (g, d)
    in_M = np.zeros(d, dtype=bool)
    in_M[list(M)] = True
    # tie-break key: larger is better, equal counts prefer the smaller index
    tiebreak = (d - 1 - np.arange(d))
    best: int | None = None
    total = C ** g
    powers = C ** np.arange(g, dtype=np.int64)
    for start in range(0, total, chunk):
        codes = np.arange(start, min(total, start + chunk), dtype=np.int64)
        digits = (codes[:, None] // powers[None, :]) % C + 1  # (n, g) labels
        counts = fixed_counts[None, :] + np.stack([(digits == c).sum(axis=1) for c in range(1, C + 1)], axis=1)
        pred = _argmax_smallest(counts)
        flip = pred != target
        if not flip.any():
            continue
        digits, pred = digits[flip], pred[flip]
        feat = np.empty((len(pred), d), dtype=np.int64)
        for c in range(1, C + 1):
            sel = pred == c
            if sel.any():
                feat[sel] = (digits[sel] == c).astype(np.int64) @ member_hit + fixed_feat[:, c - 1][None, :]
        key = feat * d + tiebreak[None, :]
        top = np.argpartition(-key, e - 1, axis=1)[:, :e] if e < d else np.tile(np.arange(d), (len(pred), 1))
        caught = in_M[top].sum(axis=1)
        m = int(caught.min())
        best = m if best is None else min(best, m)
        if best == 0:
            break
    return best


def worst_case_detection(
    table: GroupTable, target: int, e: int, T: int, cap: int = ADVERSARY_CAP
) -> tuple[int | None, tuple[int, ...] | None]:
    """Minimum detection over every ``M`` with ``1 <= |M| <= T`` and the ``M`` attaining it."""
    best, arg = None, None
    for size in range(1, T + 1):
        for M in itertools.combinations(range(table.d), size):
            m = min_detection_for(table, M, target, e, cap=cap)
            if m is not None and (best is None or m < best):
                best, arg = m, M
    return best, arg
