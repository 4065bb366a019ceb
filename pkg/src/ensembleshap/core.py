"""Shared domain types: token sequences, feature groups, ablation and base models.

Feature indices are 0-based everywhere in this package. Labels are 1-based
integers in ``1..C`` to match the usual reporting convention.
"""

from __future__ import annotations

import hashlib
import json
import struct
import threading
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Protocol, Sequence, runtime_checkable

DEFAULT_MASK = "[MASK]"

CACHE_FORMAT = "ensembleshap-prediction-cache"
CACHE_VERSION = 1


class InvalidGroupError(ValueError):
    """A feature group does not address a valid subset of the sequence."""


class ClassificationError(RuntimeError):
    """The base model failed or returned an out-of-range label."""


class ConfigurationError(ValueError):
    """Parameters violate a precondition (k > d, tau with C != 2, ...)."""


class EnumerationTooLargeError(RuntimeError):
    """Exact enumeration would exceed the configured cap; use Monte-Carlo mode."""


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]

    def __init__(self, tokens: Iterable[str]):
        toks = tuple(str(t) for t in tokens)
        if not toks:
            raise ValueError("a token sequence needs at least one feature")
        object.__setattr__(self, "tokens", toks)

    @classmethod
    def from_text(cls, text: str) -> "TokenSequence":
        return cls(text.split())

    @property
    def d(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, i: int) -> str:
        return self.tokens[i]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tokens)

    def digest(self) -> str:
        return sequence_digest(self.tokens)

    def delete(self, indices: Iterable[int]) -> "TokenSequence":
        """Remove the given positions (shortens the sequence)."""
        drop = set(indices)
        return TokenSequence(t for i, t in enumerate(self.tokens) if i not in drop)


def sequence_digest(tokens: Sequence[str]) -> str:
    """Stable SHA-256 hex digest of a token list.

    Byte layout: a 4-byte big-endian token count, then for every token a
    4-byte big-endian UTF-8 length followed by the UTF-8 bytes.
    """
    h = hashlib.sha256()
    h.update(struct.pack(">I", len(tokens)))
    for t in tokens:
        b = t.encode("utf-8")
        h.update(struct.pack(">I", len(b)))
        h.update(b)
    return h.hexdigest()


@dataclass(frozen=True)
class FeatureGroup:
    indices: tuple[int, ...]

    def __init__(self, indices: Iterable[int]):
        idx = tuple(int(i) for i in indices)
        if not idx:
            raise InvalidGroupError("a feature group needs at least one index")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            srt = tuple(sorted(set(idx)))
            if len(srt) != len(idx):
                raise InvalidGroupError(f"duplicate indices in group {idx}")
            idx = srt
        if idx[0] < 0:
            raise InvalidGroupError(f"negative index in group {idx}")
        object.__setattr__(self, "indices", idx)

    @property
    def k(self) -> int:
        return len(self.indices)

    def __contains__(self, i: int) -> bool:
        return i in self.indices

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices)

    def validate(self, d: int) -> None:
        if self.indices[-1] >= d:
            raise InvalidGroupError(f"index {self.indices[-1]} out of range for d={d}")


@dataclass(frozen=True)
class AblationRule:
    special_value: str = DEFAULT_MASK


def ablate(x: TokenSequence, z: FeatureGroup | Sequence[int], rule: AblationRule = AblationRule()) -> TokenSequence:
    """Keep features in ``z`` and replace every other position by the special value."""
    if not isinstance(z, FeatureGroup):
        z = FeatureGroup(z)
    z.validate(x.d)
    keep = set(z.indices)
    mask = rule.special_value
    return TokenSequence(t if i in keep else mask for i, t in enumerate(x.tokens))


def check_special_value(x: TokenSequence, rule: AblationRule) -> bool:
    """Warn and return False when the mask token already occurs in ``x``."""
    if rule.special_value in x.tokens:
        warnings.warn(
            f"special value {rule.special_value!r} occurs in the input; ablation is ambiguous",
            stacklevel=2,
        )
        return False
    return True


@runtime_checkable
class BaseModel(Protocol):
    """A deterministic classifier over (possibly masked) token sequences."""

    num_labels: int

    def classify(self, tokens: tuple[str, ...]) -> int: ...


class PredictionCache:
    """Memo of base-model labels keyed by (input digest, group indices).

    Lookups are lock-free; inserts take a lock so concurrent workers can share
    one cache.
    """

    def __init__(self):
        self._table: dict[tuple[str, tuple[int, ...]], int] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._table)

    def get(self, digest: str, group: tuple[int, ...]) -> int | None:
        label = self._table.get((digest, group))
        if label is None:
            self.misses += 1
        else:
            self.hits += 1
        return label

    def put(self, digest: str, group: tuple[int, ...], label: int) -> None:
        with self._lock:
            self._table.setdefault((digest, group), label)

    def save(self, path: str | Path) -> None:
        """Write as JSONL: a header line, then one ``{"x", "z", "y"}`` record per entry."""
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            fh.write(json.dumps({"format": CACHE_FORMAT, "version": CACHE_VERSION}) + "\n")
            for (dig, grp), label in sorted(self._table.items()):
                fh.write(json.dumps({"x": dig, "z": list(grp), "y": label}) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PredictionCache":
        cache = cls()
        with Path(path).open(encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != CACHE_FORMAT or header.get("version") != CACHE_VERSION:
                raise ValueError(f"unsupported cache file header: {header}")
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    cache._table[(rec["x"], tuple(rec["z"]))] = int(rec["y"])
        return cache


def _checked_label(label: int, num_labels: int) -> int:
    label = int(label)
    if not 1 <= label <= num_labels:
        raise ClassificationError(f"base model returned label {label}, expected 1..{num_labels}")
    return label


@dataclass
class SimplifiedModel:
    """``h(z) = f(ABLATE(x, z))`` bound to one input ``x``."""

    model: BaseModel
    x: TokenSequence
    rule: AblationRule = field(default_factory=AblationRule)
    cache: PredictionCache | None = None

    def __post_init__(self):
        self._digest = self.x.digest()

    @property
    def num_labels(self) -> int:
        return self.model.num_labels

    @property
    def d(self) -> int:
        return self.x.d

    def __call__(self, z: FeatureGroup | Sequence[int]) -> int:
        grp = z.indices if isinstance(z, FeatureGroup) else tuple(z)
        if self.cache is not None:
            hit = self.cache.get(self._digest, grp)
            if hit is not None:
                return hit
        masked = ablate(self.x, FeatureGroup(grp), self.rule)
        try:
            label = self.model.classify(masked.tokens)
        except ClassificationError:
            raise
        except Exception as exc:
            raise ClassificationError(f"base model failed on group {grp}") from exc
        label = _checked_label(label, self.model.num_labels)
        if self.cache is not None:
            self.cache.put(self._digest, grp, label)
        return label


def simplified_model(
    h: BaseModel,
    x: TokenSequence,
    rule: AblationRule,
    z: FeatureGroup | Sequence[int],
    cache: PredictionCache | None = None,
) -> int:
    return SimplifiedModel(h, x, rule, cache)(z)


@dataclass(frozen=True)
class Sample:
    id: str
    tokens: TokenSequence
    label: int | None = None


def read_dataset(path: str | Path, rule: AblationRule = AblationRule()) -> list[Sample]:
    """Read JSONL records ``{"id": str, "tokens": [str], "label": int}``.

    A record may carry ``"text"`` instead of ``"tokens"``; it is whitespace split.
    """
    samples = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "tokens" in rec:
                x = TokenSequence(rec["tokens"])
            elif "text" in rec:
                x = TokenSequence.from_text(rec["text"])
            else:
                raise ValueError(f"{path}:{lineno}: record has neither 'tokens' nor 'text'")
            check_special_value(x, rule)
            label = rec.get("label")
            samples.append(Sample(str(rec.get("id", lineno)), x, None if label is None else int(label)))
    return samples


def write_dataset(path: str | Path, samples: Iterable[Sample]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in samples:
            rec = {"id": s.id, "tokens": list(s.tokens.tokens)}
            if s.label is not None:
                rec["label"] = s.label
            fh.write(json.dumps(rec) + "\n")
