"""Faithfulness, key-word precision/recall and dataset-level evaluation reports."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .attribution import attribute_run, top_e
from .bounds import bound_set, exact_bound_set
from .certify import CertificationInput, certified_detection_size
from .core import AblationRule, BaseModel, TokenSequence
from .ensemble import EnsembleConfig, EnsembleRun, derive_seed, run_ensemble


@dataclass(frozen=True)
class FaithfulnessRecord:
    flip: bool
    flagged: bool  # deletion emptied the input
    removed: tuple[int, ...]
    before: int
    after: int | None


def _shortened_config(cfg: EnsembleConfig, d: int, seed: int) -> EnsembleConfig:
    k = None if cfg.k is None else min(cfg.k, d)
    return EnsembleConfig(cfg.rho, k, cfg.N, cfg.tau, seed)


def faithfulness(
    x: TokenSequence,
    h: BaseModel,
    cfg: EnsembleConfig,
    e: int,
    rule: AblationRule = AblationRule(),
    mask_instead: bool = False,
    run: EnsembleRun | None = None,
) -> FaithfulnessRecord:
    """Does removing the top-``e`` features flip the ensemble label?

    Features are deleted (the sequence shortens and ``k`` is recomputed from
    ``rho``); ``mask_instead`` replaces them by the special value. The second
    ensemble re-samples groups with a seed derived from ``cfg.seed``.
    """
    run = run or run_ensemble(x, h, cfg, rule)
    E = top_e(attribute_run(run), min(e, x.d))
    if e >= x.d and not mask_instead:
        return FaithfulnessRecord(True, True, tuple(E), run.prediction, None)
    if mask_instead:
        x2 = TokenSequence(rule.special_value if i in set(E) else t for i, t in enumerate(x.tokens))
    else:
        x2 = x.delete(E)
    cfg2 = _shortened_config(cfg, x2.d, derive_seed(cfg.seed, 1))
    after = run_ensemble(x2, h, cfg2, rule).prediction
    return FaithfulnessRecord(after != run.prediction, False, tuple(E), run.prediction, after)


def keyword_prf(E: Sequence[int], L: Sequence[int]) -> tuple[float, float | None]:
    """``(|E∩L|/|E|, |E∩L|/|L|)``; recall is ``None`` when ``L`` is empty."""
    if not E:
        raise ValueError("the reported set E must be non-empty")
    hit = len(set(E) & set(L))
    return hit / len(E), (hit / len(L) if L else None)


@dataclass
class AttackRecord:
    """One attacked sample: the modified input, its ground truth ``L`` and the ensemble verdict."""

    sample_id: str
    tokens: TokenSequence
    edits: list[int]
    kind: str  # "backdoor" or "adversarial"
    ensemble_label: int
    true_label: int | None = None
    target: int | None = None


def filter_dstar(records: Iterable[AttackRecord]) -> list[AttackRecord]:
    """Samples on which the attack took effect.

    Backdoor: triggered inputs classified into the target class.
    Adversarial: perturbed inputs classified away from the true label.
    """
    kept = []
    for r in records:
        if r.kind == "backdoor":
            if r.target is not None and r.ensemble_label == r.target:
                kept.append(r)
        elif r.kind == "adversarial":
            if r.true_label is not None and r.edits and r.ensemble_label != r.true_label:
                kept.append(r)
        else:
            raise ValueError(f"unknown attack kind {r.kind!r}")
    return kept


@dataclass
class SampleEvaluation:
    sample_id: str
    prediction: int
    in_dstar: bool
    d: int
    faithfulness: dict[int, bool] = field(default_factory=dict)
    faithfulness_flagged: dict[int, bool] = field(default_factory=dict)
    precision: dict[int, float] = field(default_factory=dict)
    recall: dict[int, float] = field(default_factory=dict)
    detection: dict[tuple[int, int], int] = field(default_factory=dict)


@dataclass
class EvaluationReport:
    samples: list[SampleEvaluation]
    config: dict

    def aggregates(self) -> dict:
        out: dict = {"n_test": len(self.samples), "n_dstar": sum(s.in_dstar for s in self.samples)}
        e_vals = sorted({e for s in self.samples for e in s.faithfulness})
        out["faithfulness"] = {
            str(e): _mean([s.faithfulness[e] for s in self.samples if e in s.faithfulness]) for e in e_vals
        }
        star = [s for s in self.samples if s.in_dstar]
        out["precision"] = {str(e): _mean([s.precision[e] for s in star if e in s.precision]) for e in e_vals}
        out["recall"] = {str(e): _mean([s.recall[e] for s in star if e in s.recall]) for e in e_vals}
        keys = sorted({key for s in self.samples for key in s.detection})
        out["detection_rate"] = {
            f"e={e},T={T}": _mean([s.detection[(e, T)] / min(T, s.d) for s in self.samples if (e, T) in s.detection])
            for e, T in keys
        }
        return out

    def to_dict(self) -> dict:
        per = []
        for s in self.samples:
            d = asdict(s)
            for key in ("faithfulness", "faithfulness_flagged", "precision", "recall"):
                d[key] = {str(k): v for k, v in d[key].items()}
            d["detection"] = {f"e={e},T={T}": v for (e, T), v in s.detection.items()}
            per.append(d)
        return {"config": self.config, "aggregates": self.aggregates(), "samples": per}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_rows(self) -> list[list]:
        """One row per (sample, e, T); T is blank when no certification was run."""
        rows = []
        for s in self.samples:
            T_vals = sorted({T for (_, T) in s.detection}) or [None]
            for e in sorted(s.faithfulness):
                for T in T_vals:
                    D = s.detection.get((e, T)) if T is not None else None
                    rows.append([
                        s.sample_id, e, "" if T is None else T, int(s.faithfulness[e]),
                        _fmt(s.precision.get(e)), _fmt(s.recall.get(e)),
                        "" if D is None else D, "" if D is None else f"{D / min(T, s.d):.6f}", int(s.in_dstar),
                    ])
        return rows

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "e", "T", "flip", "precision", "recall", "D", "rate", "in_dstar"])
            w.writerows(self.csv_rows())


def _mean(vals) -> float | None:
    return float(np.mean(vals)) if len(vals) else None


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6f}"


def evaluate_sample(
    sample_id: str,
    x: TokenSequence,
    h: BaseModel,
    cfg: EnsembleConfig,
    e_list: Sequence[int],
    T_list: Sequence[int] = (),
    beta: float = 0.01,
    L: Sequence[int] | None = None,
    in_dstar: bool = True,
    rule: AblationRule = AblationRule(),
    exact_bounds: bool = False,
) -> SampleEvaluation:
    run = run_ensemble(x, h, cfg, rule, exact=exact_bounds)
    attr = attribute_run(run)
    ev = SampleEvaluation(sample_id, run.prediction, in_dstar, x.d)
    for e in e_list:
        f = faithfulness(x, h, cfg, e, rule, run=None if exact_bounds else run)
        ev.faithfulness[e] = f.flip
        ev.faithfulness_flagged[e] = f.flagged
        if L:
            p, r = keyword_prf(top_e(attr, min(e, x.d)), L)
            ev.precision[e] = p
            ev.recall[e] = r
    if T_list:
        bounds = exact_bound_set(attr, run.counts) if exact_bounds else bound_set(attr, run.counts, beta)
        for e in e_list:
            for T in T_list:
                cin = CertificationInput.from_bounds(bounds, run.k, min(e, x.d), min(T, x.d), run.prediction)
                ev.detection[(e, T)] = certified_detection_size(cin).D
    return ev
