import csv
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ensembleshap.attacks import ConstantModel, TriggerBackdoorModel
from ensembleshap.attribution import attribute_run
from ensembleshap.bounds import exact_bound_set
from ensembleshap.certify import (
    AlternativeBounds,
    CertificationInput,
    certified_detection_size,
    certify_sample,
    condition_individual,
    condition_joint,
    detection_rate_curve,
    synthetic_detection_rate,
    unaffected_fraction,
    write_curve_csv,
)
from ensembleshap.core import Sample, TokenSequence
from ensembleshap.ensemble import EnsembleConfig, run_ensemble


def alt(delta, upper, lower):
    srt = lambda v: tuple(sorted(v, reverse=True))
    return AlternativeBounds(2, delta, srt(upper), srt(lower))


def random_input(r, exact=True):
    d = int(r.integers(2, 9))
    k = int(r.integers(1, min(3, d) + 1))
    e = int(r.integers(1, d + 1))
    T = int(r.integers(1, d + 1))
    lo = [Fraction(int(r.integers(0, 40)), 40 * d) for _ in range(d)]
    hi = [v + Fraction(int(r.integers(0, 5)), 40 * d) for v in lo]
    delta = Fraction(int(r.integers(-2, 20)), 20)
    if not exact:
        lo, hi, delta = [float(v) for v in lo], [float(v) for v in hi], float(delta)
    return d, k, e, T, delta, hi, lo


class TestConditions:
    def test_no_margin(self):
        a = alt(0.0, [0.1] * 5, [0.1] * 5)
        for r in (1, 2):
            assert not condition_individual(r, 5, 2, 3, 2, a)
            assert not condition_joint(r, 5, 2, 3, 2, a)

    def test_unaffected_fraction(self):
        assert unaffected_fraction(6, 2, 1, exact=True) == Fraction(4, 15)
        assert unaffected_fraction(6, 3, 4, exact=True) == 0

    def test_individual_monotone_in_T(self):
        d, k = 8, 2
        a = alt(0.9, [0.02] * 7 + [0.1], [0.0] * 7 + [0.1])
        verdicts = [condition_individual(1, d, k, 3, T, a) for T in range(1, d + 1)]
        assert verdicts == sorted(verdicts, reverse=True)  # once false, stays false

    def test_joint_guard(self):
        # 1/(T-r+1) = 1/2 <= (k-1)/(e-r+1) = 2/3
        a = alt(1.0, [0.0] * 6, [0.0] * 6)
        assert not condition_joint(1, 6, 3, 3, 2, a)

    def test_k1_joint_reduces(self):
        d, e, T = 6, 3, 2
        a = alt(0.5, [0.05] * 6, [0.01] * 6)
        r = 1
        tail = sum(sorted(a.lower_sorted)[: T - r + 1])
        expected = 0.5 / 2 * (1 / (T - r + 1)) > np.mean(a.upper_sorted[: e - r + 1]) - tail / (T - r + 1)
        assert condition_joint(r, d, 1, e, T, a) == expected

    def test_r_range(self):
        a = alt(0.5, [0.1] * 4, [0.1] * 4)
        with pytest.raises(ValueError):
            condition_individual(3, 4, 1, 2, 4, a)

    @pytest.mark.parametrize("seed", range(200))
    def test_matches_reference(self, seed):
        d, k, e, T, delta, hi, lo = random_input(np.random.default_rng(seed))
        cin = CertificationInput(d, k, e, T, 1, (alt(delta, hi, lo),))
        assert certified_detection_size(cin).D == oracles.certify_reference(d, k, e, T, delta, hi, lo)

    @pytest.mark.parametrize("seed", range(50))
    def test_float_agrees_with_fraction(self, seed):
        d, k, e, T, delta, hi, lo = random_input(np.random.default_rng(1000 + seed), exact=False)
        ref = oracles.certify_reference(d, k, e, T, Fraction(delta), [Fraction(v) for v in hi], [Fraction(v) for v in lo])
        cin = CertificationInput(d, k, e, T, 1, (alt(delta, hi, lo),))
        got = certified_detection_size(cin).D
        # float round-off may only matter at exact ties
        assert abs(got - ref) <= 1


class TestDetectionSize:
    def test_trigger_k1(self):
        x = TokenSequence(["cf", "a", "b", "c", "d", "e"])
        h = TriggerBackdoorModel(["cf"], 2, ConstantModel(1, 2), 2)
        run = run_ensemble(x, h, EnsembleConfig(k=1), exact=True)
        b = exact_bound_set(attribute_run(run), run.counts)
        cin = CertificationInput.from_bounds(b, 1, 3, 1, run.prediction)
        assert condition_individual(1, 6, 1, 3, 1, cin.alternatives[0])
        res = certified_detection_size(cin)
        assert res.D == 1 and res.rate == 1.0 and res.binding_branch == "both"

    def test_zero(self):
        cin = CertificationInput(4, 1, 2, 2, 1, (alt(0.01, [0.25] * 4, [0.0] * 4),))
        res = certified_detection_size(cin)
        assert res.D == 0 and res.rate == 0.0 and res.binding_branch == "none"

    @given(st.integers(0, 10**6))
    @settings(max_examples=100, deadline=None)
    def test_bounded_by_min_T_e(self, seed):
        d, k, e, T, delta, hi, lo = random_input(np.random.default_rng(seed))
        res = certified_detection_size(CertificationInput(d, k, e, T, 1, (alt(delta, hi, lo),)))
        assert 0 <= res.D <= min(T, e)

    def test_every_alternative_required(self):
        good = alt(0.9, [0.0] * 4, [0.0] * 4)
        bad = AlternativeBounds(3, 0.05, (0.25,) * 4, (0.0,) * 4)
        assert certified_detection_size(CertificationInput(4, 1, 2, 1, 1, (good,))).D == 1
        assert certified_detection_size(CertificationInput(4, 1, 2, 1, 1, (good, bad))).D == 0

    @pytest.mark.parametrize("kw", [dict(e=0), dict(T=5), dict(k=5)])
    def test_input_validation(self, kw):
        args = dict(d=4, k=1, e=1, T=1, target=1, alternatives=())
        args.update(kw)
        with pytest.raises(ValueError):
            CertificationInput(**args)


class TestCurves:
    def test_curve_rows_and_csv(self, tmp_path):
        h = TriggerBackdoorModel(["cf"], 2, ConstantModel(1, 2), 2)
        samples = [Sample(f"s{j}", TokenSequence(["a"] * 10 + ["cf"] * j)) for j in range(3)]
        rows, means = detection_rate_curve(samples, h, EnsembleConfig(rho=0.8, N=500), 0.01, [1, 3], [1, 2])
        assert len(rows) == 12 and set(means) == {(1, 1), (1, 2), (3, 1), (3, 2)}
        write_curve_csv(tmp_path / "c.csv", rows)
        with open(tmp_path / "c.csv") as fh:
            assert len(list(csv.reader(fh))) == 13

    def test_clamps_to_d(self):
        h = ConstantModel(1, 2)
        rows = certify_sample(Sample("s", TokenSequence(["a", "b"])), h, EnsembleConfig(k=1, N=50), 0.01, [5], [9])
        assert rows[0].e == 5 and rows[0].T == 9

    def test_synthetic_margin(self):
        lo = synthetic_detection_rate(50, 5, 0.9, 10_000, 0.2, 0.01, 10, 5, samples=20)
        hi = synthetic_detection_rate(50, 5, 0.9, 10_000, 0.8, 0.01, 10, 5, samples=20)
        assert hi > lo
