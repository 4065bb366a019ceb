from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ensembleshap.attacks import BagHashModel, ConstantModel, RandomHashModel, TriggerBackdoorModel
from ensembleshap.attribution import attribute_exact
from ensembleshap.core import EnumerationTooLargeError, TokenSequence
from ensembleshap.ensemble import exact_label_probability
from ensembleshap.shapley import (
    BaselineValueFunction,
    SubsetValueFunction,
    mask_of,
    permutations_for_budget,
    shapley_exact,
    shapley_permutation_estimate,
)


def tokens(d):
    return TokenSequence([f"w{i}" for i in range(d)])


class TestValueFunction:
    def test_no_trigger_subset(self, trigger3):
        x, h = trigger3
        assert SubsetValueFunction(x, h, 2, 2)(mask_of([1, 2])) == 0.0

    def test_fallback(self, trigger3):
        x, h = trigger3
        vf = SubsetValueFunction(x, h, 2, 2)
        assert vf(mask_of([0])) == 0.5 and vf(0) == 0.5

    def test_full_set(self, trigger3):
        x, h = trigger3
        assert SubsetValueFunction(x, h, 2, 2)(0b111) == exact_label_probability(x, h, 2, 2)

    @pytest.mark.parametrize("seed", range(5))
    def test_all_values_matches_call_and_oracle(self, seed):
        h = RandomHashModel(seed, 3)
        x = tokens(5)
        vf = SubsetValueFunction(x, h, 2, 1)
        table = vf.all_values()
        for S in range(32):
            bits = [i for i in range(5) if S >> i & 1]
            assert table[S] == vf(S)
            assert table[S] == pytest.approx(float(oracles.value(h, x.tokens, 2, 1, bits)), abs=1e-15)

    def test_baseline_counts_queries(self, trigger3):
        x, h = trigger3
        vf = BaselineValueFunction(x, h, 2)
        assert vf(0b001) == 1.0 and vf(0b110) == 0.0 and vf(0b001) == 1.0
        assert vf.queries == 2


class TestExact:
    def test_trigger_instance(self, trigger3):
        x, h = trigger3
        phi = shapley_exact(SubsetValueFunction(x, h, 2, 2)).values
        assert phi.tolist() == pytest.approx([7 / 18, -1 / 9, -1 / 9], abs=1e-15)
        assert oracles.shapley(h, x.tokens, 2, 2) == [Fraction(7, 18), Fraction(-1, 9), Fraction(-1, 9)]
        assert phi.sum() == pytest.approx(Fraction(1, 6), abs=1e-15)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_oracle(self, seed):
        r = np.random.default_rng(100 + seed)
        d = int(r.integers(1, 6))
        k = int(r.integers(1, d + 1))
        C = int(r.integers(2, 4))
        h = RandomHashModel(seed, C)
        x = tokens(d)
        phi = shapley_exact(SubsetValueFunction(x, h, k, 1)).values
        ref = [float(v) for v in oracles.shapley(h, x.tokens, k, 1)]
        assert phi.tolist() == pytest.approx(ref, abs=1e-12)

    @pytest.mark.parametrize("d, k", [(3, 2), (4, 3), (5, 1)])
    def test_constant_boundary_terms(self, d, k):
        # only the |S| = k-1 -> k steps contribute: v jumps from 1/C to 1
        h = ConstantModel(1, 2)
        phi = shapley_exact(SubsetValueFunction(tokens(d), h, k, 1)).values
        ref = [float(v) for v in oracles.shapley(h, tokens(d).tokens, k, 1)]
        assert phi.tolist() == pytest.approx(ref, abs=1e-15)
        assert phi.tolist() == pytest.approx([0.5 / d] * d, abs=1e-15)

    def test_symmetry(self):
        x = TokenSequence(["a", "b", "a", "c"])
        phi = shapley_exact(SubsetValueFunction(x, BagHashModel(9, 2), 2, 1)).values
        assert phi[0] == pytest.approx(phi[2], abs=1e-15)

    def test_cap(self):
        class Big:
            d = 15

        with pytest.raises(EnumerationTooLargeError):
            shapley_exact(Big())

    @given(st.integers(1, 6), st.integers(0, 10**6), st.data())
    @settings(max_examples=30, deadline=None)
    def test_efficiency(self, d, seed, data):
        k = data.draw(st.integers(1, d))
        vf = SubsetValueFunction(tokens(d), RandomHashModel(seed, 2), k, 2)
        assert shapley_exact(vf).values.sum() == pytest.approx(vf((1 << d) - 1) - vf(0), abs=1e-12)


class TestPermutation:
    def test_converges(self, trigger3):
        x, h = trigger3
        vf = SubsetValueFunction(x, h, 2, 2)
        est = shapley_permutation_estimate(vf, 20_000, seed=1).values
        # marginal contributions lie in [-1, 1]; 3 sigma with sigma <= 1/sqrt(P)
        assert np.all(np.abs(est - np.array([7 / 18, -1 / 9, -1 / 9])) < 3 / np.sqrt(20_000))

    def test_single_permutation_telescopes(self):
        vf = SubsetValueFunction(tokens(4), ConstantModel(1, 2), 2, 1)
        est = shapley_permutation_estimate(vf, 1, seed=0).values
        assert est.sum() == pytest.approx(vf(0b1111) - vf(0), abs=1e-15)

    def test_deterministic(self):
        vf = SubsetValueFunction(tokens(5), RandomHashModel(1, 2), 2, 1)
        a = shapley_permutation_estimate(vf, 7, seed=3).values
        b = shapley_permutation_estimate(vf, 7, seed=3).values
        assert np.array_equal(a, b)

    def test_budget(self):
        x = tokens(30)
        h = TriggerBackdoorModel(["w3"], 2)
        vf = BaselineValueFunction(x, h, 2)
        P = permutations_for_budget(1000, 30)
        res = shapley_permutation_estimate(vf, P, seed=0)
        assert P == 33 and res.queries <= 1000

    def test_invalid(self, trigger3):
        x, h = trigger3
        with pytest.raises(ValueError):
            shapley_permutation_estimate(SubsetValueFunction(x, h, 2, 2), 0)


class TestOrderConsistency:
    @pytest.mark.parametrize("seed", range(10))
    def test_alpha_phi_same_order(self, seed):
        r = np.random.default_rng(seed)
        d = int(r.integers(2, 6))
        k = int(r.integers(1, d + 1))
        h = RandomHashModel(seed + 50, 2)
        x = tokens(d)
        a = attribute_exact(x, h, k, target=1).for_label()
        phi = shapley_exact(SubsetValueFunction(x, h, k, 1)).values
        for i in range(d):
            for j in range(d):
                if a[i] > a[j] + 1e-12:
                    assert phi[i] > phi[j] - 1e-12
