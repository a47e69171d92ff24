import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from skintrack.exceptions import AllDifferencesZero, ZeroBaselineMean, ZeroVariance, ZeroVarianceDifferences
from skintrack.stats import (
    PairedSamples,
    TestKind,
    TestResult,
    mse,
    paired_compare,
    paired_t_test,
    pearson,
    percent_variation,
    shapiro_wilk,
    wilcoxon_signed_rank,
)

# weights of 11 men, the worked example of the original Shapiro-Wilk article
MEN_WEIGHTS = [148, 154, 158, 160, 161, 162, 166, 170, 182, 195, 236]


def from_diffs(d):
    d = np.asarray(d, dtype=float)
    return PairedSamples(np.zeros(d.size), d)


def brute_wilcoxon_p(d):
    """Two-sided exact p by listing every sign assignment of the ranked magnitudes."""
    d = np.asarray(d, float)
    d = d[d != 0]
    ranks = sps.rankdata(np.abs(d))
    w = ranks[d > 0].sum()
    sums = [sum(r for r, s in zip(ranks, signs) if s) for signs in itertools.product((0, 1), repeat=d.size)]
    sums = np.array(sums)
    lower = np.mean(sums <= w + 1e-9)
    upper = np.mean(sums >= w - 1e-9)
    return min(1.0, 2 * min(lower, upper))


def samples_with_p(p_target, n=12):
    """Gaussian-shaped differences (normal scores) whose paired t p-value is ``p_target``."""
    z = sps.norm.ppf((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    z = (z - z.mean()) / z.std(ddof=1)
    t = sps.t.isf(p_target / 2, n - 1)
    return from_diffs(t / math.sqrt(n) + z)


class TestShapiroWilk:
    def test_symmetric_three(self):
        w, p = shapiro_wilk([-1, 0, 1])
        assert w == pytest.approx(1.0, abs=1e-12) and p == pytest.approx(1.0, abs=1e-9)

    def test_men_weights(self):
        w, p = shapiro_wilk(MEN_WEIGHTS)
        assert w == pytest.approx(0.788815, abs=1e-3)
        assert p == pytest.approx(0.0067038, abs=1e-3)

    @pytest.mark.parametrize("n", [3, 4, 5, 7, 11, 12, 20, 50, 200, 1000])
    def test_against_reference_implementation(self, n):
        rng = np.random.default_rng(n)
        for x in (rng.normal(size=n), rng.exponential(size=n), rng.uniform(size=n)):
            w, p = shapiro_wilk(x)
            ref = sps.shapiro(x)
            assert w == pytest.approx(ref.statistic, abs=1e-3)
            assert p == pytest.approx(ref.pvalue, abs=1e-3)

    def test_constant(self):
        with pytest.raises(ZeroVariance):
            shapiro_wilk([2, 2, 2, 2])

    def test_too_few(self):
        with pytest.raises(ValueError):
            shapiro_wilk([1, 2])


class TestPairedT:
    def test_hand_example(self):
        r = paired_t_test(PairedSamples([1, 2, 3], [2, 4, 6]))
        assert r.statistic == pytest.approx(3.4641, abs=1e-4)
        # df = 2: P(T <= t) = (1 + t / sqrt(2 + t^2)) / 2
        t = 2 * math.sqrt(3)
        assert r.p_value == pytest.approx(2 * (1 - 0.5 * (1 + t / math.sqrt(2 + t * t))), abs=1e-9)
        assert r.p_value == pytest.approx(0.0742, abs=1e-3)
        assert r.test_kind is TestKind.PAIRED_T

    def test_swap(self):
        s = PairedSamples([1.0, 4, 2, 8, 5], [2.5, 3, 6, 9, 7])
        a, b = paired_t_test(s), paired_t_test(s.swapped())
        assert a.statistic == -b.statistic and a.p_value == b.p_value

    def test_zero_variance(self):
        with pytest.raises(ZeroVarianceDifferences):
            paired_t_test(PairedSamples([1, 2, 3], [1, 2, 3]))

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=3, max_size=30), st.integers(0, 2**32 - 1))
    def test_against_scipy(self, base, seed):
        final = np.asarray(base) + np.random.default_rng(seed).normal(0.5, 2.0, len(base))
        r = paired_t_test(PairedSamples(base, final))
        ref = sps.ttest_rel(final, base)
        assert r.statistic == pytest.approx(ref.statistic, rel=1e-9)
        assert r.p_value == pytest.approx(ref.pvalue, abs=1e-9)


class TestWilcoxon:
    def test_hand_examples(self):
        r = wilcoxon_signed_rank(from_diffs([1, 2, 3]))
        assert (r.statistic, r.p_value) == (6.0, 0.25)
        r = wilcoxon_signed_rank(from_diffs([-1, -2, -3]))
        assert (r.statistic, r.p_value) == (0.0, 0.25)

    def test_all_zero(self):
        with pytest.raises(AllDifferencesZero):
            wilcoxon_signed_rank(from_diffs([0, 0, 0]))

    def test_zeros_dropped(self):
        assert wilcoxon_signed_rank(from_diffs([0, 1, 2, 3])).n == 3

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(-6, 6), min_size=3, max_size=10))
    def test_exact_equals_brute_force(self, d):
        if not any(d):
            return
        assert wilcoxon_signed_rank(from_diffs(d)).p_value == pytest.approx(brute_wilcoxon_p(d), abs=1e-12)

    @pytest.mark.parametrize("n", range(20, 26))
    def test_normal_approximation_near_exact(self, n):
        rng = np.random.default_rng(n)
        for shift in (0.0, 0.3, 0.7):
            s = from_diffs(rng.normal(shift, 1, n))
            exact = wilcoxon_signed_rank(s, method="exact").p_value
            approx = wilcoxon_signed_rank(s, method="normal").p_value
            assert abs(exact - approx) <= 0.02

    def test_matches_scipy_without_ties(self, rng):
        d = rng.normal(0.4, 1, 15)
        ref = sps.wilcoxon(d, method="exact")
        assert wilcoxon_signed_rank(from_diffs(d)).p_value == pytest.approx(ref.pvalue, abs=1e-12)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            wilcoxon_signed_rank(from_diffs([1, 2, 3]), method="bootstrap")


class TestPairedCompare:
    def test_gaussian_goes_to_t(self):
        d = np.random.default_rng(42).normal(1.0, 1.0, 12)
        assert shapiro_wilk(d)[1] >= 0.05
        r = paired_compare(from_diffs(d))
        assert r.test_kind is TestKind.PAIRED_T and r.normality_p >= 0.05

    def test_skewed_goes_to_wilcoxon(self):
        d = np.random.default_rng(3).exponential(1.0, 30) ** 2
        r = paired_compare(from_diffs(d))
        assert r.test_kind is TestKind.WILCOXON and r.normality_p < 0.05

    def test_decision_at_0010(self):
        r = paired_compare(samples_with_p(0.010))
        assert r.test_kind is TestKind.PAIRED_T
        assert r.p_value == pytest.approx(0.010, abs=1e-9) and r.significant

    def test_decision_at_0067(self):
        r = paired_compare(samples_with_p(0.067))
        assert r.p_value == pytest.approx(0.067, abs=1e-9) and not r.significant

    def test_constant_differences_use_wilcoxon(self):
        r = paired_compare(PairedSamples([1, 2, 3, 4], [2, 3, 4, 5]))
        assert r.test_kind is TestKind.WILCOXON and math.isnan(r.normality_p)

    def test_significance_rule(self):
        assert TestResult(TestKind.PAIRED_T, 1.0, 0.010).significant
        assert not TestResult(TestKind.PAIRED_T, 1.0, 0.05).significant
        with pytest.raises(ValueError):
            TestResult(TestKind.PAIRED_T, 1.0, 1.5)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            PairedSamples([1, 2, 3], [1, 2])

    def test_too_short(self):
        with pytest.raises(ValueError):
            PairedSamples([1, 2], [1, 2])


class TestAgreement:
    def test_mse(self):
        assert mse([1, 2], [1, 2]) == 0
        assert mse([0, 0], [3, 4]) == 12.5
        assert mse([1, 5, 2], [0, 7, 2]) == mse([0, 7, 2], [1, 5, 2])

    def test_pearson(self, rng):
        x = rng.normal(size=50)
        assert pearson(x, 2 * x) == pytest.approx(1.0)
        assert pearson(x, -x) == pytest.approx(-1.0)
        assert abs(pearson(rng.normal(size=1000), rng.normal(size=1000))) < 0.1

    def test_pearson_affine_invariance(self, rng):
        x, y = rng.normal(size=30), rng.normal(size=30)
        assert pearson(3 * x + 7, 0.5 * y - 2) == pytest.approx(pearson(x, y), abs=1e-12)
        assert pearson(x, y) == pytest.approx(sps.pearsonr(x, y)[0], abs=1e-12)

    def test_pearson_constant(self):
        with pytest.raises(ZeroVariance):
            pearson([1, 1, 1], [1, 2, 3])

    def test_percent_variation(self):
        assert percent_variation([5, 5], [5, 5]) == 0
        assert percent_variation([100], [88.8]) == pytest.approx(11.2)
        assert percent_variation([50], [52]) == pytest.approx(4.0)

    def test_zero_baseline(self):
        with pytest.raises(ZeroBaselineMean):
            percent_variation([1, -1], [2, 3])
