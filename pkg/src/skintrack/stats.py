"""Trial statistics: normality-gated paired comparison, MSE, correlation, % variation.

All tests are two-sided.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, t as student_t

from .exceptions import (
    AllDifferencesZero,
    ZeroBaselineMean,
    ZeroVariance,
    ZeroVarianceDifferences,
)
from .validation import check_paired, check_samples

__all__ = [
    "TestKind",
    "PairedSamples",
    "TestResult",
    "shapiro_wilk",
    "paired_t_test",
    "wilcoxon_signed_rank",
    "wilcoxon_exact_distribution",
    "paired_compare",
    "mse",
    "pearson",
    "percent_variation",
    "DEFAULT_ALPHA",
]

DEFAULT_ALPHA = 0.05
EXACT_WILCOXON_MAX_N = 25


class TestKind(str, enum.Enum):
    __test__ = False  # keep pytest from collecting this as a test class

    PAIRED_T = "paired t-test"
    WILCOXON = "Wilcoxon matched pairs"


@dataclass(frozen=True)
class PairedSamples:
    baseline: tuple
    final: tuple
    label: str = ""

    def __post_init__(self):
        b, f = check_paired(self.baseline, self.final, min_size=3)
        object.__setattr__(self, "baseline", tuple(b.tolist()))
        object.__setattr__(self, "final", tuple(f.tolist()))

    @property
    def differences(self):
        """``final - baseline`` per pair."""
        return np.asarray(self.final) - np.asarray(self.baseline)

    def swapped(self):
        return PairedSamples(self.final, self.baseline, self.label)


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    test_kind: TestKind
    statistic: float
    p_value: float
    alpha: float = DEFAULT_ALPHA
    normality_p: float = float("nan")
    n: int = 0
    label: str = ""
    significant: bool = field(init=False)

    def __post_init__(self):
        if not (0.0 <= self.p_value <= 1.0):
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")
        object.__setattr__(self, "significant", bool(self.p_value < self.alpha))


# ---------------------------------------------------------------------------
# Shapiro-Wilk (Royston 1995, algorithm AS R94)

_C1 = (0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.544, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)


def _poly(coef, x):
    """Evaluate ``coef[0] + coef[1] x + coef[2] x^2 + ...``."""
    return sum(c * x**i for i, c in enumerate(coef))


def _swilk_coefficients(n):
    """Half of the antisymmetric weight vector, largest (positive) weight first."""
    half = n // 2
    if n == 3:
        return np.array([math.sqrt(0.5)])
    m = norm.ppf((np.arange(1, half + 1) - 0.375) / (n + 0.25))
    summ2 = 2.0 * np.sum(m**2)
    ssumm2 = math.sqrt(summ2)
    rsn = 1.0 / math.sqrt(n)
    a = -m / ssumm2
    a1 = _poly(_C1, rsn) - m[0] / ssumm2
    if n > 5:
        a2 = -m[1] / ssumm2 + _poly(_C2, rsn)
        fac = math.sqrt((summ2 - 2 * m[0] ** 2 - 2 * m[1] ** 2) / (1 - 2 * a1**2 - 2 * a2**2))
        a = -m / fac
        a[0], a[1] = a1, a2
    else:
        fac = math.sqrt((summ2 - 2 * m[0] ** 2) / (1 - 2 * a1**2))
        a = -m / fac
        a[0] = a1
    return a


def shapiro_wilk(data):
    """Shapiro-Wilk W and its p-value, valid for 3 <= n <= 5000."""
    x = np.sort(check_samples(data, "data", 3))
    n = x.size
    if n > 5000:
        raise ValueError("Shapiro-Wilk approximation is only valid up to n = 5000")
    if np.ptp(x) <= 1e-19 * max(1.0, abs(x[0])):
        raise ZeroVariance("all observations are equal")
    half = _swilk_coefficients(n)
    weights = np.zeros(n)
    weights[: n // 2] = -half
    weights[n - n // 2 :] = half[::-1]
    xc = (x - x.mean()) / np.ptp(x)
    w = float(np.dot(weights, xc) ** 2 / (np.dot(weights, weights) * np.dot(xc, xc)))
    w = min(w, 1.0)

    if n == 3:
        p = (6.0 / math.pi) * (math.asin(math.sqrt(w)) - math.pi / 3.0)
        return w, float(min(max(p, 0.0), 1.0))
    w1 = math.log1p(-w) if w < 1.0 else -math.inf
    if n <= 11:
        gamma = _poly(_G, n)
        if w1 >= gamma:
            return w, 1e-99
        y = -math.log(gamma - w1)
        m = _poly(_C3, n)
        s = math.exp(_poly(_C4, n))
    else:
        ln = math.log(n)
        y = w1
        m = _poly(_C5, ln)
        s = math.exp(_poly(_C6, ln))
    return w, float(norm.sf(y, loc=m, scale=s))


# ---------------------------------------------------------------------------
# Paired tests


def paired_t_test(s, alpha=DEFAULT_ALPHA):
    """Paired Student t on ``final - baseline`` with a two-sided p-value."""
    d = s.differences
    n = d.size
    sd = d.std(ddof=1)
    if sd == 0:
        raise ZeroVarianceDifferences("paired differences have zero variance")
    t = d.mean() / (sd / math.sqrt(n))
    p = float(min(1.0, 2.0 * student_t.sf(abs(t), df=n - 1)))
    return TestResult(TestKind.PAIRED_T, float(t), p, alpha, n=n, label=s.label)


def _average_ranks(values):
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def wilcoxon_exact_distribution(ranks):
    """Counts of every attainable doubled W+ over all 2^n sign assignments.

    Entry ``k`` of the result is the number of sign patterns whose positive
    ranks sum to ``k / 2``.
    """
    doubled = np.rint(2 * np.asarray(ranks, dtype=float)).astype(int)
    counts = np.zeros(int(doubled.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: counts.size - r]
        counts = counts + shifted
    return counts


def _wilcoxon_p(ranks, w_plus, method):
    n = ranks.size
    if method == "exact":
        counts = wilcoxon_exact_distribution(ranks)
        k = int(round(2 * w_plus))
        total = float(counts.sum())
        lower = counts[: k + 1].sum() / total
        upper = counts[k:].sum() / total
        return float(min(1.0, 2.0 * min(lower, upper)))
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    if var <= 0:
        return 1.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
    return float(min(1.0, 2.0 * norm.sf(z)))


def wilcoxon_signed_rank(s, alpha=DEFAULT_ALPHA, method="auto"):
    """Wilcoxon matched-pairs signed-rank test on ``final - baseline``.

    Zero differences are dropped and tied magnitudes share average ranks.
    The statistic is W+, the rank sum of the positive differences. With
    ``method="auto"`` the p-value is exact for n <= 25 and otherwise uses
    the tie-corrected normal approximation with continuity correction.
    """
    d = s.differences
    d = d[d != 0]
    if d.size == 0:
        raise AllDifferencesZero("every paired difference is zero")
    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if method == "auto":
        method = "exact" if d.size <= EXACT_WILCOXON_MAX_N else "normal"
    if method not in ("exact", "normal"):
        raise ValueError(f"unknown method {method!r}")
    p = _wilcoxon_p(ranks, w_plus, method)
    return TestResult(TestKind.WILCOXON, w_plus, p, alpha, n=int(d.size), label=s.label)


def paired_compare(s, alpha=DEFAULT_ALPHA):
    """Paired t-test when the differences pass Shapiro-Wilk at ``alpha``, else Wilcoxon.

    Differences with zero variance cannot be tested for normality; they go
    to the Wilcoxon branch with ``normality_p`` left as NaN.
    """
    try:
        _, normality_p = shapiro_wilk(s.differences)
    except ZeroVariance:
        normality_p = float("nan")
    if normality_p >= alpha:
        result = paired_t_test(s, alpha)
    else:
        result = wilcoxon_signed_rank(s, alpha)
    return TestResult(
        result.test_kind, result.statistic, result.p_value, alpha, normality_p, result.n, s.label
    )


# ---------------------------------------------------------------------------
# Agreement measures


def mse(x, y):
    x, y = check_paired(x, y, min_size=1)
    return float(np.mean((x - y) ** 2))


def pearson(x, y):
    x, y = check_paired(x, y, min_size=2)
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = np.dot(xc, xc), np.dot(yc, yc)
    if sxx == 0 or syy == 0:
        raise ZeroVariance("correlation undefined for a constant sequence")
    return float(np.clip(np.dot(xc, yc) / math.sqrt(sxx * syy), -1.0, 1.0))


def percent_variation(baseline, final):
    """``|mean(final) - mean(baseline)| / |mean(baseline)| * 100``."""
    b = check_samples(baseline, "baseline", 1)
    f = check_samples(final, "final", 1)
    mb = b.mean()
    if mb == 0:
        raise ZeroBaselineMean("baseline mean is zero")
    return float(abs(f.mean() - mb) / abs(mb) * 100.0)
