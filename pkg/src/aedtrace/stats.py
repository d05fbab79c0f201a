"""Nonparametric tests and descriptive statistics.

Exact p-values come from the full null distribution of the rank statistic
under the observed (mid-)ranks, counted by dynamic programming over
doubled ranks; this is the same distribution as enumerating every sign
pattern or group labelling, without the 2**n loop.

Two-sided exact p-values are ``min(1, 2 * min(P[S <= s], P[S >= s]))``.
Quantiles use linear interpolation between order statistics (R type 7).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels

TAILS = ("less", "greater", "two_sided")
WILCOXON_EXACT_MAX_N = 25
MWU_EXACT_MAX_MIN = 8
MWU_EXACT_MAX_TOTAL = 16


class StatsError(ValueError):
    pass


@dataclass
class TestResult:
    statistic: float
    p: float
    tail: str
    method: str  # "exact" | "normal_approx"
    n_effective: int
    p_adjusted: float | None = None

    __test__ = False  # not a pytest class


@dataclass
class EstimateWithCI:
    hl: float
    ci_low: float
    ci_high: float
    level: float
    method: str  # "walsh_exact" | "bootstrap_percentile"


def _check_tail(tail: str) -> None:
    if tail not in TAILS:
        raise StatsError(f"tail must be one of {TAILS}, got {tail!r}")


def midranks(x: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Average ranks (1-based) and their doubled integer form."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    order = np.argsort(x, kind="mergesort")
    doubled = np.empty(n, dtype=np.int64)
    xs = x[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and xs[j + 1] == xs[i]:
            j += 1
        doubled[order[i : j + 1]] = i + j + 2
        i = j + 1
    return doubled / 2.0, doubled


def tie_sizes(x: Sequence[float]) -> np.ndarray:
    _, counts = np.unique(np.asarray(x, dtype=np.float64), return_counts=True)
    return counts


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _norm_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def _tail_p_normal(stat: float, mean: float, var: float, tail: str) -> float:
    if var <= 0:
        return 1.0
    sd = math.sqrt(var)
    p_ge = _norm_sf((stat - mean - 0.5) / sd)
    p_le = _norm_cdf((stat - mean + 0.5) / sd)
    if tail == "greater":
        return min(1.0, p_ge)
    if tail == "less":
        return min(1.0, p_le)
    return min(1.0, 2.0 * min(p_ge, p_le))


def _tail_p_exact(counts: np.ndarray, obs: int, total: int, tail: str) -> float:
    # counts are exact int64; sum as Python ints before the single division
    le = int(counts[: obs + 1].sum())
    ge = int(counts[obs:].sum())
    if tail == "greater":
        return ge / total
    if tail == "less":
        return le / total
    return min(1.0, 2.0 * min(le, ge) / total)


def wilcoxon_signed_rank(
    diffs: Sequence[float], tail: str = "two_sided", exact_max_n: int = WILCOXON_EXACT_MAX_N
) -> TestResult:
    """Paired Wilcoxon signed-rank test on differences.

    Zeros are dropped, |d| ties get mid-ranks, and the statistic is the sum
    of ranks of positive differences.  ``tail="greater"`` tests for a
    positive median difference.
    """
    _check_tail(tail)
    d = np.asarray(diffs, dtype=np.float64)
    d = d[d != 0]
    n = int(d.shape[0])
    if n == 0:
        raise StatsError("all differences are zero")
    ranks, doubled = midranks(np.abs(d))
    pos = d > 0
    w_plus = float(ranks[pos].sum())
    if n <= exact_max_n:
        counts = _kernels.signed_rank_counts(doubled)
        p = _tail_p_exact(counts, int(doubled[pos].sum()), 2**n, tail)
        return TestResult(w_plus, p, tail, "exact", n)
    mean = n * (n + 1) / 4.0
    t = tie_sizes(np.abs(d))
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(t**3 - t)) / 48.0
    return TestResult(w_plus, _tail_p_normal(w_plus, mean, var, tail), tail, "normal_approx", n)


def mann_whitney_u(
    a: Sequence[float],
    b: Sequence[float],
    tail: str = "two_sided",
    exact_max_min: int = MWU_EXACT_MAX_MIN,
    exact_max_total: int = MWU_EXACT_MAX_TOTAL,
) -> TestResult:
    """Mann-Whitney U test; the statistic is U for group ``a``.

    ``tail="greater"`` tests whether ``a`` tends to be larger than ``b``.
    """
    _check_tail(tail)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, m = a.shape[0], b.shape[0]
    if n == 0 or m == 0:
        raise StatsError("both groups must be non-empty")
    pooled = np.concatenate([a, b])
    ranks, doubled = midranks(pooled)
    r_a = float(ranks[:n].sum())
    u = r_a - n * (n + 1) / 2.0
    N = n + m
    if min(n, m) <= exact_max_min and N <= exact_max_total:
        counts = _kernels.rank_sum_counts(doubled, n)
        p = _tail_p_exact(counts, int(doubled[:n].sum()), math.comb(N, n), tail)
        return TestResult(u, p, tail, "exact", N)
    t = tie_sizes(pooled)
    var = n * m / 12.0 * ((N + 1) - float(np.sum(t**3 - t)) / (N * (N - 1)))
    return TestResult(u, _tail_p_normal(u, n * m / 2.0, var, tail), tail, "normal_approx", N)


def holm_adjust(p_values: Sequence[float]) -> list[float]:
    """Holm step-down adjusted p-values, in the input order."""
    p = np.asarray(p_values, dtype=np.float64)
    m = p.shape[0]
    if m == 0:
        return []
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise StatsError("p-values must lie in [0, 1]")
    order = np.argsort(p, kind="mergesort")
    adj = np.empty(m)
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, min(1.0, (m - rank) * p[idx]))
        adj[idx] = running
    return adj.tolist()


def walsh_averages(d: Sequence[float]) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    i, j = np.triu_indices(d.shape[0])
    return (d[i] + d[j]) / 2.0


def hl_estimate(d: Sequence[float], estimator: str = "walsh") -> float:
    """Median of Walsh averages, or the plain median with ``estimator="median"``."""
    d = np.asarray(d, dtype=np.float64)
    if d.shape[0] == 0:
        raise StatsError("need at least one difference")
    if estimator == "median":
        return float(np.median(d))
    if estimator != "walsh":
        raise StatsError(f"unknown estimator {estimator!r}")
    return float(np.median(walsh_averages(d)))


def _bootstrap_ci(d, level, n_boot, seed, estimator, chunk=2000):
    n = d.shape[0]
    rng = np.random.default_rng(seed)
    stats = np.empty(n_boot)
    if estimator == "walsh":
        ii, jj = np.triu_indices(n)
    done = 0
    while done < n_boot:
        k = min(chunk, n_boot - done)
        samples = d[rng.integers(0, n, size=(k, n))]
        if estimator == "walsh":
            stats[done : done + k] = np.median((samples[:, ii] + samples[:, jj]) / 2.0, axis=1)
        else:
            stats[done : done + k] = np.median(samples, axis=1)
        done += k
    alpha = 1.0 - level
    lo, hi = np.quantile(stats, [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(lo), float(hi)


def _walsh_exact_ci(d, level):
    n = d.shape[0]
    w = np.sort(walsh_averages(d))
    M = w.shape[0]
    alpha = 1.0 - level
    if n <= WILCOXON_EXACT_MAX_N:
        counts = _kernels.signed_rank_counts(2 * np.arange(1, n + 1))
        # counts are over doubled sums; only even entries are populated
        cdf = np.cumsum(counts[::2]) / 2.0**n
        # largest k with P(W+ <= k - 1) <= alpha / 2
        k = int(np.searchsorted(cdf, alpha / 2.0, side="right"))
    else:
        mean = n * (n + 1) / 4.0
        sd = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0)
        z = _norm_quantile(1.0 - alpha / 2.0)
        k = int(math.floor(mean - z * sd))
    k = min(max(k, 1), (M + 1) // 2)
    return float(w[k - 1]), float(w[M - k])


def _norm_quantile(q: float) -> float:
    lo, hi = -10.0, 10.0
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if _norm_cdf(mid) < q:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


def hodges_lehmann(
    diffs: Sequence[float],
    ci_method: str = "bootstrap_percentile",
    level: float = 0.95,
    n_boot: int = 10_000,
    seed: int = 0,
    estimator: str = "walsh",
) -> EstimateWithCI:
    """Hodges-Lehmann location estimate with a confidence interval.

    ``ci_method`` is ``"bootstrap_percentile"`` (participants resampled with
    replacement, seeded) or ``"walsh_exact"`` (inversion of the signed-rank
    test on sorted Walsh averages).  The interval is widened if needed so it
    always contains the point estimate.
    """
    d = np.asarray(diffs, dtype=np.float64)
    hl = hl_estimate(d, estimator)
    if d.shape[0] == 1:
        return EstimateWithCI(hl, hl, hl, level, ci_method)
    if ci_method in ("bootstrap", "bootstrap_percentile"):
        lo, hi = _bootstrap_ci(d, level, n_boot, seed, estimator)
        ci_method = "bootstrap_percentile"
    elif ci_method == "walsh_exact":
        lo, hi = _walsh_exact_ci(d, level)
    else:
        raise StatsError(f"unknown ci_method {ci_method!r}")
    return EstimateWithCI(hl, min(lo, hl), max(hi, hl), level, ci_method)


def median_iqr(values: Sequence[float]) -> tuple[float, float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.shape[0] == 0:
        raise StatsError("median_iqr of empty input")
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75], method="linear")
    return float(med), float(q1), float(q3)


def sus_score(items: Sequence[int]) -> float:
    """System Usability Scale score (0-100) for one respondent's 10 answers."""
    if len(items) != 10:
        raise StatsError(f"SUS needs exactly 10 items, got {len(items)}")
    total = 0
    for k, v in enumerate(items, start=1):
        if int(v) != v or not 1 <= v <= 5:
            raise StatsError(f"SUS item {k} out of range: {v!r}")
        total += (v - 1) if k % 2 == 1 else (5 - v)
    return total * 2.5


def sus_summary(responses: Sequence[Sequence[int]]) -> tuple[list[float], float, float]:
    """Per-respondent scores, their mean, and sample standard deviation."""
    scores = [sus_score(r) for r in responses]
    if not scores:
        raise StatsError("no SUS responses")
    sd = float(np.std(scores, ddof=1)) if len(scores) > 1 else 0.0
    return scores, float(np.mean(scores)), sd


def stars(p: float | None) -> str:
    if p is None:
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""
