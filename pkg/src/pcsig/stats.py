"""Distributional tests and multiple-testing machinery.

Kolmogorov-Smirnov uniformity tests (two-sided, and one-sided against
anti-conservative skew), the double KS aggregation used to score calibration
across repeated studies, Benjamini-Hochberg adjustment, a tail-fraction
estimate of the null proportion, q-values, and a permutation rank-sum
enrichment test.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import kolmogorov, smirnov
from scipy.stats import rankdata

from .errors import InvalidSample

# Sample sizes up to this use the exact one-sided KS null distribution;
# beyond it the asymptotic bound exp(-2 n D+^2) is accurate.
_EXACT_ONE_SIDED_MAX_N = 20


class KsSide(enum.Enum):
    TWO_SIDED = "two-sided"
    ONE_SIDED_ANTI_CONSERVATIVE = "one-sided-anti-conservative"


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    side: KsSide
    sample_size: int


def _checked_unit_sample(sample) -> np.ndarray:
    x = np.asarray(sample, dtype=np.float64)
    if x.ndim != 1:
        x = x.ravel()
    if x.size == 0:
        raise InvalidSample("empty sample")
    if not np.isfinite(x).all():
        raise InvalidSample("non-finite sample values")
    if x.min() < 0.0 or x.max() > 1.0:
        raise InvalidSample("sample values must lie in [0, 1]")
    return x


def ks_uniform(sample, side: KsSide = KsSide.TWO_SIDED) -> KsResult:
    """KS test of a sample against Uniform(0, 1).

    Two-sided: D = sup |ECDF(x) - x|, p from the asymptotic Kolmogorov
    distribution.  One-sided (anti-conservative): D+ = sup (ECDF(x) - x),
    detecting skew towards zero; p is exact for n <= 20 and the bound
    exp(-2 n D+^2) otherwise.
    """
    x = np.sort(_checked_unit_sample(sample))
    n = x.size
    grid_hi = np.arange(1, n + 1) / n
    grid_lo = np.arange(0, n) / n
    d_plus = float(np.max(grid_hi - x))
    d_minus = float(np.max(x - grid_lo))

    if side is KsSide.TWO_SIDED:
        d = max(d_plus, d_minus, 0.0)
        p = float(kolmogorov(math.sqrt(n) * d))
        return KsResult(statistic=d, p_value=min(max(p, 0.0), 1.0), side=side, sample_size=n)

    d = max(d_plus, 0.0)
    if n <= _EXACT_ONE_SIDED_MAX_N:
        p = float(smirnov(n, d))
    else:
        p = math.exp(-2.0 * n * d * d)
    return KsResult(statistic=d, p_value=min(max(p, 0.0), 1.0), side=side, sample_size=n)


def double_ks(ks_pvalues) -> KsResult:
    """One-sided KS on a collection of per-study KS p-values.

    Detects systematic skew towards zero, i.e. calibration failure repeated
    across studies.
    """
    return ks_uniform(ks_pvalues, KsSide.ONE_SIDED_ANTI_CONSERVATIVE)


def bh_fdr(p_values) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted values, clipped to 1."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.size == 0:
        return p.copy()
    if p.min() < 0.0 or p.max() > 1.0:
        raise InvalidSample("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    adjusted = np.minimum.accumulate(ranked[::-1])[::-1]
    adjusted = np.minimum(adjusted, 1.0)
    out = np.empty(m)
    out[order] = adjusted
    return out


DEFAULT_LAMBDA_GRID = tuple(np.round(np.arange(0.05, 0.951, 0.05), 2))


@dataclass(frozen=True)
class FdrResult:
    q_values: np.ndarray
    pi0_hat: float
    lambda_grid: tuple[float, ...]


def estimate_pi0(p_values, lambda_grid=DEFAULT_LAMBDA_GRID) -> float:
    """Null-proportion estimate from upper-tail p-value fractions.

    pi0(lambda) = #{p > lambda} / (m (1 - lambda)), averaged over the grid;
    the mean is clipped to [1/m, 1] so downstream scaling never degenerates.
    """
    p = np.asarray(p_values, dtype=np.float64)
    if p.size == 0:
        raise InvalidSample("empty p-value set")
    if p.min() < 0.0 or p.max() > 1.0:
        raise InvalidSample("p-values must lie in [0, 1]")
    lam = np.asarray(lambda_grid, dtype=np.float64)
    if lam.size == 0 or lam.min() <= 0.0 or lam.max() >= 1.0:
        raise InvalidSample("lambda grid must lie strictly inside (0, 1)")
    m = p.size
    estimates = [(p > v).sum() / (m * (1.0 - v)) for v in lam]
    pi0 = float(np.mean(estimates))
    return min(max(pi0, 1.0 / m), 1.0)


def q_values(p_values, pi0_hat: float) -> np.ndarray:
    """q-values: pi0 times the BH-adjusted p-values (already monotone)."""
    if not (0.0 < pi0_hat <= 1.0):
        raise InvalidSample(f"pi0_hat must be in (0, 1], got {pi0_hat}")
    return pi0_hat * bh_fdr(p_values)


def fdr_summary(p_values, lambda_grid=DEFAULT_LAMBDA_GRID) -> FdrResult:
    pi0 = estimate_pi0(p_values, lambda_grid)
    return FdrResult(
        q_values=q_values(p_values, pi0),
        pi0_hat=pi0,
        lambda_grid=tuple(float(v) for v in lambda_grid),
    )


def rank_sum_enrichment(
    member_stats,
    nonmember_stats,
    permutations: int = 1000,
    seed: int = 0,
) -> float:
    """One-sided rank-sum test that members carry larger statistics.

    Significance comes from random label permutations:
    p = (#{permuted rank sum >= observed} + 1) / (permutations + 1),
    so the result is never exactly zero.  Ties get midranks; identical
    groups give p close to 1.
    """
    members = np.asarray(member_stats, dtype=np.float64)
    others = np.asarray(nonmember_stats, dtype=np.float64)
    if members.size == 0 or others.size == 0:
        raise InvalidSample("both groups must be nonempty")
    if permutations < 100:
        raise InvalidSample(f"need at least 100 permutations, got {permutations}")

    pooled = np.concatenate([members, others])
    ranks = rankdata(pooled, method="average")
    n_mem = members.size
    observed = float(ranks[:n_mem].sum())

    rng = np.random.default_rng(seed)
    count = 0
    for _ in range(permutations):
        perm = rng.permutation(pooled.size)
        if float(ranks[perm[:n_mem]].sum()) >= observed:
            count += 1
    return (count + 1) / (permutations + 1)
