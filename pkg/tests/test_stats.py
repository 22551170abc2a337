import itertools
import math

import numpy as np
import pytest

from pcsig.errors import InvalidSample
from pcsig.stats import (
    KsSide,
    bh_fdr,
    double_ks,
    estimate_pi0,
    ks_uniform,
    q_values,
    rank_sum_enrichment,
)


# ---------------------------------------------------------------------------
# brute-force KS oracles
# ---------------------------------------------------------------------------

def oracle_ks_two_sided(sample, terms=100):
    """ECDF evaluated at every breakpoint from both sides; p from the
    Kolmogorov series."""
    x = sorted(sample)
    n = len(x)
    d = 0.0
    for i, v in enumerate(x, start=1):
        d = max(d, abs(i / n - v), abs(v - (i - 1) / n))
    t = math.sqrt(n) * d
    p = 2.0 * sum((-1) ** (k - 1) * math.exp(-2.0 * k * k * t * t) for k in range(1, terms + 1))
    return d, min(max(p, 0.0), 1.0)


def oracle_ks_one_sided_exact(sample):
    """D+ by breakpoint scan; exact tail probability by the combinatorial
    sum P(D+ >= d) = d * sum_j C(n,j) (d + j/n)^(j-1) (1 - d - j/n)^(n-j)."""
    x = sorted(sample)
    n = len(x)
    d = max(0.0, max(i / n - v for i, v in enumerate(x, start=1)))
    if d <= 0.0:
        return d, 1.0
    if d >= 1.0:
        return d, 0.0
    total = 0.0
    for j in range(int(math.floor(n * (1.0 - d))) + 1):
        total += (
            math.comb(n, j)
            * (d + j / n) ** (j - 1)
            * (1.0 - d - j / n) ** (n - j)
        )
    return d, min(max(d * total, 0.0), 1.0)


# ---------------------------------------------------------------------------
# ks_uniform
# ---------------------------------------------------------------------------

def test_near_uniform_grid_has_tiny_statistic():
    n = 50
    sample = [(i - 0.5) / n for i in range(1, n + 1)]
    res = ks_uniform(sample, KsSide.TWO_SIDED)
    assert res.statistic <= 0.5 / n + 1e-12
    assert res.p_value > 0.999


def test_point_mass_is_maximally_anti_conservative():
    res = ks_uniform([0.001] * 100, KsSide.ONE_SIDED_ANTI_CONSERVATIVE)
    assert res.statistic == pytest.approx(0.999, abs=1e-12)
    assert res.p_value < 1e-80


def test_small_sample_matches_breakpoint_oracle():
    sample = [0.1, 0.2, 0.3, 0.4, 0.5]
    res = ks_uniform(sample, KsSide.TWO_SIDED)
    d_want, p_want = oracle_ks_two_sided(sample)
    assert res.statistic == pytest.approx(d_want, abs=1e-10)
    assert res.p_value == pytest.approx(p_want, abs=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_oracle_equivalence_small_n(seed):
    rng = np.random.default_rng(3000 + seed)
    n = int(rng.integers(3, 21))
    sample = rng.uniform(size=n)

    two = ks_uniform(sample, KsSide.TWO_SIDED)
    d_want, p_want = oracle_ks_two_sided(sample)
    assert two.statistic == pytest.approx(d_want, abs=1e-10)
    assert two.p_value == pytest.approx(p_want, abs=1e-6)

    one = ks_uniform(sample, KsSide.ONE_SIDED_ANTI_CONSERVATIVE)
    d1_want, p1_want = oracle_ks_one_sided_exact(sample)
    assert one.statistic == pytest.approx(d1_want, abs=1e-10)
    assert one.p_value == pytest.approx(p1_want, abs=1e-6)


def test_one_sided_asymptotic_bound_above_cutoff():
    rng = np.random.default_rng(5)
    sample = rng.uniform(size=200)
    res = ks_uniform(sample, KsSide.ONE_SIDED_ANTI_CONSERVATIVE)
    assert res.p_value == pytest.approx(
        math.exp(-2.0 * 200 * res.statistic**2), rel=1e-12
    )


def test_rejects_bad_samples():
    with pytest.raises(InvalidSample):
        ks_uniform([])
    with pytest.raises(InvalidSample):
        ks_uniform([0.2, 1.4])
    with pytest.raises(InvalidSample):
        ks_uniform([0.2, -0.1])


# ---------------------------------------------------------------------------
# double_ks
# ---------------------------------------------------------------------------

def test_double_ks_all_ones():
    res = double_ks([1.0] * 40)
    assert res.statistic == 0.0
    assert res.p_value == 1.0


def test_double_ks_uniform_fixed_seed_golden():
    rng = np.random.default_rng(20130709)
    sample = rng.uniform(size=500)
    res = double_ks(sample)
    # frozen from this deterministic draw; uniform input must not alarm
    assert res.p_value > 0.001
    assert res.p_value == pytest.approx(0.9554525726186593, rel=1e-12)


def test_double_ks_detects_skew():
    rng = np.random.default_rng(1)
    skewed = rng.uniform(size=500) ** 3  # pushed towards zero
    assert double_ks(skewed).p_value < 1e-10


# ---------------------------------------------------------------------------
# bh_fdr
# ---------------------------------------------------------------------------

def test_bh_hand_computed_case():
    adjusted = bh_fdr([0.01, 0.02, 0.03, 0.04])
    # step-up: min over j >= i of m p_(j) / j = 0.04 everywhere
    assert np.allclose(adjusted, [0.04, 0.04, 0.04, 0.04], atol=1e-15)


def test_bh_all_ones_and_singleton():
    assert np.array_equal(bh_fdr([1.0, 1.0, 1.0]), [1.0, 1.0, 1.0])
    assert bh_fdr([0.05])[0] == pytest.approx(0.05, abs=1e-15)


def test_bh_monotone_and_clipped():
    rng = np.random.default_rng(9)
    p = rng.uniform(size=200)
    adj = bh_fdr(p)
    assert np.all(adj <= 1.0)
    order = np.argsort(p)
    assert np.all(np.diff(adj[order]) >= -1e-15)


def test_bh_matches_naive_definition():
    rng = np.random.default_rng(30)
    p = rng.uniform(size=25)
    adj = bh_fdr(p)
    m = p.size
    order = np.argsort(p)
    ranked = p[order]
    for i in range(m):
        want = min(min(m * ranked[j] / (j + 1) for j in range(i, m)), 1.0)
        assert adj[order[i]] == pytest.approx(want, rel=1e-12)


# ---------------------------------------------------------------------------
# estimate_pi0
# ---------------------------------------------------------------------------

def test_pi0_on_uniform_pvalues():
    rng = np.random.default_rng(101)
    p = rng.uniform(size=10_000)
    pi0 = estimate_pi0(p)
    assert 0.95 <= pi0 <= 1.0


def test_pi0_all_zero_clips_at_floor():
    p = np.zeros(50)
    pi0 = estimate_pi0(p)
    assert pi0 == pytest.approx(1.0 / 50)
    assert pi0 > 0.0


def test_pi0_mixture_recovery():
    rng = np.random.default_rng(202)
    m = 10_000
    p = np.concatenate([rng.uniform(size=m // 2), rng.uniform(0.0, 1e-6, size=m // 2)])
    pi0 = estimate_pi0(p)
    assert 0.45 <= pi0 <= 0.55


def test_pi0_rejects_empty():
    with pytest.raises(InvalidSample):
        estimate_pi0([])


# ---------------------------------------------------------------------------
# q_values
# ---------------------------------------------------------------------------

def test_qvalues_reduce_to_bh_when_pi0_is_one():
    rng = np.random.default_rng(7)
    p = rng.uniform(size=40)
    assert np.array_equal(q_values(p, 1.0), bh_fdr(p))


def test_qvalues_hand_case():
    q = q_values([0.02, 0.04], 0.5)
    # BH adjusted = (0.04, 0.04); scaled by pi0 = 0.5
    assert np.allclose(q, [0.02, 0.02], atol=1e-15)


def test_qvalues_monotone_in_p():
    rng = np.random.default_rng(70)
    p = rng.uniform(size=100)
    q = q_values(p, 0.8)
    order = np.argsort(p)
    assert np.all(np.diff(q[order]) >= -1e-15)
    assert np.all(q <= bh_fdr(p) + 1e-15)


def test_qvalues_reject_bad_pi0():
    with pytest.raises(InvalidSample):
        q_values([0.5], 0.0)


# ---------------------------------------------------------------------------
# rank_sum_enrichment
# ---------------------------------------------------------------------------

def exhaustive_rank_sum_exceedance(members, nonmembers):
    """Exact probability of a permuted member rank sum >= observed."""
    pooled = list(members) + list(nonmembers)
    # midranks
    order = sorted(range(len(pooled)), key=lambda i: pooled[i])
    ranks = [0.0] * len(pooled)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        mid = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = mid
        i = j + 1
    n_mem = len(members)
    observed = sum(ranks[:n_mem])
    count = 0
    total = 0
    for combo in itertools.combinations(range(len(pooled)), n_mem):
        total += 1
        if sum(ranks[i] for i in combo) >= observed:
            count += 1
    return count / total


def test_separated_groups_match_exhaustive_oracle():
    members = [10.0, 11.0, 12.0]
    nonmembers = [1.0, 2.0, 3.0]
    exact = exhaustive_rank_sum_exceedance(members, nonmembers)
    assert exact == pytest.approx(1.0 / 20.0)

    p = rank_sum_enrichment(members, nonmembers, permutations=2000, seed=42)
    assert p >= 1.0 / 2001.0
    # sampled permutations estimate the exact exceedance probability
    assert p == pytest.approx(exact, abs=0.02)


def test_identical_groups_not_significant():
    vals = [1.0, 2.0, 3.0, 4.0, 5.0]
    p = rank_sum_enrichment(vals, list(vals), permutations=500, seed=3)
    assert p >= 0.05


def test_degenerate_all_equal_gives_one():
    p = rank_sum_enrichment([2.0, 2.0], [2.0, 2.0, 2.0], permutations=200, seed=1)
    assert p == 1.0


def test_permutation_pvalue_never_zero():
    p = rank_sum_enrichment([100.0, 101.0], [1.0, 2.0], permutations=100, seed=0)
    assert p >= 1.0 / 101.0


def test_rank_sum_validation():
    with pytest.raises(InvalidSample):
        rank_sum_enrichment([], [1.0], permutations=100, seed=0)
    with pytest.raises(InvalidSample):
        rank_sum_enrichment([1.0], [2.0], permutations=10, seed=0)
