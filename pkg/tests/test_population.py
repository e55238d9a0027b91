from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from ctscope import enrichment, ingest, population, synth
from ctscope.population import MonthlyCounts


def counts(K, N, N1, month="2023-01"):
    return MonthlyCounts(month, K, N, N1)


def test_good_turing_hand_value():
    assert population.good_turing(counts(100, 90, 80)) == pytest.approx(450.0, rel=1e-12)


def test_good_turing_no_singletons_returns_n():
    assert population.good_turing(counts(100, 40, 0)) == 40.0


def test_good_turing_undefined_without_repeats():
    with pytest.raises(population.Undefined):
        population.good_turing(counts(50, 50, 50))


def test_empty_month():
    with pytest.raises(population.EmptyMonth):
        population.good_turing(counts(0, 0, 0))


def test_counts_validation():
    with pytest.raises(ValueError):
        counts(10, 11, 0)


def test_mle_diverges_when_all_distinct():
    with pytest.raises(population.Diverges):
        population.mle_fixed_point(counts(10, 10, 10))


def test_mle_residual_small():
    c = counts(200_000, 100_000, 60_000)
    M, converged = population.mle_fixed_point(c)
    assert converged
    assert abs(M * (1 - math.exp(-c.K / M)) - c.N) < 1e-6 * c.N


def test_mle_matches_root_finder_on_tiny_month():
    # at K=100 the two estimators differ by about 3.5%; agreement needs larger months
    c = counts(100, 90, 80)
    root = brentq(lambda M: M * -math.expm1(-c.K / M) - c.N, c.N, 1e6, xtol=1e-12)
    M, converged = population.mle_fixed_point(c)
    assert converged
    assert M == pytest.approx(root, rel=1e-8)
    assert population.good_turing(c) == pytest.approx(450.0)


@pytest.mark.parametrize("M,K", [(5_000, 2_000), (20_000, 10_000), (50_000, 60_000)])
def test_mle_close_to_good_turing_realistic_month(M, K):
    rng = np.random.default_rng(M + K)
    c = population.simulate_month(rng, M, K)
    gt = population.good_turing(c)
    mle, _ = population.mle_fixed_point(c)
    assert abs(gt - mle) / gt < 0.01


def test_mle_cap_reports_not_converged():
    M, converged = population.mle_fixed_point(counts(200_000, 199_000, 198_000), iterations=3)
    assert not converged and M > 0


def test_mle_handles_huge_ratio_without_overflow():
    M, converged = population.mle_fixed_point(counts(10**7, 5, 0), M0=1.0)
    assert converged and M == pytest.approx(5.0)


def test_good_turing_monte_carlo_recovery():
    rng = np.random.default_rng(0)
    est = [population.good_turing(population.simulate_month(rng, 10_000, 5_000)) for _ in range(100)]
    assert abs(np.median(est) - 10_000) / 10_000 < 0.10


@st.composite
def monthly(draw):
    K = draw(st.integers(2, 10_000))
    N = draw(st.integers(1, K - 1))
    # N1 singletons leave K - N1 draws over N - N1 repeated ids, each seen twice or more
    lo = max(0, 2 * N - K)
    N1 = draw(st.integers(lo, N))
    if N1 == N and N1 != K:
        N1 = max(lo, N - 1)
    return counts(K, N, N1)


@given(monthly())
def test_gt_at_least_observed(c):
    assert population.good_turing(c) >= c.N


@given(monthly())
def test_gt_increasing_in_singletons(c):
    if c.N1 == 0:
        return
    lower = counts(c.K, c.N, c.N1 - 1)
    assert population.good_turing(lower) < population.good_turing(c)


@given(monthly())
def test_mle_deterministic_and_at_least_observed(c):
    a = population.mle_fixed_point(c)
    b = population.mle_fixed_point(c)
    assert a == b
    assert a[0] >= c.N * (1 - 1e-9)


def test_estimate_month_zero_positives_zero_volume():
    r = population.estimate_month(counts(100, 90, 80))
    assert r.conspiracy_volume == 0.0 and r.ok


def test_estimate_month_flags_undefined():
    r = population.estimate_month(counts(20, 20, 20), positives=3)
    assert not r.ok
    assert "undefined" in r.flags and "mle_diverges" in r.flags
    assert math.isnan(r.conspiracy_volume)


def test_sanity_anchor_prevalence():
    r = population.estimate_month(counts(280_000, 250_000, 225_000), positives=542)
    assert r.conspiracy_pct == pytest.approx(0.0019, abs=1e-4)


def test_monthly_series_recovers_planted_prevalence(tmp_path):
    months = [("2023-01", 30_000, 30_000), ("2023-02", 40_000, 30_000), ("2023-03", 30_000, 45_000)]
    records = synth.synthetic_corpus(months, prevalence=0.001, seed=3)
    unique, st_ = ingest.deduplicate(records)
    labels = {r.video_id: bool(set(r.hashtags) & set(synth.CONSPIRACY_TAGS)) for r in unique}
    res = population.monthly_series(st_, labels)
    assert [r.month for r in res] == ["2023-01", "2023-02", "2023-03"]
    for r, (_, M, K) in zip(res, months):
        # two binomial stages: planting over M videos, then K draws
        n_eff = 1.0 / (1.0 / M + 1.0 / K)
        half = 1.96 * math.sqrt(0.001 * 0.999 / n_eff)
        assert abs(r.conspiracy_pct - 0.001) <= half
        assert r.relative_gap < 0.01
        assert abs(r.M_gt - M) / M < 0.05
    path = population.write_estimates_csv(res, tmp_path / "est.csv")
    header = path.read_text().splitlines()[0]
    assert header == "month,K,N,N1,M_gt,M_mle,gap,pct,volume,flags"


def test_monthly_series_over_unique_uses_n():
    occ = {"a": ("2023-01", 3), "b": ("2023-01", 1), "c": ("2023-01", 1)}
    st_ = ingest._stats_from_occurrences(occ, 0)
    labels = {"a": enrichment.VideoClass.CONSPIRACY, "b": enrichment.VideoClass.NOT_CONSPIRACY}
    (draws,) = population.monthly_series(st_, labels)
    (uniq,) = population.monthly_series(st_, labels, over="unique")
    assert draws.conspiracy_pct == pytest.approx(3 / 5)
    assert uniq.conspiracy_pct == pytest.approx(1 / 3)
    assert "pct_over_unique" in uniq.flags
