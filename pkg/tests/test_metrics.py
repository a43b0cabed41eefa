"""Tests for distance and performance metrics."""

import datetime as dt
import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chainfrontier.metrics import (
    AggregateReport,
    PerfRecord,
    aggregate,
    capm_alpha,
    distance_delta_vs_naive,
    forward_return,
    l1_distance,
)


# ---------------------------------------------------------------------------
# l1 distance


def test_l1_distance_worked_example():
    # 0.5 * (|0.5-0.9| + |0.5-0.1|) = 0.5 * 0.8
    assert l1_distance([0.5, 0.5], [0.9, 0.1]) == pytest.approx(0.4, abs=1e-12)


def test_l1_distance_identical_books():
    assert l1_distance([0.3, 0.7], [0.3, 0.7]) == 0.0


def test_l1_distance_disjoint_books():
    assert l1_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0, abs=1e-12)


def test_l1_distance_shape_mismatch():
    with pytest.raises(ValueError, match="shapes"):
        l1_distance([1.0], [0.5, 0.5])


def test_l1_distance_rejects_bad_weights():
    with pytest.raises(ValueError, match="negative"):
        l1_distance([1.2, -0.2], [0.5, 0.5])
    with pytest.raises(ValueError, match="sums"):
        l1_distance([0.5, 0.5], [0.6, 0.6])


def _simplex(n):
    return (
        st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n)
        .filter(lambda xs: sum(xs) > 1e-6)
        .map(lambda xs: [x / sum(xs) for x in xs])
    )


@given(_simplex(4), _simplex(4), _simplex(4))
def test_l1_distance_is_a_metric(a, b, c):
    d_ab = l1_distance(a, b)
    assert 0.0 <= d_ab <= 1.0 + 1e-9
    assert d_ab == pytest.approx(l1_distance(b, a), abs=1e-12)
    assert d_ab <= l1_distance(a, c) + l1_distance(c, b) + 1e-9


# ---------------------------------------------------------------------------
# forward return


def test_forward_return_offsetting_moves():
    r = forward_return([0.5, 0.5], [10.0, 20.0], [11.0, 18.0])
    assert r == pytest.approx(0.5 * 0.1 + 0.5 * (-0.1), abs=1e-12)


def test_forward_return_single_asset_doubles():
    assert forward_return([1.0, 0.0], [5.0, 3.0], [10.0, 3.0]) == pytest.approx(1.0)


def test_forward_return_ignores_prices_of_unheld_assets():
    r = forward_return([1.0, 0.0], [5.0, np.nan], [6.0, np.nan])
    assert r == pytest.approx(0.2)


def test_forward_return_missing_held_price():
    with pytest.raises(ValueError, match="start price"):
        forward_return([0.5, 0.5], [10.0, np.nan], [11.0, 18.0])
    with pytest.raises(ValueError, match="end price"):
        forward_return([0.5, 0.5], [10.0, 20.0], [11.0, np.nan])
    with pytest.raises(ValueError, match="start price"):
        forward_return([0.5, 0.5], [10.0, 0.0], [11.0, 18.0])


def test_forward_return_shape_mismatch():
    with pytest.raises(ValueError, match="align"):
        forward_return([1.0], [5.0, 3.0], [6.0, 3.0])


# ---------------------------------------------------------------------------
# CAPM alpha


def test_capm_alpha_worked_example():
    assert capm_alpha(0.05, 1.2, 0.03) == pytest.approx(0.014, abs=1e-12)


def test_capm_alpha_zero_beta_passes_return_through():
    assert capm_alpha(0.07, 0.0, 0.03) == pytest.approx(0.07)


def test_capm_alpha_flat_market():
    assert capm_alpha(0.02, 1.5, 0.0) == pytest.approx(0.02)


# ---------------------------------------------------------------------------
# distance delta classification


@pytest.mark.parametrize(
    "d_actual, d_optimized, expected",
    [
        (0.5, 0.3, "closer"),
        (0.3, 0.5, "farther"),
        (0.30, 0.3005, "unchanged"),
        (0.3005, 0.30, "unchanged"),
        (0.0, 0.0, "unchanged"),
    ],
)
def test_distance_delta_classification(d_actual, d_optimized, expected):
    assert distance_delta_vs_naive(d_actual, d_optimized) == expected


def test_distance_delta_threshold_is_strict():
    # a move of exactly eps is already a move
    assert distance_delta_vs_naive(0.3, 0.301, eps=0.001) == "farther"
    assert distance_delta_vs_naive(0.301, 0.3, eps=0.001) == "closer"


def test_distance_delta_rejects_negative_eps():
    with pytest.raises(ValueError, match="eps"):
        distance_delta_vs_naive(0.1, 0.2, eps=-0.5)


# ---------------------------------------------------------------------------
# aggregation


def _rec(snap, account, strategy, ret, alpha=0.0, market=0.0, beta=1.0):
    return PerfRecord(
        snapshot=snap,
        account=account,
        strategy=strategy,
        fwd_return=ret,
        beta=beta,
        alpha=alpha,
        market_fwd_return=market,
    )


SNAP1 = dt.date(2024, 1, 1)
SNAP2 = dt.date(2024, 2, 1)


def test_aggregate_empty_input():
    assert aggregate([]) == AggregateReport((), ())


def test_aggregate_hit_rate_counts_strict_wins():
    recs = [
        _rec(SNAP1, "a", "min_var", 0.01),
        _rec(SNAP1, "b", "min_var", 0.02),
        _rec(SNAP1, "c", "min_var", 0.03),
        _rec(SNAP1, "a", "baseline", 0.00),
        _rec(SNAP1, "b", "baseline", 0.00),
        _rec(SNAP1, "c", "baseline", 0.05),
    ]
    report = aggregate(recs)
    by_name = {s.strategy: s for s in report.summaries}
    assert by_name["min_var"].hit_rate == pytest.approx(2 / 3)
    assert by_name["baseline"].hit_rate is None


def test_aggregate_median_of_snapshot_medians():
    # snapshot medians 0.02 and 0.10; the report takes their median, not
    # the pooled median over all six records
    recs = [
        _rec(SNAP1, "a", "s", 0.01),
        _rec(SNAP1, "b", "s", 0.02),
        _rec(SNAP1, "c", "s", 0.03),
        _rec(SNAP2, "a", "s", 0.09),
        _rec(SNAP2, "b", "s", 0.10),
        _rec(SNAP2, "c", "s", 0.11),
    ]
    report = aggregate(recs)
    (summary,) = report.summaries
    assert summary.median_return == pytest.approx(0.06)
    assert summary.n_records == 6


def test_aggregate_cumulative_excess_curve():
    recs = [
        _rec(SNAP1, "a", "s", 0.05, market=0.02),
        _rec(SNAP2, "a", "s", 0.01, market=0.03),
    ]
    report = aggregate(recs)
    points = [p for p in report.excess_curve if p.strategy == "s"]
    assert [p.snapshot for p in points] == [SNAP1, SNAP2]
    assert points[0].cumulative_excess == pytest.approx(0.03)
    assert points[1].cumulative_excess == pytest.approx(0.01)


def test_aggregate_alpha_summaries():
    recs = [
        _rec(SNAP1, "a", "s", 0.01, alpha=0.02),
        _rec(SNAP1, "b", "s", 0.02, alpha=-0.01),
        _rec(SNAP2, "a", "s", 0.03, alpha=0.01),
        _rec(SNAP2, "b", "s", 0.04, alpha=0.03),
    ]
    report = aggregate(recs)
    (summary,) = report.summaries
    # per-snapshot alpha medians 0.005 and 0.02
    assert summary.median_alpha == pytest.approx(0.0125)
    assert summary.frac_positive_alpha == pytest.approx((0.5 + 1.0) / 2)


def test_aggregate_missing_baseline_warns(caplog):
    recs = [_rec(SNAP1, "a", "min_var", 0.01)]
    with caplog.at_level(logging.WARNING):
        report = aggregate(recs)
    (summary,) = report.summaries
    assert summary.hit_rate is None
    assert any("baseline" in message for message in caplog.messages)


def test_aggregate_hit_rate_matches_accounts_not_positions():
    # account d has no baseline record and must not affect the hit rate
    recs = [
        _rec(SNAP1, "a", "s", 0.02),
        _rec(SNAP1, "d", "s", -0.50),
        _rec(SNAP1, "a", "baseline", 0.01),
    ]
    report = aggregate(recs)
    by_name = {s.strategy: s for s in report.summaries}
    assert by_name["s"].hit_rate == pytest.approx(1.0)


def test_aggregate_orders_strategies_and_snapshots():
    recs = [
        _rec(SNAP2, "a", "zeta", 0.01),
        _rec(SNAP1, "a", "alpha", 0.02),
        _rec(SNAP1, "a", "zeta", 0.03),
    ]
    report = aggregate(recs)
    assert [s.strategy for s in report.summaries] == ["alpha", "zeta"]
    zeta_points = [p.snapshot for p in report.excess_curve if p.strategy == "zeta"]
    assert zeta_points == sorted(zeta_points)


def test_aggregate_median_return_is_finite():
    recs = [_rec(SNAP1, "a", "s", 0.01, market=0.005)]
    report = aggregate(recs)
    assert all(math.isfinite(s.median_return) for s in report.summaries)
