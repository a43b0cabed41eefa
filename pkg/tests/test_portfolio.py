"""Snapshot reconstruction tests, anchored on the golden two-token account:
alice ends up with 370 X at $2 and 200 Y at $1, a $940 portfolio with
weights (740/940, 200/940).
"""

from __future__ import annotations

import datetime as dt

import numpy as np
import pytest

from chainfrontier.ingest import ZERO_ACCOUNT, TransferEvent, build_ledger
from chainfrontier.marketdata import (
    MomentEstimates,
    PriceSeries,
    forward_fill,
)
from chainfrontier.portfolio import (
    BlockTimeMap,
    Portfolio,
    Position,
    Snapshot,
    WealthBin,
    assign_wealth_bin,
    monthly_snapshots,
    portfolio_beta,
    portfolio_moments,
    reconstruct_snapshot,
    restrict_portfolio,
)

D = dt.date


def golden_ledgers():
    events_x = [
        TransferEvent("X", 1, 0, ZERO_ACCOUNT, "alice", 500),
        TransferEvent("X", 2, 0, "alice", "bob", 100),
        TransferEvent("X", 3, 0, "bob", "carol", 50),
        TransferEvent("X", 4, 0, "alice", "carol", 30),
    ]
    events_y = [
        TransferEvent("Y", 1, 1, ZERO_ACCOUNT, "carol", 300),
        TransferEvent("Y", 3, 1, "carol", "alice", 200),
    ]
    return {
        "X": build_ledger(events_x, decimals=0),
        "Y": build_ledger(events_y, decimals=0),
    }


def golden_prices(snapshot_day):
    return {
        "X": forward_fill(
            PriceSeries.from_observations("X", {snapshot_day: 2.0}), through=snapshot_day
        ),
        "Y": forward_fill(
            PriceSeries.from_observations("Y", {snapshot_day: 1.0}), through=snapshot_day
        ),
    }


# ---------------------------------------------------------------------------
# block-time map and snapshot calendar
# ---------------------------------------------------------------------------


def test_block_map_resolves_latest_block_at_or_before():
    bmap = BlockTimeMap(((0, D(2023, 1, 1)), (100, D(2023, 1, 2)), (200, D(2023, 1, 3))))
    assert bmap.block_for(D(2023, 1, 1)) == 0
    assert bmap.block_for(D(2023, 1, 2)) == 100
    assert bmap.block_for(D(2023, 6, 1)) == 200
    assert bmap.date_for(150) == D(2023, 1, 2)
    with pytest.raises(ValueError):
        bmap.block_for(D(2022, 12, 31))


def test_block_map_rejects_non_monotone():
    with pytest.raises(ValueError):
        BlockTimeMap(((10, D(2023, 1, 1)), (5, D(2023, 1, 2))))
    with pytest.raises(ValueError):
        BlockTimeMap(((1, D(2023, 1, 2)), (2, D(2023, 1, 1))))


def test_monthly_snapshots_first_of_month():
    anchors = tuple(
        (i * 1000, D(2023, 1, 1) + dt.timedelta(days=i)) for i in range(120)
    )
    bmap = BlockTimeMap(anchors)
    snaps = monthly_snapshots(D(2023, 1, 15), D(2023, 4, 20), bmap)
    assert [s.timestamp for s in snaps] == [D(2023, 2, 1), D(2023, 3, 1), D(2023, 4, 1)]
    assert snaps[0].block == bmap.block_for(D(2023, 2, 1))
    assert snaps[0].month == "2023-02"
    # a start already on the first of the month is included
    snaps = monthly_snapshots(D(2023, 2, 1), D(2023, 3, 1), bmap)
    assert [s.timestamp for s in snaps] == [D(2023, 2, 1), D(2023, 3, 1)]


# ---------------------------------------------------------------------------
# reconstruction
# ---------------------------------------------------------------------------


def test_golden_portfolio_weights():
    day = D(2023, 2, 1)
    snap = Snapshot(day, block=4)
    p = reconstruct_snapshot(golden_ledgers(), golden_prices(day), "alice", snap)
    assert p is not None
    assert p.token_ids == ("X", "Y")
    assert p.positions[0].base_units == 370
    assert p.positions[1].base_units == 200
    assert p.total_value == pytest.approx(940.0, abs=1e-12)
    assert p.weights[0] == pytest.approx(740.0 / 940.0, abs=1e-12)
    assert p.weights[1] == pytest.approx(200.0 / 940.0, abs=1e-12)
    assert abs(p.weights.sum() - 1.0) <= 1e-12


def test_unknown_account_is_empty():
    day = D(2023, 2, 1)
    snap = Snapshot(day, block=4)
    assert reconstruct_snapshot(golden_ledgers(), golden_prices(day), "mallory", snap) is None


def test_snapshot_before_any_activity_is_empty():
    day = D(2023, 2, 1)
    snap = Snapshot(day, block=0)
    assert reconstruct_snapshot(golden_ledgers(), golden_prices(day), "alice", snap) is None


def test_missing_price_excludes_position():
    day = D(2023, 2, 1)
    snap = Snapshot(day, block=4)
    prices = golden_prices(day)
    del prices["Y"]
    p = reconstruct_snapshot(golden_ledgers(), prices, "alice", snap)
    assert p is not None
    assert p.token_ids == ("X",)
    assert p.excluded == ("Y",)
    assert p.weights[0] == pytest.approx(1.0, abs=1e-15)


def test_all_prices_missing_is_empty():
    day = D(2023, 2, 1)
    snap = Snapshot(day, block=4)
    assert reconstruct_snapshot(golden_ledgers(), {}, "alice", snap) is None


def test_decimals_scale_quantity():
    events = [TransferEvent("X", 1, 0, ZERO_ACCOUNT, "alice", 2_500_000)]
    ledgers = {"X": build_ledger(events, decimals=6)}
    day = D(2023, 2, 1)
    prices = {"X": PriceSeries.from_observations("X", {day: 4.0})}
    p = reconstruct_snapshot(ledgers, prices, "alice", Snapshot(day, 1))
    assert p is not None
    assert p.positions[0].quantity == pytest.approx(2.5)
    assert p.total_value == pytest.approx(10.0)


def test_restrict_portfolio_renormalises():
    day = D(2023, 2, 1)
    snap = Snapshot(day, block=4)
    p = reconstruct_snapshot(golden_ledgers(), golden_prices(day), "alice", snap)
    cut = restrict_portfolio(p, ["X"])
    assert cut is not None
    assert cut.token_ids == ("X",)
    assert cut.weights[0] == pytest.approx(1.0)
    assert "Y" in cut.excluded
    assert restrict_portfolio(p, ["Z"]) is None


# ---------------------------------------------------------------------------
# moments and beta
# ---------------------------------------------------------------------------


def _portfolio(weights: dict[str, float], value=1000.0) -> Portfolio:
    snap = Snapshot(D(2023, 2, 1), 1)
    positions = tuple(
        Position(tid, int(w * value), w * value, w * value)
        for tid, w in sorted(weights.items())
    )
    return Portfolio("acct", snap, positions, value)


def _moments(ids, means, cov) -> MomentEstimates:
    means = np.asarray(means, dtype=float)
    cov = np.asarray(cov, dtype=float)
    return MomentEstimates(
        asset_ids=tuple(ids),
        eligible=np.ones(len(ids), dtype=bool),
        eligible_ids=tuple(ids),
        raw_means=means,
        shrunk_means=means,
        cross_mean=float(means.mean()),
        cov=cov,
        lw_intensity=0.0,
        n_obs=60,
    )


def test_portfolio_moments_quadratic_form():
    p = _portfolio({"A": 0.5, "B": 0.5})
    m = _moments(["A", "B"], [0.01, 0.03], [[0.04, 0.0], [0.0, 0.04]])
    mu, sigma = portfolio_moments(p, m)
    assert mu == pytest.approx(0.02, abs=1e-15)
    assert sigma == pytest.approx(np.sqrt(0.25 * 0.04 + 0.25 * 0.04), abs=1e-15)


def test_portfolio_moments_dimension_mismatch():
    p = _portfolio({"A": 0.5, "Z": 0.5})
    m = _moments(["A", "B"], [0.01, 0.03], [[0.04, 0.0], [0.0, 0.04]])
    with pytest.raises(ValueError, match="Z"):
        portfolio_moments(p, m)


def test_portfolio_beta_weighted_average():
    p = _portfolio({"A": 0.5, "B": 0.5})
    assert portfolio_beta(p, {"A": 0.8, "B": 1.2}) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError, match="beta"):
        portfolio_beta(p, {"A": 0.8})


# ---------------------------------------------------------------------------
# wealth bins
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "value, expected",
    [
        (0.5, WealthBin.UP_TO_1),
        (1.0, WealthBin.UP_TO_1),
        (1.01, WealthBin.UP_TO_100),
        (100.0, WealthBin.UP_TO_100),
        (100.5, WealthBin.UP_TO_1K),
        (1_000.0, WealthBin.UP_TO_1K),
        (10_000.0, WealthBin.UP_TO_10K),
        (99_999.0, WealthBin.UP_TO_100K),
        (100_000.0, WealthBin.UP_TO_100K),
        (150_000.0, WealthBin.ABOVE_100K),
    ],
)
def test_wealth_bins_right_closed(value, expected):
    assert assign_wealth_bin(value) is expected


def test_wealth_bin_rejects_nonpositive():
    with pytest.raises(ValueError):
        assign_wealth_bin(0.0)
    with pytest.raises(ValueError):
        assign_wealth_bin(-5.0)
