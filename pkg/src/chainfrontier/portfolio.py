"""Portfolio reconstruction at monthly snapshots.

Balances come out of the token ledgers as exact base-unit integers; USD
conversion is the only place floats enter. Snapshots sit on the first day
of each calendar month and resolve to a block height through a monotone
block-time mapping.
"""

from __future__ import annotations

import bisect
import datetime as dt
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .ingest import TokenLedger, balance_at
from .marketdata import MomentEstimates, PriceSeries


@dataclass(frozen=True)
class BlockTimeMap:
    """Monotone mapping between block heights and calendar days.

    Anchors are (block, date) pairs, strictly increasing on both sides.
    ``block_for`` resolves a snapshot day to the highest block known to
    have happened by that day.
    """

    anchors: tuple[tuple[int, dt.date], ...]

    def __post_init__(self):
        if not self.anchors:
            raise ValueError("block-time map needs at least one anchor")
        blocks = [a[0] for a in self.anchors]
        days = [a[1] for a in self.anchors]
        if any(b2 <= b1 for b1, b2 in zip(blocks, blocks[1:])):
            raise ValueError("anchor blocks must be strictly increasing")
        if any(d2 <= d1 for d1, d2 in zip(days, days[1:])):
            raise ValueError("anchor dates must be strictly increasing")

    def block_for(self, day: dt.date) -> int:
        days = [a[1] for a in self.anchors]
        i = bisect.bisect_right(days, day)
        if i == 0:
            raise ValueError(f"{day} precedes the first block anchor")
        return self.anchors[i - 1][0]

    def date_for(self, block: int) -> dt.date:
        blocks = [a[0] for a in self.anchors]
        i = bisect.bisect_right(blocks, block)
        if i == 0:
            raise ValueError(f"block {block} precedes the first anchor")
        return self.anchors[i - 1][1]


@dataclass(frozen=True)
class Snapshot:
    """A reconstruction instant: first day of a month plus its block height."""

    timestamp: dt.date
    block: int

    @property
    def month(self) -> str:
        return self.timestamp.strftime("%Y-%m")


def monthly_snapshots(
    start: dt.date, end: dt.date, block_map: BlockTimeMap
) -> list[Snapshot]:
    """All first-of-month snapshots with start <= timestamp <= end."""
    if end < start:
        raise ValueError("end before start")
    out: list[Snapshot] = []
    year, month = start.year, start.month
    if start.day > 1:
        year, month = (year + 1, 1) if month == 12 else (year, month + 1)
    while True:
        day = dt.date(year, month, 1)
        if day > end:
            break
        out.append(Snapshot(day, block_map.block_for(day)))
        year, month = (year + 1, 1) if month == 12 else (year, month + 1)
    return out


@dataclass(frozen=True)
class Position:
    """One token holding: exact base units plus its USD valuation."""

    token_id: str
    base_units: int
    quantity: float
    value: float


@dataclass(frozen=True, eq=False)
class Portfolio:
    """An account's priced holdings at one snapshot.

    Positions are sorted by token id. ``excluded`` lists tokens the account
    held but that had no usable price on the snapshot day.
    """

    account: str
    snapshot: Snapshot
    positions: tuple[Position, ...]
    total_value: float
    excluded: tuple[str, ...] = ()

    @property
    def token_ids(self) -> tuple[str, ...]:
        return tuple(p.token_id for p in self.positions)

    @property
    def weights(self) -> np.ndarray:
        return np.array([p.value / self.total_value for p in self.positions])

    @property
    def n_assets(self) -> int:
        return len(self.positions)


def reconstruct_snapshot(
    ledgers: Mapping[str, TokenLedger],
    prices: Mapping[str, PriceSeries],
    account: str,
    snapshot: Snapshot,
) -> Portfolio | None:
    """Price an account's balances at a snapshot into a weight vector.

    Price series must already be forward-filled through the snapshot day;
    tokens without a close on that day are excluded and recorded. Returns
    None when nothing prices to a positive value, which callers treat as
    an empty portfolio and keep out of downstream statistics.
    """
    positions: list[Position] = []
    excluded: list[str] = []
    for token_id in sorted(ledgers):
        ledger = ledgers[token_id]
        units = balance_at(ledger, account, snapshot.block)
        if units == 0:
            continue
        if units < 0:
            raise ValueError(
                f"negative balance for {account!r} in {token_id!r}: {units}"
            )
        series = prices.get(token_id)
        close = series.close_on(snapshot.timestamp) if series is not None else None
        if close is None:
            excluded.append(token_id)
            continue
        quantity = units / 10**ledger.decimals
        positions.append(Position(token_id, units, quantity, quantity * close))

    total = sum(p.value for p in positions)
    if total <= 0:
        return None
    return Portfolio(account, snapshot, tuple(positions), total, tuple(excluded))


def restrict_portfolio(p: Portfolio, keep: Sequence[str]) -> Portfolio | None:
    """Drop positions outside ``keep`` and renormalise weights by value.

    Used to cut a portfolio down to the assets with enough return history;
    returns None when nothing is left.
    """
    keep_set = set(keep)
    kept = tuple(pos for pos in p.positions if pos.token_id in keep_set)
    dropped = tuple(pos.token_id for pos in p.positions if pos.token_id not in keep_set)
    total = sum(pos.value for pos in kept)
    if not kept or total <= 0:
        return None
    return Portfolio(p.account, p.snapshot, kept, total, p.excluded + dropped)


def portfolio_moments(p: Portfolio, m: MomentEstimates) -> tuple[float, float]:
    """Expected daily return and volatility of the held weight vector.

    Every held asset must be one of the estimate's eligible assets;
    anything else is a dimension mismatch, not a silent zero.
    """
    index = {tid: k for k, tid in enumerate(m.eligible_ids)}
    missing = [tid for tid in p.token_ids if tid not in index]
    if missing:
        raise ValueError(f"no moment estimates for held assets: {missing}")
    w = np.zeros(len(m.eligible_ids))
    for pos, weight in zip(p.positions, p.weights):
        w[index[pos.token_id]] = weight
    mu = float(w @ m.shrunk_means)
    var = float(w @ m.cov @ w)
    sigma = float(np.sqrt(max(var, 0.0)))
    return mu, sigma


def portfolio_beta(p: Portfolio, betas: Mapping[str, float]) -> float:
    """Value-weighted average of the held assets' market betas."""
    total = 0.0
    for pos, weight in zip(p.positions, p.weights):
        beta = betas.get(pos.token_id)
        if beta is None:
            raise ValueError(f"no beta for held asset {pos.token_id!r}")
        total += weight * beta
    return total


class WealthBin(Enum):
    """Right-closed USD wealth brackets for cohort reporting."""

    UP_TO_1 = "(0,1]"
    UP_TO_100 = "(1,100]"
    UP_TO_1K = "(100,1K]"
    UP_TO_10K = "(1K,10K]"
    UP_TO_100K = "(10K,100K]"
    ABOVE_100K = "(100K,inf)"


_BIN_EDGES = (1.0, 100.0, 1_000.0, 10_000.0, 100_000.0)
_BIN_ORDER = tuple(WealthBin)


def assign_wealth_bin(total_value: float) -> WealthBin:
    """Map a positive portfolio value to its wealth bracket.

    Edges are right-closed: exactly $100 belongs to (1,100].
    """
    if not total_value > 0:
        raise ValueError(f"portfolio value must be positive, got {total_value}")
    return _BIN_ORDER[bisect.bisect_left(_BIN_EDGES, total_value)]
