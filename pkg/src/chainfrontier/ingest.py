"""Event-sourced token ledgers.

Rebuilds exact per-account balance histories from ordered transfer-event
streams and screens tokens for inclusion before any statistics run. All
amounts are integers in base units; nothing here touches floats, so
reconstruction is exact by construction.
"""

from __future__ import annotations

import bisect
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping, Sequence

from .errors import LedgerOrderError, MalformedRecordError, OracleLookupError

# Reserved identifier for the mint/burn counterparty. Transfers from it are
# mints (deposits), transfers to it are burns (withdrawals).
ZERO_ACCOUNT = "0x0"

EVENT_KINDS = ("transfer", "deposit", "withdrawal")


@dataclass(frozen=True)
class TransferEvent:
    """One token movement, normalized to sender/recipient form.

    ``amount`` is a non-negative int in base units. ``block`` and
    ``log_index`` order events within a token.
    """

    token_id: str
    block: int
    log_index: int
    sender: str
    recipient: str
    amount: int


@dataclass(frozen=True)
class LedgerEntry:
    """A signed balance change for one account.

    Every transfer between two live accounts yields a debit entry
    (negative delta) followed by a credit entry (positive delta); mints
    and burns yield only the credit or only the debit.
    """

    token_id: str
    account: str
    block: int
    log_index: int
    delta: int


class FilterStage(Enum):
    """Screening stages, in the order they are applied."""

    NON_COMPLIANT = "non_compliant"
    INSUFFICIENT_PRICING = "insufficient_pricing"
    NEGLIGIBLE_VOLUME = "negligible_volume"
    INVALID_SUPPLY = "invalid_supply"
    INCONSISTENT_BALANCE = "inconsistent_balance"


@dataclass(frozen=True)
class TokenMeta:
    """Descriptive token fields used by the screening stages.

    ``None`` means the field is unknown upstream; each filter treats
    unknowns conservatively (see ``filter_tokens``).
    """

    token_id: str
    decimals: int
    price_history_days: int | None = None
    total_volume: float | None = None
    market_cap: float | None = None
    fdv: float | None = None
    erc20_compliant: bool = True
    reference_mcap: float | None = None


@dataclass(frozen=True)
class FilterReport:
    token_id: str
    passed: bool
    rejected_stage: FilterStage | None = None
    detail: str = ""


@dataclass(frozen=True)
class TokenLedger:
    """Full reconstructed entry stream for one token plus a query index.

    ``entries`` keep event order: sorted by (block, log_index), debit
    before credit within an event. ``minted``/``burned`` total the
    zero-account flows, so minted - burned equals the sum of all live
    balances at the head of the chain.
    """

    token_id: str
    decimals: int
    entries: tuple[LedgerEntry, ...]
    minted: int
    burned: int
    # per account: parallel (blocks, cumulative balances), one point per
    # block that touched the account, used for O(log n) balance queries
    _index: dict[str, tuple[list[int], list[int]]] = field(
        repr=False, compare=False, default_factory=dict
    )

    @property
    def accounts(self) -> tuple[str, ...]:
        return tuple(sorted(self._index))

    @property
    def max_block(self) -> int:
        return self.entries[-1].block if self.entries else 0


def parse_events(
    records: Iterable[Mapping[str, object]],
    *,
    zero_account: str = ZERO_ACCOUNT,
    rejected: list[tuple[int, str]] | None = None,
) -> list[TransferEvent]:
    """Normalize raw event records into TransferEvents.

    Records are mappings with keys ``token_id``, ``block``, ``log_index``,
    ``event_kind``, ``from``, ``to``, ``amount``. Deposit records carry the
    account on the ``to`` side and are rewritten as mints from the zero
    account; withdrawals carry it on ``from`` and become burns. Input order
    is preserved.

    Structurally malformed records raise :class:`MalformedRecordError` with
    their 1-based position. Records with a negative amount are dropped; pass
    ``rejected`` to collect their positions and reasons.

    Parameters
    ----------
    records : iterable of mappings
        Raw rows, e.g. from ``csv.DictReader``.
    zero_account : str
        Identifier of the mint/burn counterparty.
    rejected : list, optional
        Receives ``(position, reason)`` for each dropped record.
    """
    events: list[TransferEvent] = []
    for pos, rec in enumerate(records, start=1):
        token_id = _req_str(rec, "token_id", pos)
        block = _req_int(rec, "block", pos)
        log_index = _req_int(rec, "log_index", pos)
        kind = _req_str(rec, "event_kind", pos)
        amount = _req_int(rec, "amount", pos)

        if kind not in EVENT_KINDS:
            raise MalformedRecordError(pos, f"unknown event_kind {kind!r}")
        if block < 0 or log_index < 0:
            raise MalformedRecordError(pos, "negative block or log_index")

        if amount < 0:
            if rejected is not None:
                rejected.append((pos, f"negative amount {amount}"))
            continue

        sender = _opt_str(rec, "from")
        recipient = _opt_str(rec, "to")
        if kind == "transfer":
            if not sender or not recipient:
                raise MalformedRecordError(pos, "transfer needs both from and to")
        elif kind == "deposit":
            account = recipient or sender
            if not account:
                raise MalformedRecordError(pos, "deposit needs an account")
            sender, recipient = zero_account, account
        else:  # withdrawal
            account = sender or recipient
            if not account:
                raise MalformedRecordError(pos, "withdrawal needs an account")
            sender, recipient = account, zero_account

        events.append(
            TransferEvent(token_id, block, log_index, sender, recipient, amount)
        )
    return events


def _req_str(rec: Mapping[str, object], key: str, pos: int) -> str:
    val = rec.get(key)
    if val is None or str(val) == "":
        raise MalformedRecordError(pos, f"missing field {key!r}")
    return str(val)


def _opt_str(rec: Mapping[str, object], key: str) -> str:
    val = rec.get(key)
    return "" if val is None else str(val)


def _req_int(rec: Mapping[str, object], key: str, pos: int) -> int:
    val = rec.get(key)
    if val is None or str(val) == "":
        raise MalformedRecordError(pos, f"missing field {key!r}")
    if isinstance(val, bool) or isinstance(val, float):
        raise MalformedRecordError(pos, f"field {key!r} must be an integer")
    try:
        return int(val)
    except (TypeError, ValueError):
        raise MalformedRecordError(pos, f"field {key!r} is not an integer: {val!r}")


def build_ledger(
    events: Sequence[TransferEvent],
    decimals: int,
    *,
    zero_account: str = ZERO_ACCOUNT,
) -> TokenLedger:
    """Expand an ordered single-token event stream into ledger entries.

    Each transfer produces a debit for the sender and a credit for the
    recipient; mints skip the debit, burns skip the credit. Events must be
    strictly ordered by (block, log_index); mixing tokens or handing over
    unsorted input is an error rather than something we silently repair.
    """
    if decimals < 0:
        raise ValueError("decimals must be >= 0")

    entries: list[LedgerEntry] = []
    minted = 0
    burned = 0
    token_id: str | None = None
    prev_key: tuple[int, int] | None = None
    index: dict[str, tuple[list[int], list[int]]] = {}

    for ev in events:
        if token_id is None:
            token_id = ev.token_id
        elif ev.token_id != token_id:
            raise ValueError(
                f"mixed token stream: {ev.token_id!r} in ledger for {token_id!r}"
            )
        key = (ev.block, ev.log_index)
        if prev_key is not None and key <= prev_key:
            raise LedgerOrderError(
                f"events not sorted by (block, log_index): {key} after {prev_key}"
            )
        prev_key = key
        if ev.amount < 0:
            raise ValueError("negative amount reached the ledger builder")

        from_zero = ev.sender == zero_account
        to_zero = ev.recipient == zero_account
        if from_zero and to_zero:
            continue  # degenerate zero-to-zero event moves nothing
        if from_zero:
            minted += ev.amount
        else:
            entries.append(
                LedgerEntry(token_id, ev.sender, ev.block, ev.log_index, -ev.amount)
            )
            _index_add(index, ev.sender, ev.block, -ev.amount)
        if to_zero:
            burned += ev.amount
        else:
            entries.append(
                LedgerEntry(token_id, ev.recipient, ev.block, ev.log_index, ev.amount)
            )
            _index_add(index, ev.recipient, ev.block, ev.amount)

    return TokenLedger(
        token_id=token_id if token_id is not None else "",
        decimals=decimals,
        entries=tuple(entries),
        minted=minted,
        burned=burned,
        _index=index,
    )


def _index_add(
    index: dict[str, tuple[list[int], list[int]]], account: str, block: int, delta: int
) -> None:
    blocks, cums = index.setdefault(account, ([], []))
    total = (cums[-1] if cums else 0) + delta
    if blocks and blocks[-1] == block:
        cums[-1] = total
    else:
        blocks.append(block)
        cums.append(total)


def ledger_from_entries(
    entries: Sequence[LedgerEntry], decimals: int, minted: int = 0, burned: int = 0
) -> TokenLedger:
    """Rehydrate a TokenLedger from stored entries (already expanded).

    Entries must be in non-decreasing (block, log_index) order, the order
    ``build_ledger`` wrote them in.
    """
    index: dict[str, tuple[list[int], list[int]]] = {}
    token_id = entries[0].token_id if entries else ""
    prev: tuple[int, int] | None = None
    for e in entries:
        if e.token_id != token_id:
            raise ValueError("mixed token stream in ledger entries")
        key = (e.block, e.log_index)
        if prev is not None and key < prev:
            raise LedgerOrderError("ledger entries not sorted by (block, log_index)")
        prev = key
        _index_add(index, e.account, e.block, e.delta)
    return TokenLedger(token_id, decimals, tuple(entries), minted, burned, index)


def balance_at(ledger: TokenLedger, account: str, block: int) -> int:
    """Exact balance of ``account`` after all entries with block <= ``block``.

    Pure integer arithmetic; accounts the ledger never saw, and blocks
    before an account's first entry, are zero.
    """
    pair = ledger._index.get(account)
    if pair is None:
        return 0
    blocks, cums = pair
    i = bisect.bisect_right(blocks, block)
    return cums[i - 1] if i else 0


def replay_balance(
    entries: Iterable[LedgerEntry], account: str, block: int
) -> int:
    """Naive linear-scan balance, kept as an independent cross-check
    for the indexed ``balance_at`` path."""
    total = 0
    for e in entries:
        if e.block <= block and e.account == account:
            total += e.delta
    return total


def account_balances(ledger: TokenLedger, block: int | None = None) -> dict[str, int]:
    """All account balances at ``block`` (default: ledger head)."""
    if block is None:
        block = ledger.max_block
    out: dict[str, int] = {}
    for account in ledger._index:
        bal = balance_at(ledger, account, block)
        if bal:
            out[account] = bal
    return out


def filter_tokens(
    metas: Iterable[TokenMeta],
    min_price_days: int = 15,
    min_volume: float = 1.0,
) -> list[FilterReport]:
    """Screen tokens, recording the first failing stage per token.

    Stage order is fixed: compliance, pricing depth, cumulative volume,
    supply plausibility. Balance validation is a separate, per-ledger stage
    (``validate_reconstruction``). Unknown volume or pricing depth fails its
    stage; unknown market cap or FDV passes the supply check because there
    is nothing to compare.
    """
    reports: list[FilterReport] = []
    for meta in metas:
        reports.append(_screen_one(meta, min_price_days, min_volume))
    return reports


def _screen_one(
    meta: TokenMeta, min_price_days: int, min_volume: float
) -> FilterReport:
    if not meta.erc20_compliant:
        return FilterReport(
            meta.token_id, False, FilterStage.NON_COMPLIANT, "not ERC-20 compliant"
        )
    days = meta.price_history_days or 0
    if days < min_price_days:
        return FilterReport(
            meta.token_id,
            False,
            FilterStage.INSUFFICIENT_PRICING,
            f"{days} days of prices < {min_price_days}",
        )
    volume = meta.total_volume or 0.0
    if volume < min_volume:
        return FilterReport(
            meta.token_id,
            False,
            FilterStage.NEGLIGIBLE_VOLUME,
            f"cumulative volume {volume} < {min_volume}",
        )
    if meta.reference_mcap is not None:
        for label, value in (("market cap", meta.market_cap), ("fdv", meta.fdv)):
            if value is not None and value > meta.reference_mcap:
                return FilterReport(
                    meta.token_id,
                    False,
                    FilterStage.INVALID_SUPPLY,
                    f"{label} {value} exceeds reference {meta.reference_mcap}",
                )
    return FilterReport(meta.token_id, True)


def validate_reconstruction(
    ledger: TokenLedger,
    oracle: Callable[[str, int], int],
    samples: int = 200,
    seed: int = 0,
) -> FilterReport:
    """Probe the rebuilt ledger against a reference balance source.

    Draws ``samples`` (account, block) pairs uniformly from the ledger's
    accounts and block range using a local RNG seeded with ``seed``, so
    validation is reproducible. Any mismatch fails the token at the
    inconsistent-balance stage. Oracle failures raise
    :class:`OracleLookupError` instead of failing the token: an absent
    answer is not a wrong answer.
    """
    accounts = ledger.accounts
    if samples < 0:
        raise ValueError("samples must be >= 0")
    if not accounts or samples == 0:
        return FilterReport(ledger.token_id, True)

    rng = random.Random(seed)
    max_block = ledger.max_block
    for _ in range(samples):
        account = accounts[rng.randrange(len(accounts))]
        block = rng.randint(0, max_block)
        got = balance_at(ledger, account, block)
        try:
            expected = oracle(account, block)
        except Exception as exc:
            raise OracleLookupError(
                f"oracle failed for ({account!r}, {block})"
            ) from exc
        if got != expected:
            return FilterReport(
                ledger.token_id,
                False,
                FilterStage.INCONSISTENT_BALANCE,
                f"account {account} at block {block}: ledger {got} != reference {expected}",
            )
    return FilterReport(ledger.token_id, True)
