"""Incremental limit order book maintained from an add/cancel/execute event stream.

Prices are integer ticks. Streams are held as numpy structured arrays
(``EVENT_DTYPE``) so multi-million event days stay cheap to store; the single
event API (:class:`OrderEvent`, :func:`apply_event`) is a thin wrapper over the
same code path used by :func:`replay`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Iterable

import numpy as np
from sortedcontainers import SortedDict

BID, ASK = 0, 1
ADD, CANCEL, EXECUTE = 0, 1, 2

N_LEVELS = 10
NS_PER_SECOND = 1_000_000_000
SESSION_SECONDS = 23_400

EVENT_DTYPE = np.dtype(
    [
        ("timestamp", "<i8"),
        ("order_id", "<i8"),
        ("side", "u1"),
        ("action", "u1"),
        ("price", "<i8"),
        ("quantity", "<i8"),
    ]
)

SNAPSHOT_DTYPE = np.dtype(
    [("second", "<u4"), ("ask", "<i8", (N_LEVELS, 2)), ("bid", "<i8", (N_LEVELS, 2))]
)

_SIDE_CODES = {"B": BID, "A": ASK}
_ACTION_CODES = {"ADD": ADD, "CXL": CANCEL, "EXE": EXECUTE}
_SIDE_NAMES = {v: k for k, v in _SIDE_CODES.items()}
_ACTION_NAMES = {v: k for k, v in _ACTION_CODES.items()}


class BookError(Exception):
    """Base class for order book failures."""


class UnknownOrderId(BookError):
    pass


class OverRemoval(BookError):
    pass


class InvalidEvent(BookError):
    pass


class InvariantViolation(BookError):
    pass


class EmptySide(BookError):
    pass


class ReplayError(BookError):
    """An event failed while replaying; ``position`` is its index in the stream."""

    def __init__(self, position: int, cause: BookError):
        super().__init__(f"event #{position}: {cause}")
        self.position = position
        self.cause = cause


@dataclass(frozen=True)
class OrderEvent:
    timestamp: int  # ns since session open
    order_id: int
    side: int
    action: int
    price: int
    quantity: int

    @classmethod
    def add(cls, timestamp, order_id, side, price, quantity):
        return cls(timestamp, order_id, side, ADD, price, quantity)

    @classmethod
    def cancel(cls, timestamp, order_id, side, quantity):
        return cls(timestamp, order_id, side, CANCEL, 0, quantity)

    @classmethod
    def execute(cls, timestamp, order_id, side, quantity):
        return cls(timestamp, order_id, side, EXECUTE, 0, quantity)


class OrderBook:
    """Live orders plus per-side price level aggregates.

    ``levels[side]`` maps price -> total resting quantity; ``queues`` keeps the
    order ids resting at each level in arrival order so callers that need time
    priority (the synthetic flow generator) can find the oldest order.
    """

    def __init__(self):
        self.orders: dict[int, list] = {}  # order_id -> [side, price, remaining]
        self.levels = (SortedDict(), SortedDict())
        self.queues: dict[tuple[int, int], dict[int, None]] = {}

    def copy(self) -> "OrderBook":
        other = OrderBook()
        other.orders = {k: list(v) for k, v in self.orders.items()}
        other.levels = (SortedDict(self.levels[0]), SortedDict(self.levels[1]))
        other.queues = {k: dict(v) for k, v in self.queues.items()}
        return other

    def apply(self, order_id: int, side: int, action: int, price: int, quantity: int) -> None:
        if quantity <= 0:
            raise InvalidEvent(f"non-positive quantity {quantity} for order {order_id}")
        if action == ADD:
            if order_id in self.orders:
                raise InvalidEvent(f"duplicate order id {order_id}")
            if side != BID and side != ASK:
                raise InvalidEvent(f"bad side {side}")
            self.orders[order_id] = [side, price, quantity]
            lv = self.levels[side]
            lv[price] = lv.get(price, 0) + quantity
            q = self.queues.get((side, price))
            if q is None:
                self.queues[(side, price)] = {order_id: None}
            else:
                q[order_id] = None
            return
        order = self.orders.get(order_id)
        if order is None:
            raise UnknownOrderId(f"order {order_id} is not live")
        oside, oprice, remaining = order
        if quantity > remaining:
            raise OverRemoval(f"order {order_id}: removing {quantity} of {remaining}")
        if action != CANCEL and action != EXECUTE:
            raise InvalidEvent(f"bad action {action}")
        lv = self.levels[oside]
        agg = lv[oprice] - quantity
        if agg:
            lv[oprice] = agg
        else:
            del lv[oprice]
        if quantity == remaining:
            del self.orders[order_id]
            key = (oside, oprice)
            q = self.queues[key]
            del q[order_id]
            if not q:
                del self.queues[key]
        else:
            order[2] = remaining - quantity

    def best(self, side: int) -> int:
        """Best price on ``side`` or 0 when the side is empty."""
        lv = self.levels[side]
        if not lv:
            return 0
        return lv.peekitem(0)[0] if side == ASK else lv.peekitem(-1)[0]

    def top_levels(self, side: int, n: int = N_LEVELS) -> list[tuple[int, int]]:
        lv = self.levels[side]
        if side == ASK:
            keys = lv.islice(0, n)
        else:
            keys = lv.islice(max(len(lv) - n, 0), len(lv), reverse=True)
        return [(p, lv[p]) for p in keys]

    def check_consistency(self) -> None:
        """Recompute every level aggregate from live orders; raise on mismatch."""
        expect = ({}, {})
        for side, price, rem in self.orders.values():
            if rem <= 0:
                raise InvariantViolation("live order with non-positive remaining")
            expect[side][price] = expect[side].get(price, 0) + rem
        for side in (BID, ASK):
            if dict(self.levels[side]) != expect[side]:
                raise InvariantViolation(f"level aggregates out of sync on side {side}")


def apply_event(book: OrderBook, event: OrderEvent) -> OrderBook:
    """Apply one event in place. On error the book is left untouched."""
    book.apply(event.order_id, event.side, event.action, event.price, event.quantity)
    return book


@dataclass(frozen=True)
class BookSnapshot:
    timestamp: int  # seconds since session open
    ask_levels: tuple[tuple[int, int], ...]
    bid_levels: tuple[tuple[int, int], ...]

    @classmethod
    def from_record(cls, rec) -> "BookSnapshot":
        return cls(
            int(rec["second"]),
            tuple((int(p), int(v)) for p, v in rec["ask"]),
            tuple((int(p), int(v)) for p, v in rec["bid"]),
        )

    def to_record(self) -> np.ndarray:
        rec = np.zeros((), dtype=SNAPSHOT_DTYPE)
        rec["second"] = self.timestamp
        rec["ask"] = self.ask_levels
        rec["bid"] = self.bid_levels
        return rec


def _levels_row(book: OrderBook, n_levels: int) -> list[int]:
    asks = book.top_levels(ASK, n_levels)
    bids = book.top_levels(BID, n_levels)
    if asks and bids and asks[0][0] <= bids[0][0]:
        raise InvariantViolation(f"crossed book: bid {bids[0][0]} >= ask {asks[0][0]}")
    row = [0] * (4 * n_levels)
    for i, (p, v) in enumerate(asks):
        row[2 * i] = p
        row[2 * i + 1] = v
    off = 2 * n_levels
    for i, (p, v) in enumerate(bids):
        row[off + 2 * i] = p
        row[off + 2 * i + 1] = v
    return row


def snapshot(book: OrderBook, n_levels: int = N_LEVELS, t: int = 0) -> BookSnapshot:
    """Best ``n_levels`` per side, best first, zero padded."""
    row = _levels_row(book, n_levels)
    off = 2 * n_levels
    ask = tuple((row[2 * i], row[2 * i + 1]) for i in range(n_levels))
    bid = tuple((row[off + 2 * i], row[off + 2 * i + 1]) for i in range(n_levels))
    return BookSnapshot(t, ask, bid)


def mid_price(s) -> float:
    """Mean of best ask and best bid; accepts a BookSnapshot or a snapshot record."""
    if isinstance(s, BookSnapshot):
        ask, bid = s.ask_levels[0][0], s.bid_levels[0][0]
    else:
        ask, bid = int(s["ask"][0][0]), int(s["bid"][0][0])
    if ask == 0 or bid == 0:
        raise EmptySide("best ask or best bid is empty")
    return (ask + bid) / 2


def mid_prices(snaps: np.ndarray) -> np.ndarray:
    """Vectorised mid-price over a snapshot array; NaN where a side is empty."""
    ask = snaps["ask"][:, 0, 0].astype(np.float64)
    bid = snaps["bid"][:, 0, 0].astype(np.float64)
    mid = (ask + bid) / 2
    mid[(ask == 0) | (bid == 0)] = np.nan
    return mid


def as_event_array(events) -> np.ndarray:
    if isinstance(events, np.ndarray) and events.dtype == EVENT_DTYPE:
        return events
    rows = [(e.timestamp, e.order_id, e.side, e.action, e.price, e.quantity) for e in events]
    return np.array(rows, dtype=EVENT_DTYPE)


class Replayer:
    """Stateful replay over a time-ordered stream, one sampling boundary at a time.

    Events stamped exactly on a boundary belong to that boundary's snapshot.
    """

    def __init__(self, events, book: OrderBook | None = None, n_levels: int = N_LEVELS):
        self.events = as_event_array(events)
        ts = self.events["timestamp"]
        if len(ts) > 1 and np.any(np.diff(ts) < 0):
            bad = int(np.argmax(np.diff(ts) < 0)) + 1
            raise ReplayError(bad, InvalidEvent("timestamps decrease"))
        self.book = book if book is not None else OrderBook()
        self.n_levels = n_levels
        self.pos = 0
        self._cols = [self.events[c].tolist() for c in ("order_id", "side", "action", "price", "quantity")]
        self._ts = np.ascontiguousarray(ts)

    def advance_to(self, boundary_ns: int) -> None:
        self._advance(int(np.searchsorted(self._ts, boundary_ns, side="right")))

    def _advance(self, end: int) -> None:
        oids, sides, actions, prices, qtys = self._cols
        apply = self.book.apply
        i = self.pos
        try:
            for i in range(self.pos, end):
                apply(oids[i], sides[i], actions[i], prices[i], qtys[i])
        except BookError as exc:
            self.pos = i
            raise ReplayError(i, exc) from exc
        self.pos = end

    def run(self, first_second: int, n_seconds: int, interval: int = 1) -> np.ndarray:
        """Snapshots at ``first_second + k*interval`` for k in [0, n_seconds)."""
        out = np.zeros(n_seconds, dtype=SNAPSHOT_DTYPE)
        flat = np.zeros((n_seconds, 4 * self.n_levels), dtype=np.int64)
        secs = first_second + interval * np.arange(n_seconds, dtype=np.int64)
        ends = np.searchsorted(self._ts, secs * NS_PER_SECOND, side="right").tolist()
        prev = -1
        for k in range(n_seconds):
            if ends[k] == prev and k:
                flat[k] = flat[k - 1]
                continue
            self._advance(ends[k])
            flat[k] = _levels_row(self.book, self.n_levels)
            prev = ends[k]
        out["second"] = secs
        half = 2 * self.n_levels
        out["ask"] = flat[:, :half].reshape(n_seconds, self.n_levels, 2)
        out["bid"] = flat[:, half:].reshape(n_seconds, self.n_levels, 2)
        return out


def replay(events, sample_interval: int = 1, session_length: int = SESSION_SECONDS,
           book: OrderBook | None = None) -> np.ndarray:
    """One snapshot per boundary ``k*sample_interval``, k = 1..ceil(session_length/interval)."""
    n = math.ceil(session_length / sample_interval)
    return Replayer(events, book).run(sample_interval, n, sample_interval)


# -- files -------------------------------------------------------------------

def write_events(path, events, ticksize: Decimal | str = "0.01") -> None:
    ev = as_event_array(events)
    lines = [f"ticksize={ticksize}\n"]
    for ts, oid, side, action, price, qty in zip(*(ev[c].tolist() for c in EVENT_DTYPE.names)):
        lines.append(f"{ts},{oid},{_SIDE_NAMES[side]},{_ACTION_NAMES[action]},{price},{qty}\n")
    Path(path).write_text("".join(lines))


def read_events(path) -> tuple[np.ndarray, Decimal]:
    import pandas as pd

    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
    key, _, value = header.partition("=")
    if key != "ticksize":
        raise InvalidEvent(f"{path}: missing ticksize header")
    df = pd.read_csv(
        path, skiprows=1, header=None,
        names=["timestamp", "order_id", "side", "action", "price", "quantity"],
        dtype={"side": str, "action": str},
    )
    out = np.zeros(len(df), dtype=EVENT_DTYPE)
    out["timestamp"] = df["timestamp"].to_numpy()
    out["order_id"] = df["order_id"].to_numpy()
    try:
        out["side"] = df["side"].map(_SIDE_CODES).to_numpy()
        out["action"] = df["action"].map(_ACTION_CODES).to_numpy()
    except (TypeError, ValueError) as exc:
        raise InvalidEvent(f"{path}: unknown side/action code") from exc
    out["price"] = df["price"].to_numpy()
    out["quantity"] = df["quantity"].to_numpy()
    return out, Decimal(value)


def write_snapshots(path, snaps: np.ndarray, append: bool = False) -> None:
    with open(path, "ab" if append else "wb") as fh:
        fh.write(np.ascontiguousarray(snaps, dtype=SNAPSHOT_DTYPE).tobytes())


def read_snapshots(path, mmap: bool = False) -> np.ndarray:
    if mmap:
        return np.memmap(path, dtype=SNAPSHOT_DTYPE, mode="r")
    return np.fromfile(path, dtype=SNAPSHOT_DTYPE)
