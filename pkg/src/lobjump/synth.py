"""Synthetic order flow with planted jumps and an optional pre-jump liquidity signal.

The latent mid follows a per-second Brownian log-price with compound Poisson
jumps. Order flow is generated against a live book: adds sit on a geometric
ladder of tick offsets from the latent quote, executions hit the oldest order at
the best level, cancels pick random live orders. Orders that would cross the
moving quote are cancelled first, and those cancels count against the cancel
budget so daily totals track the configured rates.
"""
from __future__ import annotations

import bisect
import csv
import heapq
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .lob import ADD, ASK, BID, CANCEL, EVENT_DTYPE, EXECUTE, NS_PER_SECOND, SESSION_SECONDS, OrderBook

MINUTE = 60

# Table 1 averages per minute: (order submissions, trades, cancels)
TABLE1_RATES = {
    "AAPL": (1963.37, 181.33, 1870.52),
    "FB": (1665.53, 136.32, 1563.80),
    "INTC": (848.58, 71.38, 823.11),
    "MSFT": (1304.75, 95.22, 1272.25),
    "GOOG": (480.34, 27.86, 462.20),
}

_LOT_SIZES = (1, 1, 1, 2, 2, 3, 4, 5)


@dataclass(frozen=True)
class ScenarioConfig:
    days: int = 62
    seconds_per_day: int = SESSION_SECONDS
    initial_price: int = 10_000  # ticks
    ticksize: str = "0.01"
    sigma_per_minute: float = 0.0005
    jump_intensity: float = 3.0  # expected jumps per day
    jump_size: float = 10.0  # multiples of the per-minute sigma
    orders_per_minute: float = 120.0
    trades_per_minute: float = 12.0
    cancels_per_minute: float = 118.0
    ladder_decay: float = 0.9
    target_live_orders: int = 150
    prune_ticks: int = 12
    lot: int = 100
    signal_fraction: float = 0.0
    signal_lead: int = 120  # seconds before the jump
    signal_side: str = "directional"  # directional | ask | both
    seed: int = 0

    def __post_init__(self):
        for name in ("orders_per_minute", "trades_per_minute", "cancels_per_minute", "jump_intensity",
                     "sigma_per_minute"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0 <= self.signal_fraction <= 1:
            raise ValueError("signal_fraction must lie in [0, 1]")
        if self.signal_side not in ("directional", "ask", "both"):
            raise ValueError(f"unknown signal_side {self.signal_side!r}")
        if self.seconds_per_day % MINUTE:
            raise ValueError("seconds_per_day must be whole minutes")

    @property
    def minutes_per_day(self) -> int:
        return self.seconds_per_day // MINUTE

    @property
    def n_seconds(self) -> int:
        return self.days * self.seconds_per_day

    def with_table1_rates(self, stock: str, scale: float = 1.0) -> "ScenarioConfig":
        o, t, c = TABLE1_RATES[stock]
        return replace(self, orders_per_minute=o * scale, trades_per_minute=t * scale,
                       cancels_per_minute=c * scale)


@dataclass(frozen=True)
class JumpTruth:
    day: int
    minute: int  # minute of day; the jump return covers (60*minute, 60*minute + 60] seconds
    direction: int  # +1 / -1
    size: float  # log return added
    second: int  # continuous stream second of the jump

    @property
    def global_minute(self) -> int:
        return (self.second - 1) // MINUTE


@dataclass
class PricePath:
    log_mid: np.ndarray  # per stream second 1..N, index s-1
    minute_prices: np.ndarray  # latent price at every full minute
    truth: list[JumpTruth] = field(default_factory=list)
    initial_price: int = 10_000

    def mid_ticks(self) -> np.ndarray:
        return self.initial_price * np.exp(self.log_mid)


def gen_price_path(cfg: ScenarioConfig) -> PricePath:
    rng = np.random.default_rng([cfg.seed, 0])
    n = cfg.n_seconds
    sigma_s = cfg.sigma_per_minute / math.sqrt(MINUTE)
    inc = rng.normal(0.0, sigma_s, n) if sigma_s > 0 else np.zeros(n)
    truth = []
    mpd = cfg.minutes_per_day
    for day in range(cfg.days):
        k = rng.poisson(cfg.jump_intensity) if cfg.jump_intensity > 0 else 0
        # minute 0 of a session is never planted: the detector ignores the opening return
        minutes = np.unique(rng.integers(1, mpd, size=k)) if k else np.array([], dtype=int)
        for minute in minutes.tolist():
            direction = 1 if rng.random() < 0.5 else -1
            offset = int(rng.integers(1, MINUTE + 1))
            second = day * cfg.seconds_per_day + minute * MINUTE + offset
            size = direction * cfg.jump_size * cfg.sigma_per_minute
            inc[second - 1] += size
            truth.append(JumpTruth(day, minute, direction, size, second))
    log_mid = np.cumsum(inc)
    minute_prices = cfg.initial_price * np.exp(log_mid[MINUTE - 1 :: MINUTE])
    return PricePath(log_mid, minute_prices, truth, cfg.initial_price)


class _FlowState:
    """Generator-side book plus a random-access list of live order ids."""

    def __init__(self):
        self.book = OrderBook()
        self.live: list[int] = []
        self.slot: dict[int, int] = {}
        self.next_id = 1
        self.out: list[tuple] = []

    def emit(self, ts, oid, side, action, price, qty):
        book = self.book
        if action == ADD:
            book.apply(oid, side, ADD, price, qty)
            self.slot[oid] = len(self.live)
            self.live.append(oid)
        else:
            full = book.orders[oid][2] == qty
            book.apply(oid, side, action, price, qty)
            if full:
                i = self.slot.pop(oid)
                last = self.live.pop()
                if last != oid:
                    self.live[i] = last
                    self.slot[last] = i
        self.out.append((ts, oid, side, action, price, qty))

    def clear_levels(self, side, prices, ts):
        book = self.book
        n = 0
        for price in prices:
            for oid in list(book.queues.get((side, price), ())):
                self.emit(ts, oid, side, CANCEL, 0, book.orders[oid][2])
                n += 1
        return n


def gen_order_flow(path: PricePath, cfg: ScenarioConfig) -> np.ndarray:
    rnd = random.Random(cfg.seed * 1_000_003 + 7)
    np_rng = np.random.default_rng([cfg.seed, 1])
    st = _FlowState()
    book = st.book
    asks, bids = book.levels[ASK], book.levels[BID]
    mids = path.mid_ticks()
    n = cfg.n_seconds
    n_add = np_rng.poisson(cfg.orders_per_minute / MINUTE, n).tolist()
    n_exe = np_rng.poisson(cfg.trades_per_minute / MINUTE, n).tolist()
    n_cxl = np_rng.poisson(cfg.cancels_per_minute / MINUTE, n).tolist()
    weights = [cfg.ladder_decay ** k for k in range(10)]
    cum_w = list(np.cumsum(weights) / sum(weights))
    lots = [cfg.lot * k for k in _LOT_SIZES]
    prune = cfg.prune_ticks
    target = cfg.target_live_orders
    debt = 0
    rand = rnd.random

    for s in range(1, n + 1):
        base_ns = (s - 1) * NS_PER_SECOND
        a_ref = math.floor(mids[s - 1]) + 1
        b_ref = a_ref - 1
        ts = base_ns + 1
        forced = 0
        if asks and asks.peekitem(0)[0] < a_ref:
            forced += st.clear_levels(ASK, list(asks.irange(maximum=a_ref - 1)), ts)
        if bids and bids.peekitem(-1)[0] > b_ref:
            forced += st.clear_levels(BID, list(bids.irange(minimum=b_ref + 1)), ts)
        if asks and asks.peekitem(-1)[0] > a_ref + prune:
            forced += st.clear_levels(ASK, list(asks.irange(minimum=a_ref + prune + 1)), ts)
        if bids and bids.peekitem(0)[0] < b_ref - prune:
            forced += st.clear_levels(BID, list(bids.irange(maximum=b_ref - prune - 1)), ts)

        excess = forced + debt - n_cxl[s - 1]
        if excess >= 0:
            debt, n_rand_cxl = excess, 0
        else:
            debt, n_rand_cxl = 0, -excess
        kinds = [ADD] * n_add[s - 1] + [EXECUTE] * n_exe[s - 1] + [CANCEL] * n_rand_cxl
        if not kinds:
            continue
        rnd.shuffle(kinds)
        offsets = sorted(rnd.randint(2, NS_PER_SECOND) for _ in kinds)
        for kind, off in zip(kinds, offsets):
            ts = base_ns + off
            if kind == ADD:
                side = ASK if rand() < 0.5 else BID
                k = bisect.bisect_left(cum_w, rand())
                price = a_ref + k if side == ASK else b_ref - k
                oid = st.next_id
                st.next_id += 1
                st.emit(ts, oid, side, ADD, price, lots[int(rand() * len(lots))])
            elif kind == EXECUTE:
                side = ASK if rand() < 0.5 else BID
                lv = asks if side == ASK else bids
                if not lv:
                    continue
                price = lv.peekitem(0 if side == ASK else -1)[0]
                oid = next(iter(book.queues[(side, price)]))
                rem = book.orders[oid][2]
                qty = rem if rem == 1 or rand() < 0.5 else rnd.randint(1, rem - 1)
                st.emit(ts, oid, side, EXECUTE, 0, qty)
            else:
                if not st.live:
                    continue
                n_live = len(st.live)
                oid = st.live[int(rand() * n_live)]
                side, _, rem = book.orders[oid]
                # full cancels become rarer as the book thins, which keeps the
                # live order count mean-reverting without touching the cancel rate
                qty = rem if rem == 1 or rand() * target < n_live else rnd.randint(1, rem - 1)
                st.emit(ts, oid, side, CANCEL, 0, qty)
    return np.array(st.out, dtype=EVENT_DTYPE)


def _signal_sides(cfg: ScenarioConfig, direction: int) -> tuple[int, ...]:
    if cfg.signal_side == "both":
        return (ASK, BID)
    if cfg.signal_side == "ask":
        return (ASK,)
    return (ASK,) if direction > 0 else (BID,)


def inject_liquidity_signal(events: np.ndarray, truth: list[JumpTruth], cfg: ScenarioConfig) -> np.ndarray:
    """Thin one side of the book ahead of each planted jump.

    From ``signal_lead`` seconds before the jump every resting order on the
    affected side loses ``signal_fraction`` of its size (at least one share is
    kept, so price levels survive) and new adds there are trimmed the same way.
    Once the jump minute is over, the trimmed size of every order that is still
    live is re-added at its price; each replacement order is cancelled again
    after an exponential lifetime with mean ``signal_lead`` seconds, so the extra
    depth drains away like ordinary cancel flow rather than in one step. Later events that no longer fit are clipped
    or dropped.
    """
    if cfg.signal_fraction <= 0 or not truth:
        return events
    f = cfg.signal_fraction
    sched = []  # (ns, kind, side, window id)
    for w, jt in enumerate(truth):
        start = max(jt.second - cfg.signal_lead, 0) * NS_PER_SECOND
        stop = (jt.global_minute + 1) * MINUTE * NS_PER_SECOND + 1
        for side in _signal_sides(cfg, jt.direction):
            sched.append((start, 0, side, w))
            sched.append((stop, 1, side, w))
    sched.sort(key=lambda x: (x[0], x[1]))

    book = OrderBook()
    out: list[tuple] = []
    trimmed: dict[tuple[int, int], dict[int, int]] = {}  # (window, side) -> order id -> trimmed size
    owner: dict[int, list] = {ASK: [], BID: []}  # windows currently thinning each side
    injected: dict[int, dict[int, int]] = {ASK: {}, BID: {}}  # replenishment order id -> price
    expiry: list[tuple[int, int, int]] = []  # heap of (ns, order id, side)
    life_rng = np.random.default_rng([cfg.seed, 4])
    mean_life = cfg.signal_lead * NS_PER_SECOND
    next_id = int(events["order_id"].max()) + 1 if len(events) else 1

    def trim(ts, oid, side, rem, into):
        c = min(int(f * rem), rem - 1)
        if c > 0:
            book.apply(oid, side, CANCEL, 0, c)
            out.append((ts, oid, side, CANCEL, 0, c))
            into[oid] = into.get(oid, 0) + c

    def run_sched():
        nonlocal si, next_id
        ts, kind, side, w = sched[si]
        si += 1
        key = (w, side)
        if kind == 0:
            owner[side].append(key)
            into = trimmed.setdefault(key, {})
            for oid, (oside, _, rem) in list(book.orders.items()):
                if oside == side:
                    trim(ts, oid, side, rem, into)
        else:
            owner[side].remove(key)
            for oid, c in trimmed.pop(key, {}).items():
                order = book.orders.get(oid)
                if order is None:
                    continue
                price = order[1]
                book.apply(next_id, side, ADD, price, c)
                out.append((ts, next_id, side, ADD, price, c))
                injected[side][next_id] = price
                heapq.heappush(expiry, (ts + 1 + int(life_rng.exponential(mean_life)), next_id, side))
                next_id += 1

    def expire():
        ts, iid, side = heapq.heappop(expiry)
        if injected[side].pop(iid, None) is not None and iid in book.orders:
            rem = book.orders[iid][2]
            book.apply(iid, side, CANCEL, 0, rem)
            out.append((ts, iid, side, CANCEL, 0, rem))

    def advance(ts_limit):
        # schedule entries and expiries interleaved in time order
        while True:
            t_s = sched[si][0] if si < len(sched) else math.inf
            t_e = expiry[0][0] if expiry else math.inf
            if min(t_s, t_e) > ts_limit:
                return
            if t_s <= t_e:
                run_sched()
            else:
                expire()

    si = 0
    for ts, oid, side, action, price, qty in zip(*(events[c].tolist() for c in EVENT_DTYPE.names)):
        advance(ts)
        if action == ADD:
            # replenishment orders are unknown to the flow generator; pull any
            # that this add would cross
            other = BID if side == ASK else ASK
            if injected[other]:
                for iid, ip in list(injected[other].items()):
                    if (ip >= price) if side == ASK else (ip <= price):
                        del injected[other][iid]
                        if iid in book.orders:
                            rem = book.orders[iid][2]
                            book.apply(iid, other, CANCEL, 0, rem)
                            out.append((ts, iid, other, CANCEL, 0, rem))
            book.apply(oid, side, ADD, price, qty)
            out.append((ts, oid, side, ADD, price, qty))
            if owner[side]:
                trim(ts, oid, side, qty, trimmed[owner[side][-1]])
            continue
        order = book.orders.get(oid)
        if order is None:
            continue
        qty = min(qty, order[2])
        book.apply(oid, side, action, 0, qty)
        out.append((ts, oid, side, action, 0, qty))
    while si < len(sched):
        run_sched()
    return np.array(out, dtype=EVENT_DTYPE)


@dataclass
class Scenario:
    config: ScenarioConfig
    path: PricePath
    events: np.ndarray

    @property
    def truth(self) -> list[JumpTruth]:
        return self.path.truth


def generate(cfg: ScenarioConfig, base_events: np.ndarray | None = None, path: PricePath | None = None) -> Scenario:
    """Price path, order flow and signal in one call. Pass ``base_events``/``path``
    to re-inject a different signal into an already generated flow."""
    path = path if path is not None else gen_price_path(cfg)
    events = base_events if base_events is not None else gen_order_flow(path, cfg)
    return Scenario(cfg, path, inject_liquidity_signal(events, path.truth, cfg))


def write_truth(path_out, truth: list[JumpTruth]) -> None:
    with open(path_out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "minute", "direction", "size", "second"])
        for jt in truth:
            w.writerow([jt.day, jt.minute, "up" if jt.direction > 0 else "down", repr(jt.size), jt.second])


def read_truth(path_in) -> list[JumpTruth]:
    rows = csv.DictReader(Path(path_in).open())
    return [JumpTruth(int(r["day"]), int(r["minute"]), 1 if r["direction"] == "up" else -1,
                      float(r["size"]), int(r["second"])) for r in rows]
