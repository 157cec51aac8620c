import numpy as np
import pytest

from lobjump.lob import (
    ADD, ASK, BID, CANCEL, EVENT_DTYPE, EXECUTE, NS_PER_SECOND, EmptySide, InvalidEvent,
    InvariantViolation, OrderBook, OrderEvent, OverRemoval, ReplayError, Replayer, UnknownOrderId,
    apply_event, mid_price, mid_prices, read_events, read_snapshots, replay, snapshot, write_events,
    write_snapshots,
)
from oracles import RebuildOracle, random_event_stream


def ev(ts_s, oid, side, action, price, qty):
    return (int(ts_s * NS_PER_SECOND), oid, side, action, price, qty)


def stream(*rows):
    return np.array(list(rows), dtype=EVENT_DTYPE)


def test_add_execute_overremoval_sequence():
    book = OrderBook()
    apply_event(book, OrderEvent.add(0, 1, ASK, 10002, 10))
    assert dict(book.levels[ASK]) == {10002: 10}
    apply_event(book, OrderEvent.execute(1, 1, ASK, 4))
    assert dict(book.levels[ASK]) == {10002: 6}
    assert book.orders[1][2] == 6
    before = (dict(book.levels[ASK]), {k: list(v) for k, v in book.orders.items()})
    with pytest.raises(OverRemoval):
        apply_event(book, OrderEvent.cancel(2, 1, ASK, 7))
    assert (dict(book.levels[ASK]), {k: list(v) for k, v in book.orders.items()}) == before


def test_unknown_order_leaves_book_unchanged():
    book = OrderBook()
    book.apply(1, BID, ADD, 9998, 5)
    with pytest.raises(UnknownOrderId):
        book.apply(2, BID, CANCEL, 0, 1)
    assert dict(book.levels[BID]) == {9998: 5}


def test_full_removal_deletes_level_and_order():
    book = OrderBook()
    book.apply(1, BID, ADD, 9998, 5)
    book.apply(2, BID, ADD, 9998, 3)
    book.apply(1, BID, EXECUTE, 0, 5)
    assert dict(book.levels[BID]) == {9998: 3}
    book.apply(2, BID, CANCEL, 0, 3)
    assert dict(book.levels[BID]) == {} and book.orders == {}
    book.check_consistency()


@pytest.mark.parametrize("bad", [(1, BID, ADD, 9998, 0), (1, 5, ADD, 9998, 3)])
def test_invalid_events_rejected(bad):
    with pytest.raises(InvalidEvent):
        OrderBook().apply(*bad)


def test_duplicate_id_rejected():
    book = OrderBook()
    book.apply(1, BID, ADD, 9998, 5)
    with pytest.raises(InvalidEvent):
        book.apply(1, ASK, ADD, 10002, 5)


def test_snapshot_basic_and_padding():
    book = OrderBook()
    book.apply(1, ASK, ADD, 10002, 10)
    book.apply(2, BID, ADD, 9998, 5)
    s = snapshot(book, t=7)
    assert s.timestamp == 7
    assert s.ask_levels[0] == (10002, 10) and s.bid_levels[0] == (9998, 5)
    assert all(lv == (0, 0) for lv in s.ask_levels[1:] + s.bid_levels[1:])


def test_empty_snapshot_all_zero():
    s = snapshot(OrderBook())
    assert all(lv == (0, 0) for lv in s.ask_levels + s.bid_levels)


def test_snapshot_keeps_ten_best_of_twelve():
    book = OrderBook()
    for k in range(12):
        book.apply(k + 1, ASK, ADD, 10001 + k, 1)
    prices = [p for p, _ in snapshot(book).ask_levels]
    assert prices == list(range(10001, 10011))


def test_crossed_book_rejected_at_snapshot():
    book = OrderBook()
    book.apply(1, ASK, ADD, 10000, 1)
    book.apply(2, BID, ADD, 10000, 1)
    with pytest.raises(InvariantViolation):
        snapshot(book)


@pytest.mark.parametrize("ask,bid,mid", [(10002, 10000, 10001), (10003, 10000, 10001.5)])
def test_mid_price(ask, bid, mid):
    book = OrderBook()
    book.apply(1, ASK, ADD, ask, 1)
    book.apply(2, BID, ADD, bid, 1)
    assert mid_price(snapshot(book)) == mid


def test_mid_price_empty_side():
    book = OrderBook()
    book.apply(2, BID, ADD, 10000, 1)
    with pytest.raises(EmptySide):
        mid_price(snapshot(book))


def test_mid_prices_vectorised_marks_empty_sides():
    snaps = replay(stream(ev(0.5, 1, ASK, ADD, 10002, 1), ev(2.5, 2, BID, ADD, 10000, 1)), session_length=4)
    m = mid_prices(snaps)
    assert np.isnan(m[:2]).all() and np.all(m[2:] == 10001)


def test_replay_empty_session_count():
    snaps = replay(np.zeros(0, dtype=EVENT_DTYPE))
    assert len(snaps) == 23_400
    assert not snaps["ask"].any() and not snaps["bid"].any()
    assert snaps["second"][0] == 1 and snaps["second"][-1] == 23_400


def test_replay_boundary_semantics():
    snaps = replay(stream(ev(1.5, 1, ASK, ADD, 10002, 10)), session_length=3)
    assert snaps["ask"][0, 0].tolist() == [0, 0]
    assert snaps["ask"][1, 0].tolist() == [10002, 10]
    # an event stamped exactly on the boundary belongs to that boundary
    snaps = replay(stream(ev(2.0, 1, ASK, ADD, 10002, 10)), session_length=3)
    assert snaps["ask"][1, 0].tolist() == [10002, 10]


@pytest.mark.parametrize("length,interval,count", [(10, 3, 4), (9, 3, 3), (23_400, 1, 23_400)])
def test_replay_output_count(length, interval, count):
    assert len(replay(np.zeros(0, dtype=EVENT_DTYPE), interval, length)) == count


def test_replay_error_reports_position():
    s = stream(ev(0.1, 1, ASK, ADD, 10002, 10), ev(0.2, 9, ASK, CANCEL, 0, 1))
    with pytest.raises(ReplayError) as info:
        replay(s, session_length=2)
    assert info.value.position == 1
    assert isinstance(info.value.cause, UnknownOrderId)


def test_replay_rejects_decreasing_timestamps():
    with pytest.raises(ReplayError):
        replay(stream(ev(1.0, 1, ASK, ADD, 10002, 1), ev(0.5, 2, ASK, ADD, 10003, 1)), session_length=2)


def test_replayer_resumes_across_calls():
    events = random_event_stream(5_000, 100, seed=3)
    whole = replay(events, session_length=100)
    r = Replayer(events)
    parts = np.concatenate([r.run(1, 40), r.run(41, 60)])
    assert np.array_equal(parts, whole)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_incremental_matches_rebuild(seed):
    events = random_event_stream(20_000, 200, seed)
    snaps = replay(events, session_length=200)
    assert RebuildOracle(events).mismatches(snaps) == 0


def test_oracle_detects_corruption():
    events = random_event_stream(5_000, 50, 4)
    snaps = replay(events, session_length=50)
    snaps["ask"][25, 0, 1] += 1
    assert RebuildOracle(events).mismatches(snaps) == 1


def test_aggregates_consistent_after_random_sequence():
    events = random_event_stream(20_000, 100, 5)
    book = OrderBook()
    for k, row in enumerate(events.tolist()):
        book.apply(*row[1:])
        if k % 997 == 0:
            book.check_consistency()
    book.check_consistency()


def test_snapshot_ordering_invariants():
    snaps = replay(random_event_stream(20_000, 200, 6), session_length=200)
    ask_p = snaps["ask"][..., 0]
    bid_p = snaps["bid"][..., 0]
    for p, sign in ((ask_p, 1), (bid_p, -1)):
        nz = p > 0
        # no interior zeros: once a level is empty every deeper level is too
        assert not np.any(~nz[:, :-1] & nz[:, 1:])
        d = sign * np.diff(p, axis=1)
        assert np.all(d[nz[:, 1:]] > 0)
    both = (ask_p[:, 0] > 0) & (bid_p[:, 0] > 0)
    assert np.all(ask_p[both, 0] > bid_p[both, 0])
    assert (snaps["ask"][..., 1] >= 0).all() and (snaps["bid"][..., 1] >= 0).all()
    assert np.all((snaps["ask"][..., 1] == 0) == (ask_p == 0))


def test_event_file_roundtrip(tmp_path):
    events = random_event_stream(2_000, 20, 7)
    write_events(tmp_path / "e.csv", events, "0.01")
    back, tick = read_events(tmp_path / "e.csv")
    assert str(tick) == "0.01"
    assert np.array_equal(back, events)
    first = (tmp_path / "e.csv").read_text().splitlines()[:2]
    assert first[0] == "ticksize=0.01"
    assert first[1].split(",")[2] in ("A", "B") and first[1].split(",")[3] in ("ADD", "CXL", "EXE")


def test_event_file_requires_header(tmp_path):
    (tmp_path / "e.csv").write_text("1,1,A,ADD,10002,5\n")
    with pytest.raises(InvalidEvent):
        read_events(tmp_path / "e.csv")


def test_snapshot_file_layout(tmp_path):
    snaps = replay(random_event_stream(1_000, 10, 8), session_length=10)
    write_snapshots(tmp_path / "s.bin", snaps)
    raw = (tmp_path / "s.bin").read_bytes()
    assert len(raw) == 10 * (4 + 40 * 8)
    assert int.from_bytes(raw[:4], "little") == 1
    assert int.from_bytes(raw[4:12], "little", signed=True) == snaps["ask"][0, 0, 0]
    assert np.array_equal(read_snapshots(tmp_path / "s.bin"), snaps)
