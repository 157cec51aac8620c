"""Per-second feature frames built from book snapshots and raw order flow.

Slot layout (139 values, fixed order):

======  =====  ==============================================================
group   size   content
======  =====  ==============================================================
v1      40     ask price, ask volume, bid price, bid volume for levels 1..10
v2      20     spread, mid per level
v3      18     |dP ask|, |dP bid| between adjacent levels 1..9
v4      4      mean ask price, mean bid price, mean ask volume, mean bid volume
v5      2      mean(P ask - P bid), mean(V ask - V bid)
v6      40     difference quotient over ``dt`` of every v1 slot
v7      6      intensities la, lb, ma, mb, ca, cb over ``dt``
v8      4      1 if the ``dt`` intensity beats the ``DT`` one (la, lb, ma, mb)
v9      4      intensity accelerations (ma, lb, mb, la)
v10     1      wall-clock hour
======  =====  ==============================================================

Empty book levels enter every formula as literal zeros. Events are classed
as limit adds (la/lb), executions (ma/mb) and cancels (ca/cb) per side.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .lob import ADD, ASK, BID, CANCEL, EXECUTE, N_LEVELS, NS_PER_SECOND, SESSION_SECONDS

SESSION_OPEN_CLOCK = 9 * 3600 + 30 * 60
DEFAULT_DT = 60
DEFAULT_DT_LONG = 600

INTENSITY_CLASSES = ("la", "lb", "ma", "mb", "ca", "cb")
_V8_CLASSES = ("la", "lb", "ma", "mb")
_V9_CLASSES = ("ma", "lb", "mb", "la")


class FeatureError(Exception):
    pass


class InsufficientHistory(FeatureError):
    pass


class StreamMisalignment(FeatureError):
    pass


def _slot_names() -> list[str]:
    n = N_LEVELS
    names = []
    for i in range(1, n + 1):
        names += [f"v1_ask_price_{i}", f"v1_ask_volume_{i}", f"v1_bid_price_{i}", f"v1_bid_volume_{i}"]
    for i in range(1, n + 1):
        names += [f"v2_spread_{i}", f"v2_mid_{i}"]
    for i in range(1, n):
        names += [f"v3_ask_price_diff_{i}", f"v3_bid_price_diff_{i}"]
    names += ["v4_mean_ask_price", "v4_mean_bid_price", "v4_mean_ask_volume", "v4_mean_bid_volume"]
    names += ["v5_price_diff", "v5_volume_diff"]
    names += ["v6_d" + s[3:] for s in names[: 4 * n]]
    names += [f"v7_lambda_{c}" for c in INTENSITY_CLASSES]
    names += [f"v8_rel_{c}" for c in _V8_CLASSES]
    names += [f"v9_accel_{c}" for c in _V9_CLASSES]
    names += ["v10_hour"]
    return names


SLOT_NAMES: tuple[str, ...] = tuple(_slot_names())
N_SLOTS = len(SLOT_NAMES)
SLOT_INDEX = {name: i for i, name in enumerate(SLOT_NAMES)}


def _group_slices() -> dict[str, slice]:
    out, start = {}, 0
    for g in [f"v{k}" for k in range(1, 11)]:
        size = sum(1 for s in SLOT_NAMES if s.split("_", 1)[0] == g)
        out[g] = slice(start, start + size)
        start += size
    return out


GROUPS = _group_slices()


def slots_for(groups) -> list[int]:
    """Column indices for the named groups, e.g. ``slots_for(["v1"])``."""
    idx = []
    for g in groups:
        s = GROUPS[g]
        idx += list(range(s.start, s.stop))
    return idx


# -- book derived (v1..v5) ---------------------------------------------------

def levels_from_snapshots(snaps: np.ndarray) -> np.ndarray:
    """(n, 40) array in v1 slot order from a snapshot record array."""
    n = len(snaps)
    out = np.empty((n, N_LEVELS, 4), dtype=np.int64)
    out[:, :, 0] = snaps["ask"][:, :, 0]
    out[:, :, 1] = snaps["ask"][:, :, 1]
    out[:, :, 2] = snaps["bid"][:, :, 0]
    out[:, :, 3] = snaps["bid"][:, :, 1]
    return out.reshape(n, 4 * N_LEVELS)


def basic_v1(snap) -> np.ndarray:
    rec = snap.to_record() if hasattr(snap, "to_record") else snap
    return levels_from_snapshots(np.atleast_1d(rec))[0].astype(np.float64)


def book_features(v1: np.ndarray) -> np.ndarray:
    """v2..v5 (44 columns) for rows of v1 values."""
    v1 = np.asarray(v1, dtype=np.float64)
    lv = v1.reshape(len(v1), N_LEVELS, 4)
    pa, va, pb, vb = lv[:, :, 0], lv[:, :, 1], lv[:, :, 2], lv[:, :, 3]
    v2 = np.stack([pa - pb, (pa + pb) / 2], axis=2).reshape(len(v1), -1)
    v3 = np.stack([np.abs(np.diff(pa, axis=1)), np.abs(np.diff(pb, axis=1))], axis=2).reshape(len(v1), -1)
    v4 = np.stack([pa.mean(1), pb.mean(1), va.mean(1), vb.mean(1)], axis=1)
    v5 = np.stack([(pa - pb).mean(1), (va - vb).mean(1)], axis=1)
    return np.hstack([v2, v3, v4, v5])


def time_insensitive_v2_v5(snap) -> np.ndarray:
    return book_features(basic_v1(snap)[None, :])[0]


def derivatives_v6(window, dt: int = DEFAULT_DT) -> np.ndarray:
    """Difference quotient of v1 slots over a trailing window of per-second rows.

    ``window`` holds v1 rows (or full frames) for consecutive seconds ending at t;
    it must reach back at least ``dt`` seconds.
    """
    w = np.asarray(window, dtype=np.float64)
    if w.ndim != 2 or len(w) < dt + 1:
        raise InsufficientHistory(f"need {dt + 1} consecutive rows, got {len(w)}")
    v1 = w[:, : 4 * N_LEVELS]
    return (v1[-1] - v1[-1 - dt]) / dt


# -- event derived (v7..v9) --------------------------------------------------

def event_classes(events: np.ndarray) -> np.ndarray:
    """Class index into INTENSITY_CLASSES for every event."""
    side = events["side"].astype(np.int64)
    action = events["action"].astype(np.int64)
    base = np.select([action == ADD, action == EXECUTE, action == CANCEL], [0, 2, 4], -1)
    if np.any(base < 0):
        raise FeatureError("unknown event action")
    return base + np.where(side == ASK, 0, 1)


def cumulative_counts(events: np.ndarray, n_seconds: int) -> np.ndarray:
    """C[s, k] = number of class-k events with timestamp <= s seconds, s = 0..n_seconds."""
    sec = -(-events["timestamp"] // NS_PER_SECOND)  # ceil
    if len(sec) and (sec.min() < 0 or sec.max() > n_seconds):
        raise StreamMisalignment("events fall outside the snapshot span")
    cls = event_classes(events)
    counts = np.zeros((n_seconds + 1, len(INTENSITY_CLASSES)), dtype=np.int64)
    np.add.at(counts, (sec, cls), 1)
    return np.cumsum(counts, axis=0)


def _rates(cum: np.ndarray, t: np.ndarray, width: int) -> np.ndarray:
    t = np.asarray(t)
    hi = np.where(t >= 0, t, 0)
    lo = t - width
    # a window reaching back past the stream start counts everything up to t
    before = np.where((lo >= 0)[:, None], cum[np.clip(lo, 0, None)], 0)
    rate = (cum[hi] - before) / width
    rate[t < 0] = 0.0
    return rate


def intensity_features(cum: np.ndarray, t, dt: int = DEFAULT_DT, dt_long: int = DEFAULT_DT_LONG) -> np.ndarray:
    """v7..v9 (14 columns) at seconds ``t`` from cumulative counts."""
    t = np.atleast_1d(np.asarray(t, dtype=np.int64))
    lam = _rates(cum, t, dt)
    lam_long = _rates(cum, t, dt_long)
    lam_prev = _rates(cum, t - dt, dt)
    ci = {c: i for i, c in enumerate(INTENSITY_CLASSES)}
    v8 = np.stack([(lam[:, ci[c]] > lam_long[:, ci[c]]) for c in _V8_CLASSES], axis=1).astype(np.float64)
    v9 = np.stack([(lam[:, ci[c]] - lam_prev[:, ci[c]]) / dt for c in _V9_CLASSES], axis=1)
    return np.hstack([lam, v8, v9])


def intensities_v7_v9(events: np.ndarray, t: int, dt: int = DEFAULT_DT, dt_long: int = DEFAULT_DT_LONG) -> np.ndarray:
    """v7..v9 at second ``t`` straight from an event array."""
    cum = cumulative_counts(events, max(t, 0))
    return intensity_features(cum, [t], dt, dt_long)[0]


def clock_v10(t) -> np.ndarray | int:
    """Hour of day from seconds since midnight."""
    if np.isscalar(t):
        return int(t // 3600)
    return np.asarray(t) // 3600


def session_clock(seconds, session_length: int = SESSION_SECONDS, open_clock: int = SESSION_OPEN_CLOCK):
    """Seconds since midnight for continuous-stream seconds 1..N (one session per day)."""
    s = np.asarray(seconds, dtype=np.int64)
    return open_clock + (s - 1) % session_length + 1


# -- assembly ----------------------------------------------------------------

class FrameSource:
    """Computes feature frames on demand for any set of stream seconds.

    Holds the per-second v1 levels and cumulative event counts of a continuous
    multi-day stream; second ``s`` (1-based) is row ``s - 1`` of ``levels``.
    """

    def __init__(self, levels: np.ndarray, cum_counts: np.ndarray, dt: int = DEFAULT_DT,
                 dt_long: int = DEFAULT_DT_LONG, session_length: int = SESSION_SECONDS):
        if len(cum_counts) != len(levels) + 1:
            raise StreamMisalignment("count table and levels cover different spans")
        self.levels = levels
        self.cum = cum_counts
        self.dt = dt
        self.dt_long = dt_long
        self.session_length = session_length

    @classmethod
    def from_streams(cls, snaps: np.ndarray, events: np.ndarray, **kw) -> "FrameSource":
        secs = snaps["second"].astype(np.int64)
        if len(secs) and not np.array_equal(secs, np.arange(1, len(secs) + 1)):
            raise StreamMisalignment("snapshots must cover seconds 1..N consecutively")
        return cls(levels_from_snapshots(snaps).astype(np.int32), cumulative_counts(events, len(snaps)), **kw)

    @property
    def n_seconds(self) -> int:
        return len(self.levels)

    def frames(self, seconds) -> np.ndarray:
        s = np.asarray(seconds, dtype=np.int64)
        if s.size and (s.min() < 1 or s.max() > self.n_seconds):
            raise StreamMisalignment("requested second outside the stream")
        flat = s.reshape(-1)
        v1 = self.levels[flat - 1].astype(np.float64)
        v25 = book_features(v1)
        lag = flat - self.dt
        has = lag >= 1
        v6 = np.zeros_like(v1)
        v6[has] = (v1[has] - self.levels[lag[has] - 1]) / self.dt
        v79 = intensity_features(self.cum, flat, self.dt, self.dt_long)
        v10 = clock_v10(session_clock(flat, self.session_length))[:, None].astype(np.float64)
        out = np.hstack([v1, v25, v6, v79, v10])
        return out.reshape(s.shape + (N_SLOTS,))


class FileFrameSource:
    """Frame lookup backed by a memory-mapped feature file."""

    def __init__(self, path):
        self.names, self.data = read_features(path, mmap=True)

    @property
    def n_seconds(self) -> int:
        return self.data.shape[0]

    def frames(self, seconds) -> np.ndarray:
        s = np.asarray(seconds, dtype=np.int64)
        if s.size and (s.min() < 1 or s.max() > self.n_seconds):
            raise StreamMisalignment("requested second outside the feature file")
        return np.asarray(self.data[s.reshape(-1) - 1]).reshape(s.shape + (N_SLOTS,))


def assemble(snaps: np.ndarray, events: np.ndarray, dt: int = DEFAULT_DT,
             dt_long: int = DEFAULT_DT_LONG, session_length: int = SESSION_SECONDS) -> np.ndarray:
    """One frame per snapshot second. Derivatives are zero until ``dt`` seconds of history exist."""
    src = FrameSource.from_streams(snaps, events, dt=dt, dt_long=dt_long, session_length=session_length)
    return src.frames(np.arange(1, src.n_seconds + 1))


# -- file format -------------------------------------------------------------

def _header(n_frames: int) -> bytes:
    parts = [struct.pack("<II", n_frames, N_SLOTS)]
    for name in SLOT_NAMES:
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
    return b"".join(parts)


class FeatureWriter:
    """Streams frames to a feature file in chunks; the frame count is fixed up front."""

    def __init__(self, path, n_frames: int):
        self.fh = open(path, "wb")
        self.fh.write(_header(n_frames))
        self.expected = n_frames
        self.written = 0

    def write(self, frames: np.ndarray) -> None:
        self.fh.write(np.ascontiguousarray(frames, dtype="<f8").tobytes())
        self.written += len(frames)

    def close(self) -> None:
        self.fh.close()
        if self.written != self.expected:
            raise StreamMisalignment(f"wrote {self.written} frames, header says {self.expected}")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if exc[0] is None:
            self.close()
        else:
            self.fh.close()


def write_features(path, frames: np.ndarray) -> None:
    with FeatureWriter(path, len(frames)) as w:
        w.write(frames)


def read_features(path, mmap: bool = False) -> tuple[list[str], np.ndarray]:
    with open(path, "rb") as fh:
        n_frames, n_slots = struct.unpack("<II", fh.read(8))
        names = []
        for _ in range(n_slots):
            (ln,) = struct.unpack("<H", fh.read(2))
            names.append(fh.read(ln).decode())
        offset = fh.tell()
    if mmap:
        data = np.memmap(path, dtype="<f8", mode="r", offset=offset, shape=(n_frames, n_slots))
    else:
        data = np.fromfile(path, dtype="<f8", offset=offset).reshape(n_frames, n_slots)
    return names, data
