"""Labeled 120-step training windows and rolling day-based splits.

A base sample exists for every detectable minute ``m``: its window ends one
second before the minute starts (stream second ``60*m - 1``) and row ``t`` holds
the frame ``(T - 1 - t)`` minutes earlier. The label says whether the return of
minute ``m`` is a jump. Positives are re-extracted at a few earlier end points,
negatives get a random backward jitter, and negatives are subsampled so the
positive share hits a target.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import N_SLOTS
from .jumps import MINUTES_PER_DAY, JumpLabels

MINUTE = 60
WINDOW_STEPS = 120


class DatasetError(Exception):
    pass


class InsufficientHistory(DatasetError):
    pass


class MissingLabel(DatasetError):
    pass


class ShiftTooLarge(DatasetError):
    pass


class OverlapViolation(DatasetError):
    pass


META_DTYPE = np.dtype(
    [
        ("stock", "<i2"),
        ("minute", "<i8"),  # labeled minute
        ("day", "<i4"),  # calendar day of the labeled minute
        ("end_second", "<i8"),  # last frame in the window
        ("shift", "<i4"),  # seconds the end was moved back from the base end
        ("direction", "i1"),  # +1 / -1 for jumps, 0 otherwise
        ("is_duplicate", "u1"),
    ]
)


@dataclass
class DatasetConfig:
    steps: int = WINDOW_STEPS
    dup_shifts: tuple[int, ...] = (5, 10, 15, 20)
    jitter_range: tuple[int, int] = (0, 30)
    target_positive_share: float | None = 0.25
    n_classes: int = 2
    minutes_per_day: int = MINUTES_PER_DAY
    seed: int = 0


@dataclass
class Sample:
    matrix: np.ndarray
    label: int
    meta: np.void


@dataclass
class Dataset:
    X: np.ndarray  # (n, T, F) float32, z-normalised per sample and column
    y: np.ndarray  # (n,) uint8
    meta: np.ndarray  # META_DTYPE
    n_classes: int = 2

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx], self.meta[idx], self.n_classes)

    def sample(self, i) -> Sample:
        return Sample(self.X[i], int(self.y[i]), self.meta[i])

    @property
    def positive_share(self) -> float:
        return float(np.mean(self.y > 0)) if len(self.y) else 0.0


# -- window mechanics ---------------------------------------------------------

def base_end(minute: int) -> int:
    return MINUTE * minute - 1


def row_seconds(end_second, steps: int = WINDOW_STEPS) -> np.ndarray:
    """Stream seconds of every row for one or many window ends."""
    end = np.asarray(end_second, dtype=np.int64)
    offsets = MINUTE * np.arange(steps - 1, -1, -1, dtype=np.int64)
    return end[..., None] - offsets


def label_minute(end_second: int) -> int:
    """The minute whose return a window ending at ``end_second`` predicts."""
    return end_second // MINUTE + 1


def label_window(end_second: int, labels: JumpLabels, n_classes: int = 2) -> int:
    m = label_minute(end_second)
    if m >= len(labels) or not labels.detectable[m]:
        raise MissingLabel(f"no detectable label for minute {m}")
    if not labels.is_jump[m]:
        return 0
    if n_classes == 2:
        return 1
    return 1 if labels.direction[m] > 0 else 2


def make_windows(labels: JumpLabels, n_seconds: int, steps: int = WINDOW_STEPS) -> np.ndarray:
    """Metadata of one base sample per detectable minute with a full window behind it."""
    minutes = labels.minute_index[labels.detectable]
    ends = MINUTE * minutes - 1
    first_row = ends - MINUTE * (steps - 1)
    keep = (first_row >= 1) & (ends <= n_seconds)
    if not keep.any():
        raise InsufficientHistory(f"no minute has {steps} minutes of history")
    minutes = minutes[keep]
    meta = np.zeros(len(minutes), dtype=META_DTYPE)
    meta["minute"] = minutes
    meta["end_second"] = MINUTE * minutes - 1
    meta["direction"] = labels.direction[minutes]
    return meta


def duplicate_positives(meta_row, shifts) -> np.ndarray:
    """Copies of a positive base sample with the window end moved back by each shift."""
    out = np.repeat(np.atleast_1d(meta_row), len(shifts))
    for k, s in enumerate(shifts):
        if not 0 < s < MINUTE:
            raise ShiftTooLarge(f"shift {s}s would move the window into another minute")
        out[k]["end_second"] = meta_row["end_second"] - s
        out[k]["shift"] = s
        out[k]["is_duplicate"] = 1
    return out


def jitter_negatives(meta: np.ndarray, labels: JumpLabels, rng: np.random.Generator,
                     jitter_range=(0, 30), max_draws: int = 20, steps: int = WINDOW_STEPS) -> np.ndarray:
    """Move each negative's end back by a uniform number of seconds.

    A draw that would change the window's label is redrawn; after ``max_draws``
    failures the sample stays unshifted.
    """
    lo, hi = jitter_range
    out = meta.copy()
    if hi <= 0:
        return out
    for k in range(len(out)):
        base = int(meta[k]["end_second"])
        for _ in range(max_draws):
            s = int(rng.integers(lo, hi + 1))
            end = base - s
            m = label_minute(end)
            if m < len(labels) and labels.detectable[m] and not labels.is_jump[m] and end - MINUTE * (steps - 1) >= 1:
                out[k]["end_second"] = end
                out[k]["shift"] = s
                out[k]["minute"] = m
                break
    return out


def znormalize(matrix: np.ndarray) -> np.ndarray:
    """Standardise every column over the rows; constant columns become zeros."""
    x = np.asarray(matrix, dtype=np.float64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    safe = np.where(std > 0, std, 1.0)
    out = (x - mean) / safe
    out[:, std == 0] = 0.0
    return out


def znormalize_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=1, keepdims=True)
    std = x.std(axis=1, keepdims=True)
    safe = np.where(std > 0, std, 1.0)
    out = (x - mean) / safe
    return np.where(std > 0, out, 0.0)


# -- building -----------------------------------------------------------------

def select_samples(labels: JumpLabels, n_seconds: int, cfg: DatasetConfig) -> np.ndarray:
    """Metadata for every sample of the dataset, sorted by (minute, shift)."""
    rng = np.random.default_rng([cfg.seed, 11])
    base = make_windows(labels, n_seconds, cfg.steps)
    base["day"] = base["minute"] // cfg.minutes_per_day
    pos_mask = labels.is_jump[base["minute"]]
    pos = base[pos_mask]
    neg = base[~pos_mask]

    parts = [pos]
    for row in pos:
        dups = duplicate_positives(row, cfg.dup_shifts)
        ok = dups["end_second"] - MINUTE * (cfg.steps - 1) >= 1
        parts.append(dups[ok])
    positives = np.concatenate(parts) if parts else pos

    if cfg.target_positive_share is not None and len(positives):
        s = cfg.target_positive_share
        n_keep = int(round(len(positives) * (1 - s) / s))
        if n_keep < len(neg):
            pick = np.sort(rng.choice(len(neg), size=n_keep, replace=False))
            neg = neg[pick]
    neg = jitter_negatives(neg, labels, rng, cfg.jitter_range, steps=cfg.steps)
    neg["day"] = neg["minute"] // cfg.minutes_per_day

    meta = np.concatenate([positives, neg])
    meta = meta[np.lexsort((meta["shift"], meta["minute"]))]
    return meta


def labels_for(meta: np.ndarray, n_classes: int) -> np.ndarray:
    if n_classes == 2:
        return (meta["direction"] != 0).astype(np.uint8)
    return np.select([meta["direction"] > 0, meta["direction"] < 0], [1, 2], 0).astype(np.uint8)


def extract(source, meta: np.ndarray, steps: int = WINDOW_STEPS, columns=None, chunk: int = 256) -> np.ndarray:
    """Normalised float32 windows for the given sample metadata."""
    if not len(meta):
        return np.zeros((0, steps, N_SLOTS if columns is None else len(columns)), dtype=np.float32)
    X = None
    for a in range(0, len(meta), chunk):
        rows = row_seconds(meta["end_second"][a : a + chunk], steps)
        raw = source.frames(rows)
        if columns is not None:
            raw = raw[..., columns]
        if X is None:
            X = np.empty((len(meta), steps, raw.shape[-1]), dtype=np.float32)
        X[a : a + chunk] = znormalize_batch(raw)
    return X


def build_dataset(source, labels: JumpLabels, cfg: DatasetConfig = DatasetConfig()) -> Dataset:
    meta = select_samples(labels, source.n_seconds, cfg)
    X = extract(source, meta, cfg.steps)
    return Dataset(X, labels_for(meta, cfg.n_classes), meta, cfg.n_classes)


def leakage_violations(meta: np.ndarray, steps: int = WINDOW_STEPS) -> int:
    """Samples whose latest frame is at or after the start of the labeled minute."""
    latest = row_seconds(meta["end_second"], steps).max(axis=-1)
    return int(np.sum(latest >= MINUTE * meta["minute"]))


# -- splits ---------------------------------------------------------------------

@dataclass
class SplitPlan:
    entries: list[tuple[tuple[int, int], tuple[int, int]]] = field(
        default_factory=lambda: [((1, 50 * k), (50 * k + 1, 50 * k + 10)) for k in range(1, 8)]
    )
    validation_fraction: float = 0.15
    rolling_window_days: int = 50
    first_calendar_day: int = 2  # plan day 1 is the first day with detectable jumps

    def __post_init__(self):
        for (a, b), (c, d) in self.entries:
            if not (a <= b and c <= d) or not (d < a or c > b):
                raise OverlapViolation(f"train days {a}-{b} overlap test days {c}-{d}")

    def plan_day(self, calendar_day):
        return np.asarray(calendar_day) - self.first_calendar_day + 1

    @property
    def calendar_days_needed(self) -> int:
        return max(d for _, (_, d) in self.entries) + self.first_calendar_day


@dataclass
class Split:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


def split(meta: np.ndarray, plan: SplitPlan, entry: int, seed: int = 0) -> Split:
    """Index sets for one plan entry.

    Validation takes one contiguous block of base minutes per training day; a
    positive's duplicates share its minute, so they never straddle the boundary.
    """
    (a, b), (c, d) = plan.entries[entry]
    pday = plan.plan_day(meta["day"])
    train_mask = (pday >= a) & (pday <= b)
    test_mask = (pday >= c) & (pday <= d)
    rng = np.random.default_rng([seed, entry, 23])
    val_mask = np.zeros(len(meta), dtype=bool)
    for day in np.unique(pday[train_mask]):
        in_day = train_mask & (pday == day)
        minutes = np.unique(meta["minute"][in_day])
        n_val = int(round(plan.validation_fraction * len(minutes)))
        if n_val == 0:
            continue
        start = int(rng.integers(0, len(minutes) - n_val + 1))
        chosen = minutes[start : start + n_val]
        val_mask |= in_day & np.isin(meta["minute"], chosen)
    train_idx = np.flatnonzero(train_mask & ~val_mask)
    val_idx = np.flatnonzero(val_mask)
    test_idx = np.flatnonzero(test_mask)
    if np.intersect1d(meta["minute"][train_idx], meta["minute"][val_idx]).size:
        raise OverlapViolation("a base sample straddles train and validation")
    if np.intersect1d(meta["minute"][np.concatenate([train_idx, val_idx])], meta["minute"][test_idx]).size:
        raise OverlapViolation("test minutes appear in training data")
    return Split(train_idx, val_idx, test_idx)


# -- file format ------------------------------------------------------------------

def _record_dtype(T: int, F: int) -> np.dtype:
    return np.dtype([("x", "<f4", (T, F)), ("label", "u1")] + [(n, META_DTYPE[n]) for n in META_DTYPE.names])


_HEADER = struct.Struct("<IIIB")


def write_dataset(path, ds: Dataset) -> None:
    n, T, F = ds.X.shape
    rec = np.zeros(n, dtype=_record_dtype(T, F))
    rec["x"] = ds.X
    rec["label"] = ds.y
    for name in META_DTYPE.names:
        rec[name] = ds.meta[name]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(n, T, F, ds.n_classes))
        fh.write(rec.tobytes())


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        n, T, F, n_classes = _HEADER.unpack(fh.read(_HEADER.size))
    rec = np.fromfile(path, dtype=_record_dtype(T, F), offset=_HEADER.size, count=n)
    meta = np.zeros(n, dtype=META_DTYPE)
    for name in META_DTYPE.names:
        meta[name] = rec[name]
    return Dataset(np.ascontiguousarray(rec["x"]), rec["label"].copy(), meta, n_classes)
