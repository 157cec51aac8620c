"""Lee-Mykland style jump test on minute-sampled mid-prices.

The statistic for return ``r_i`` is ``L(i) = r_i / sigma(i)`` where ``sigma(i)``
is the bipower estimate over the trailing window. A return is flagged when
``(|L| - C_n) / S_n`` exceeds the Gumbel quantile ``-ln(-ln(1 - alpha))``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MINUTES_PER_DAY = 390

UP, NONE, DOWN = 1, 0, -1
_DIRECTION_NAMES = {UP: "up", DOWN: "down", NONE: "none"}


class JumpError(Exception):
    pass


class NonPositivePrice(JumpError):
    pass


class InsufficientHistory(JumpError):
    pass


class ZeroVolatility(JumpError):
    pass


class SeriesTooShort(JumpError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    window_K: int = 600
    significance_alpha: float = 0.01
    n_per_day: int = MINUTES_PER_DAY
    warmup_days: int = 2
    suppress_session_open: bool = True

    def __post_init__(self):
        if self.window_K < 3:
            raise ValueError("window_K must be >= 3")
        if not 0 < self.significance_alpha < 1:
            raise ValueError("significance_alpha must lie in (0, 1)")


@dataclass(frozen=True)
class JumpLabel:
    minute_index: int
    is_jump: bool
    direction: int  # UP, DOWN or NONE
    statistic_L: float
    detectable: bool = True


@dataclass
class JumpLabels:
    """Column view of one label per minute of the price series.

    Minute 0 has no return and is always undetectable.
    """

    minute_index: np.ndarray
    detectable: np.ndarray
    is_jump: np.ndarray
    direction: np.ndarray
    statistic: np.ndarray

    def __len__(self):
        return len(self.minute_index)

    def __getitem__(self, m) -> JumpLabel:
        return JumpLabel(int(self.minute_index[m]), bool(self.is_jump[m]), int(self.direction[m]),
                         float(self.statistic[m]), bool(self.detectable[m]))

    @property
    def n_jumps(self) -> int:
        return int(self.is_jump.sum())


def log_returns(prices) -> np.ndarray:
    p = np.asarray(prices, dtype=np.float64)
    if len(p) < 2:
        raise SeriesTooShort("need at least two prices")
    if np.any(~(p > 0)):
        raise NonPositivePrice("prices must be strictly positive")
    return np.diff(np.log(p))


def _bipower_products(returns: np.ndarray) -> np.ndarray:
    a = np.abs(returns)
    prod = np.zeros_like(a)
    prod[1:] = a[1:] * a[:-1]
    return prod


def bipower_sigma(returns, i: int, K: int) -> float:
    """sqrt of (1/(K-2)) * sum_{j=i-K+2}^{i-1} |r_j||r_{j-1}|."""
    r = np.asarray(returns, dtype=np.float64)
    if i < K:
        raise InsufficientHistory(f"index {i} needs {K} prior returns")
    prod = _bipower_products(r)
    # correctly rounded sum, so the value does not depend on summation order
    return math.sqrt(math.fsum(prod[i - K + 2 : i].tolist()) / (K - 2))


def bipower_sigmas(returns: np.ndarray, K: int) -> np.ndarray:
    """bipower_sigma for every index at once; NaN where i < K."""
    prod = _bipower_products(returns)
    csum = np.concatenate([[0.0], np.cumsum(prod)])
    out = np.full(len(returns), np.nan)
    idx = np.arange(K, len(returns))
    out[idx] = np.sqrt(np.maximum(csum[idx] - csum[idx - K + 2], 0.0) / (K - 2))
    return out


def jump_statistic(returns, i: int, K: int) -> float:
    sigma = bipower_sigma(returns, i, K)
    if sigma == 0:
        raise ZeroVolatility(f"zero bipower variation at index {i}")
    return float(returns[i] / sigma)


def gumbel_constants(n: int) -> tuple[float, float]:
    c = math.sqrt(2 / math.pi)
    root = math.sqrt(2 * math.log(n))
    cn = root / c - (math.log(math.pi) + math.log(math.log(n))) / (2 * c * root)
    sn = 1 / (c * root)
    return cn, sn


def rejection_threshold(n: int, alpha: float) -> float:
    """Smallest |L| that is flagged as a jump."""
    cn, sn = gumbel_constants(n)
    return cn + sn * -math.log(-math.log(1 - alpha))


def detect_jumps(prices, config: DetectorConfig = DetectorConfig()) -> JumpLabels:
    p = np.asarray(prices, dtype=np.float64)
    K = config.window_K
    if len(p) <= K + 1:
        raise SeriesTooShort(f"{len(p)} prices, window needs more than {K + 1}")
    r = log_returns(p)
    sig = bipower_sigmas(r, K)

    n = len(p)
    minute = np.arange(n)
    stat = np.full(n, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        stat[1:] = np.where(sig > 0, r / sig, 0.0)
    # returns index i maps to minute i + 1
    detectable = np.zeros(n, dtype=bool)
    detectable[1:] = ~np.isnan(sig)
    detectable &= minute >= config.warmup_days * config.n_per_day
    stat[~detectable] = np.nan

    thr = rejection_threshold(config.n_per_day, config.significance_alpha)
    is_jump = detectable & (np.abs(np.nan_to_num(stat)) > thr)
    if config.suppress_session_open:
        is_jump &= minute % config.n_per_day != 0
    direction = np.where(is_jump, np.sign(np.nan_to_num(stat)), 0).astype(np.int8)
    return JumpLabels(minute, detectable, is_jump, direction, stat)


def label_minutes(labels: JumpLabels) -> np.ndarray:
    """0/1 class per minute; undetectable minutes are -1 and must not become samples."""
    out = labels.is_jump.astype(np.int8)
    out[~labels.detectable] = -1
    return out


def write_labels(path, labels: JumpLabels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["minute_index", "is_jump", "direction", "L"])
        for m, det, j, d, L in zip(labels.minute_index.tolist(), labels.detectable.tolist(),
                                   labels.is_jump.tolist(), labels.direction.tolist(),
                                   labels.statistic.tolist()):
            if not det:
                w.writerow([m, "", "na", ""])
            else:
                w.writerow([m, int(j), _DIRECTION_NAMES[d], repr(L)])


def read_labels(path) -> JumpLabels:
    rows = list(csv.DictReader(Path(path).open()))
    names = {v: k for k, v in _DIRECTION_NAMES.items()}
    minute = np.array([int(r["minute_index"]) for r in rows], dtype=np.int64)
    det = np.array([r["direction"] != "na" for r in rows])
    is_jump = np.array([r["is_jump"] == "1" for r in rows])
    direction = np.array([names.get(r["direction"], 0) for r in rows], dtype=np.int8)
    stat = np.array([float(r["L"]) if r["L"] else np.nan for r in rows])
    return JumpLabels(minute, det, is_jump, direction, stat)


def minute_prices(snaps: np.ndarray, seconds_per_minute: int = 60) -> np.ndarray:
    """Mid-price at every full minute of a snapshot array covering seconds 1..N.

    Empty-side minutes carry the last valid mid forward.
    """
    from .lob import mid_prices

    secs = snaps["second"].astype(np.int64)
    pick = np.flatnonzero(secs % seconds_per_minute == 0)
    mid = mid_prices(snaps[pick])
    valid = ~np.isnan(mid)
    if not valid.any():
        raise NonPositivePrice("no minute with both book sides populated")
    idx = np.where(valid, np.arange(len(mid)), 0)
    np.maximum.accumulate(idx, out=idx)
    first = int(np.argmax(valid))
    mid = mid[idx]
    mid[:first] = mid[first]
    return mid
