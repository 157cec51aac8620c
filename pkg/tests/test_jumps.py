import math

import numpy as np
import pytest

from lobjump.jumps import (
    DOWN, UP, DetectorConfig, InsufficientHistory, NonPositivePrice, SeriesTooShort, ZeroVolatility,
    bipower_sigma, bipower_sigmas, detect_jumps, gumbel_constants, jump_statistic, label_minutes,
    log_returns, minute_prices, read_labels, rejection_threshold, write_labels,
)
from oracles import binomial_interval, bipower_sigma_bruteforce, gbm_prices, planted_gbm

K = 600


def test_log_returns_examples():
    assert np.array_equal(log_returns([100, 100, 100]), [0.0, 0.0])
    assert log_returns([100, 100 * math.exp(0.01)])[0] == pytest.approx(0.01, abs=1e-15)


def test_log_returns_roundtrip():
    p = np.random.default_rng(0).uniform(50, 150, 1000)
    back = p[0] * np.exp(np.concatenate([[0.0], np.cumsum(log_returns(p))]))
    assert np.max(np.abs(back / p - 1)) < 1e-12


@pytest.mark.parametrize("bad", [[100, 0, 100], [100, -1], [100, np.nan]])
def test_log_returns_rejects_nonpositive(bad):
    with pytest.raises(NonPositivePrice):
        log_returns(bad)


def test_log_returns_too_short():
    with pytest.raises(SeriesTooShort):
        log_returns([100])


def test_bipower_constant_and_zero():
    assert bipower_sigma(np.full(700, -0.003), 650, K) == pytest.approx(0.003, rel=1e-12)
    assert bipower_sigma(np.zeros(700), 650, K) == 0.0


def test_bipower_matches_direct_summation_exactly():
    r = np.random.default_rng(1).normal(0, 0.01, 2000)
    for i in (600, 777, 1999):
        assert bipower_sigma(r, i, K) == bipower_sigma_bruteforce(r, i, K)
    # the estimator targets sigma * sqrt(2/pi)
    assert bipower_sigma(r, 1999, K) == pytest.approx(0.01 * math.sqrt(2 / math.pi), rel=0.15)


def test_vectorised_bipower_agrees():
    r = np.random.default_rng(2).normal(0, 0.01, 3000)
    vec = bipower_sigmas(r, K)
    assert np.isnan(vec[:K]).all()
    for i in (K, 1234, 2999):
        assert vec[i] == pytest.approx(bipower_sigma(r, i, K), rel=1e-9)


def test_bipower_insufficient_history():
    with pytest.raises(InsufficientHistory):
        bipower_sigma(np.ones(700), 599, K)


def test_statistic_examples():
    r = np.full(700, 0.001) * np.where(np.arange(700) % 2, 1, -1)
    r[650] = 0.0
    assert jump_statistic(r, 650, K) == 0.0
    r[650] = 0.01
    assert jump_statistic(r, 650, K) == pytest.approx(10.0, rel=0.01)
    with pytest.raises(ZeroVolatility):
        jump_statistic(np.zeros(700), 650, K)


def test_threshold_constants():
    cn, sn = gumbel_constants(390)
    c = math.sqrt(2 / math.pi)
    root = math.sqrt(2 * math.log(390))
    assert sn == pytest.approx(1 / (c * root))
    assert cn == pytest.approx(root / c - (math.log(math.pi) + math.log(math.log(390))) / (2 * c * root))
    assert rejection_threshold(390, 0.01) == pytest.approx(cn - sn * math.log(-math.log(0.99)))


def test_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(window_K=2)
    with pytest.raises(ValueError):
        DetectorConfig(significance_alpha=1.0)


def test_series_too_short():
    with pytest.raises(SeriesTooShort):
        detect_jumps(np.full(K + 1, 100.0))


def test_constant_series_has_no_jumps():
    lab = detect_jumps(np.full(3 * 390, 100.0))
    assert lab.n_jumps == 0
    assert np.all(lab.statistic[lab.detectable] == 0)


def test_warmup_and_first_minute_undetectable():
    lab = detect_jumps(gbm_prices(4 * 390 - 1, 0.001, 3))
    assert not lab.detectable[: 2 * 390].any()
    assert lab.detectable[2 * 390 :].all()
    assert label_minutes(lab)[0] == -1


def test_planted_jump_found_with_direction():
    prices, planted = planted_gbm(3, 1, 0.0005, 10.0, seed=4)
    lab = detect_jumps(prices)
    for idx, sign in planted:
        assert lab.is_jump[idx]
        assert lab.direction[idx] == (UP if sign > 0 else DOWN)


def test_session_open_jump_suppressed():
    p = gbm_prices(4 * 390, 0.0005, 5)
    m = 3 * 390
    p[m:] *= math.exp(0.02)
    lab = detect_jumps(p)
    assert abs(lab.statistic[m]) > rejection_threshold(390, 0.01)
    assert not lab.is_jump[m]
    assert lab.is_jump[m] == (label_minutes(lab)[m] == 1)


def test_scale_invariance():
    prices, _ = planted_gbm(3, 2, 0.0005, 8.0, seed=6)
    a, b = detect_jumps(prices), detect_jumps(prices * 37.5)
    assert np.array_equal(a.is_jump, b.is_jump)
    ok = a.detectable
    assert np.allclose(a.statistic[ok], b.statistic[ok], rtol=1e-9, atol=1e-9)


def test_monotone_in_return_size():
    r = np.random.default_rng(7).normal(0, 0.0005, 1500)
    prev = -1.0
    for scale in (0.0, 1.0, 2.0, 5.0, 20.0):
        rr = r.copy()
        rr[1200] = scale * 0.0005
        L = abs(jump_statistic(rr, 1200, K))
        assert L >= prev
        prev = L


def test_labels_depend_only_on_trailing_window():
    prices, _ = planted_gbm(4, 2, 0.0005, 8.0, seed=8)
    full = detect_jumps(prices)
    cut = 4 * 390 + 123
    part = detect_jumps(prices[:cut])
    assert np.array_equal(full.is_jump[:cut], part.is_jump)
    ok = part.detectable
    assert np.allclose(full.statistic[:cut][ok], part.statistic[ok], rtol=1e-9)


def test_label_minutes_projection():
    lab = detect_jumps(np.full(3 * 390, 100.0))
    assert set(np.unique(label_minutes(lab)[lab.detectable]).tolist()) == {0}
    lab.is_jump[900] = True
    y = label_minutes(lab)
    assert y[900] == 1 and (y[lab.detectable] == 1).sum() == 1


def test_false_positive_days_within_binomial_interval():
    n_days = 100
    lab = detect_jumps(gbm_prices((n_days + 2) * 390 - 1, 0.0005, 9))
    per_day = lab.is_jump[2 * 390 :].reshape(n_days, 390)
    lo, hi = binomial_interval(n_days, 0.01)
    assert lo <= int(per_day.any(axis=1).sum()) <= hi


def test_label_file_roundtrip(tmp_path):
    prices, _ = planted_gbm(2, 2, 0.0005, 10.0, seed=10)
    lab = detect_jumps(prices)
    write_labels(tmp_path / "l.csv", lab)
    back = read_labels(tmp_path / "l.csv")
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "minute_index,is_jump,direction,L"
    for name in ("minute_index", "detectable", "is_jump", "direction"):
        assert np.array_equal(getattr(back, name), getattr(lab, name))
    assert np.array_equal(back.statistic, lab.statistic, equal_nan=True)


def test_minute_prices_sample_full_minutes():
    from lobjump.lob import SNAPSHOT_DTYPE

    snaps = np.zeros(180, dtype=SNAPSHOT_DTYPE)
    snaps["second"] = np.arange(1, 181)
    snaps["ask"][:, 0, 0] = 10002 + np.arange(180)
    snaps["bid"][:, 0, 0] = 10000 + np.arange(180)
    assert minute_prices(snaps).tolist() == [10060.0, 10120.0, 10180.0]
