import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_panel
from spofolio.errors import DataError, HistoryError
from spofolio.features import (
    FEATURE_NAMES,
    FeatureTable,
    compute_feature_row,
    design_matrix,
    ema,
    fit_standardizer,
    indicator_series,
    wilder_rsi,
    write_feature_dump,
)
from spofolio.synthetic import generate_synthetic_panel

# frozen from tests/oracles/feature_oracle.py
WIGGLE_FEATURES = [
    0.015226010841735091, 0.007040286899983069, 0.035832934414777036, 74.02991108519515,
    0.0019427249567179304, 0.10917696865340194, 0.014716207052495198,
]
RAMP_FEATURES = [
    0.007220247973487097, 0.0074661528769019506, 0.03345724907063197, 100.0,
    0.0019580688990693037, 0.1781090748211706, 0.0,
]


def wiggle(T=40):
    t = np.arange(T)
    return 100.0 + 0.5 * t + 2.0 * np.sin(t), 1000.0 + 10.0 * t + 50.0 * np.cos(0.7 * t)


def test_feature_order_fixed():
    assert FEATURE_NAMES == (
        "log_return", "sma10_trend", "price_bias", "rsi14", "macd_diff", "bollinger_width", "volume_bias",
    )


def test_matches_indicator_oracle():
    p, v = wiggle()
    row = compute_feature_row(make_panel(p, volume=v), 0, make_panel(p).calendar[39])
    np.testing.assert_allclose(row.values, WIGGLE_FEATURES, rtol=0, atol=1e-9)
    ramp = 100.0 + np.arange(40)
    row = compute_feature_row(make_panel(ramp, volume=np.full(40, 1000.0)), 0, make_panel(ramp).calendar[39])
    np.testing.assert_allclose(row.values, RAMP_FEATURES, rtol=0, atol=1e-9)


def test_constant_prices_vanish():
    panel = make_panel(np.full(60, 42.0), volume=np.full(60, 500.0))
    row = compute_feature_row(panel, 0, panel.calendar[-1])
    log_ret, trend, bias, rsi, macd, width, vbias = row.values
    assert log_ret == 0 and bias == 0 and macd == 0 and width == 0
    assert trend == 0 and vbias == 0
    assert rsi == 50.0


def test_up_days_give_rsi_100_and_down_days_0():
    up = np.arange(1, 20, dtype=float)
    assert wilder_rsi(up)[14] == 100.0
    assert wilder_rsi(up[::-1])[-1] == 0.0


def test_history_requirement():
    panel = make_panel(np.linspace(10, 20, 60))
    with pytest.raises(HistoryError):
        compute_feature_row(panel, 0, panel.calendar[34])
    compute_feature_row(panel, 0, panel.calendar[35])


def test_zero_volume_average_gives_zero_bias():
    panel = make_panel(np.linspace(10, 20, 50), volume=np.zeros(50))
    assert compute_feature_row(panel, 0, panel.calendar[-1]).values[6] == 0.0


def test_no_look_ahead_under_truncation():
    panel, _ = generate_synthetic_panel(9, 3, 340, 0.03)
    for t in (35, 120, 250):
        asof = panel.calendar[t]
        full = compute_feature_row(panel, 1, asof)
        cut = compute_feature_row(panel.truncate(asof), 1, asof)
        np.testing.assert_array_equal(full.values, cut.values)


def test_table_agrees_with_rowwise_computation():
    panel, _ = generate_synthetic_panel(9, 3, 320, 0.03)
    table = FeatureTable(panel)
    for t in (35, 200, 319):
        rows = table.rows(t)
        for i in range(panel.n):
            np.testing.assert_allclose(rows[i].values, compute_feature_row(panel, i, panel.calendar[t]).values, rtol=1e-12, atol=1e-15)
    with pytest.raises(HistoryError):
        table.raw_matrix(10)


def test_row_invariants_on_synthetic_data():
    panel, _ = generate_synthetic_panel(3, 4, 330, 0.03)
    table = FeatureTable(panel)
    vals = table.values[:, 35:, :]
    assert np.all((vals[..., 3] >= 0) & (vals[..., 3] <= 100))
    assert np.all(vals[..., 5] >= 0)
    row = table.rows(100)[2]
    assert row.ticker_onehot.sum() == 1.0 and row.ticker_onehot[2] == 1.0
    assert row.vector.shape == (7 + panel.n,)


def test_ema_constant_exact_and_recursion():
    np.testing.assert_array_equal(ema(np.full(30, 3.7), 12), np.full(30, 3.7))
    x = np.array([1.0, 2.0, 4.0, 3.0])
    a = 2 / 13
    ref = [1.0]
    for v in x[1:]:
        ref.append(a * v + (1 - a) * ref[-1])
    np.testing.assert_allclose(ema(x, 12), ref, rtol=1e-14)


def test_two_point_standardizer():
    std = fit_standardizer(np.array([[1.0], [3.0]]))
    assert std.mean[0] == 2.0 and std.std[0] == 1.0
    np.testing.assert_array_equal(std.transform(np.array([[1.0], [3.0]])), [[-1.0], [1.0]])


def test_constant_column_is_flagged_and_zeroed():
    x = np.array([[1.0, 5.0], [2.0, 5.0], [4.0, 5.0]])
    std = fit_standardizer(x)
    assert list(std.constant) == [False, True]
    assert np.all(std.transform(x)[:, 1] == 0.0)


def test_random_rows_standardize_to_unit_moments(rng):
    x = rng.normal(3.0, 7.0, (100, 7))
    z = fit_standardizer(x).transform(x)
    assert np.abs(z.mean(0)).max() <= 1e-12
    assert np.abs(z.std(0) - 1).max() <= 1e-12


def test_transform_leaves_onehot_block_and_is_not_idempotent(rng):
    raw = rng.normal(5.0, 2.0, (10, 3, 7))
    std = fit_standardizer(raw)
    design = np.stack([design_matrix(r) for r in raw])
    z = std.transform(design)
    np.testing.assert_array_equal(z[..., 7:], design[..., 7:])
    twice = std.transform(z)
    np.testing.assert_allclose(twice[..., :7], (z[..., :7] - std.mean) / std.std, rtol=1e-13)
    assert not np.allclose(twice, z)


def test_standardizer_errors():
    with pytest.raises(DataError):
        fit_standardizer([])
    with pytest.raises(DataError):
        fit_standardizer(np.ones((1, 7)))


def test_feature_dump(tmp_path):
    panel, _ = generate_synthetic_panel(0, 2, 310, 0.02)
    table = FeatureTable(panel)
    path = tmp_path / "f.csv"
    write_feature_dump(path, table, [40, 41])
    lines = path.read_text().splitlines()
    assert lines[0] == "date,ticker,feat_1,feat_2,feat_3,feat_4,feat_5,feat_6,feat_7"
    assert len(lines) == 5
    assert float(lines[1].split(",")[5]) == table.values[0, 40, 3]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_rsi_bounds_property(seed):
    rng = np.random.default_rng(seed)
    p = 50 * np.exp(np.cumsum(rng.normal(0, 0.03, 80)))
    out = indicator_series(p, rng.uniform(0, 1e4, 80))
    rsi = out[35:, 3]
    assert np.all((rsi >= 0) & (rsi <= 100))
    assert np.all(out[35:, 5] >= 0)
    assert np.all(np.isnan(out[:35]))


def test_wiggle_log_return_by_hand():
    p, _ = wiggle()
    out = indicator_series(p, np.ones(40))
    assert out[39, 0] == pytest.approx(math.log(p[39] / p[38]), abs=1e-15)
