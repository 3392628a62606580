import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_panel
from spofolio.errors import AlignmentError, DataError, HistoryError, ParseError
from spofolio.market_data import (
    CSV_HEADER,
    Bar,
    estimate_covariance,
    load_panel,
    read_bars,
    write_panel_csv,
)
from spofolio.synthetic import generate_synthetic_panel

HEADER = ",".join(CSV_HEADER)


def write_csv(path, rows):
    path.write_text(HEADER + "\n" + "".join(r + "\n" for r in rows))
    return path


def bar_row(date, price, volume=1000):
    return f"{date},{price},{price},{price},{price},{price},{volume}"


def test_identical_files_give_simple_returns(tmp_path):
    rows = [bar_row("2020-01-02", 100), bar_row("2020-01-03", 110), bar_row("2020-01-06", 99)]
    a = write_csv(tmp_path / "a.csv", rows)
    b = write_csv(tmp_path / "b.csv", rows)
    panel = load_panel([a, b], ["A", "B"])
    assert panel.tickers == ("A", "B")
    np.testing.assert_allclose(panel.returns, [[0.10, -0.10], [0.10, -0.10]], atol=1e-15)


def test_calendar_is_intersection(tmp_path):
    a = write_csv(tmp_path / "a.csv", [bar_row(d, 10) for d in ("2020-01-01", "2020-01-02", "2020-01-03")])
    b = write_csv(tmp_path / "b.csv", [bar_row(d, 10) for d in ("2020-01-02", "2020-01-03", "2020-01-04")])
    panel = load_panel([a, b], ["A", "B"])
    assert [str(d) for d in panel.calendar] == ["2020-01-02", "2020-01-03"]


def test_header_only_file_is_alignment_error(tmp_path):
    a = write_csv(tmp_path / "a.csv", [])
    b = write_csv(tmp_path / "b.csv", [bar_row("2020-01-02", 1), bar_row("2020-01-03", 1)])
    with pytest.raises(AlignmentError):
        load_panel([a, b], ["A", "B"])


def test_unsorted_rows_are_sorted_and_order_preserved(tmp_path):
    a = write_csv(tmp_path / "a.csv", [bar_row("2020-01-03", 3), bar_row("2020-01-01", 1), bar_row("2020-01-02", 2)])
    bars = read_bars(a)
    assert [b.adj_close for b in bars] == [1.0, 2.0, 3.0]


@pytest.mark.parametrize(
    "row, needle",
    [
        ("2020-01-02,1,1,1,1,1", "expected 7 fields"),
        ("2020-13-02,1,1,1,1,1,1", "bad date"),
        ("2020-01-02,1,1,1,1,abc,1", "bad adj_close"),
        ("2020-01-02,1,1,1,1,,1", "missing adj_close"),
    ],
)
def test_malformed_rows_report_file_and_line(tmp_path, row, needle):
    path = write_csv(tmp_path / "x.csv", [bar_row("2020-01-01", 1), row])
    with pytest.raises(ParseError) as err:
        read_bars(path)
    assert err.value.line == 3
    assert needle in str(err.value) and "x.csv" in str(err.value)


def test_duplicate_date_and_bad_header(tmp_path):
    dup = write_csv(tmp_path / "d.csv", [bar_row("2020-01-01", 1), bar_row("2020-01-01", 2)])
    with pytest.raises(ParseError, match="duplicate"):
        read_bars(dup)
    bad = tmp_path / "h.csv"
    bad.write_text("date,close\n2020-01-01,1\n")
    with pytest.raises(ParseError, match="header"):
        read_bars(bad)


def test_non_positive_adj_close_is_data_error(tmp_path):
    path = write_csv(tmp_path / "z.csv", [bar_row("2020-01-01", 1), bar_row("2020-01-02", 0)])
    with pytest.raises(DataError):
        read_bars(path)


def test_bar_invariants():
    with pytest.raises(DataError):
        Bar(None, 10, 9, 8, 10, 10, 1)  # high below open
    with pytest.raises(DataError):
        Bar(None, 10, 11, 9, 10, 10, -1)
    nan = float("nan")
    Bar(None, nan, nan, nan, nan, 10, 0)  # OHLC check skipped when fields are absent


def test_csv_round_trip(tmp_path):
    panel, _ = generate_synthetic_panel(3, 3, 320, 0.02)
    paths = write_panel_csv(panel, tmp_path)
    again = load_panel(paths, panel.tickers)
    np.testing.assert_array_equal(again.adj_close, panel.adj_close)
    np.testing.assert_array_equal(again.calendar, panel.calendar)
    np.testing.assert_array_equal(again.returns, panel.returns)


def test_returns_recompute_exactly_and_panel_is_read_only():
    panel, _ = generate_synthetic_panel(1, 4, 310, 0.02)
    np.testing.assert_array_equal(panel.returns, panel.adj_close[:, 1:] / panel.adj_close[:, :-1] - 1.0)
    with pytest.raises(ValueError):
        panel.adj_close[0, 0] = 1.0


def test_constant_prices_give_ridge_identity():
    panel = make_panel(np.full((3, 260), 50.0))
    est = estimate_covariance(panel, panel.calendar[-1])
    np.testing.assert_array_equal(est.sigma, 1e-6 * np.eye(3))


def test_perfectly_correlated_returns():
    rng = np.random.default_rng(0)
    r = rng.normal(0, 0.01, 240)
    p1 = 100 * np.cumprod(np.r_[1.0, 1 + r])
    p2 = 50 * np.cumprod(np.r_[1.0, 1 + 3 * r])
    panel = make_panel(np.vstack([p1, p2]))
    s = estimate_covariance(panel, panel.calendar[-1], window_days=220, ridge=0.0).sigma
    assert abs(s[0, 1] - np.sqrt(s[0, 0] * s[1, 1])) < 1e-10


# frozen from tests/oracles/covariance_oracle.py (two-pass covariance, x21)
ORACLE_COV = np.array([
    [0.0010499911006899337, 0.0005719548336275063, -0.00042769008766103863],
    [0.0005719548336275063, 0.0011728565670753037, 0.0007485004073905096],
    [-0.00042769008766103863, 0.0007485004073905096, 0.0013252581962185201],
])


def test_covariance_matches_two_pass_oracle():
    d = np.arange(30)
    r = np.array([0.01 * np.sin(1.3 * d + i) + 0.002 * i * np.cos(0.4 * d) for i in range(3)])
    prices = 100 * np.cumprod(np.hstack([np.ones((3, 1)), 1 + r]), axis=1)
    # one extra date so that all 30 returns end strictly before the as-of date
    prices = np.hstack([prices, prices[:, -1:]])
    panel = make_panel(prices)
    est = estimate_covariance(panel, panel.calendar[-1], window_days=30, ridge=1e-6)
    np.testing.assert_allclose(est.sigma - 1e-6 * np.eye(3), ORACLE_COV, atol=1e-10, rtol=0)


def test_covariance_uses_only_returns_before_asof():
    panel, _ = generate_synthetic_panel(4, 3, 400, 0.02)
    asof = panel.calendar[300]
    a = estimate_covariance(panel, asof)
    b = estimate_covariance(panel.truncate(asof), asof)
    np.testing.assert_array_equal(a.sigma, b.sigma)


def test_insufficient_history_names_shortfall():
    panel = make_panel(np.full((2, 100), 10.0))
    with pytest.raises(HistoryError) as err:
        estimate_covariance(panel, panel.calendar[50], window_days=220)
    assert err.value.shortfall == 220 - 49
    assert "171" in str(err.value)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 6), window=st.integers(5, 60))
def test_covariance_is_symmetric_pd(seed, n, window):
    rng = np.random.default_rng(seed)
    prices = 100 * np.cumprod(1 + rng.normal(0, 0.02, (n, window + 2)), axis=1)
    panel = make_panel(prices)
    est = estimate_covariance(panel, panel.calendar[-1], window_days=window, ridge=1e-6)
    assert np.abs(est.sigma - est.sigma.T).max() <= 1e-12
    assert np.linalg.eigvalsh(est.sigma).min() >= 1e-6 - 1e-9
    np.linalg.cholesky(est.sigma)


def test_alignment_preserves_per_ticker_order(tmp_path):
    rng = np.random.default_rng(2)
    days = [f"2020-02-{d:02d}" for d in range(1, 29)]
    keep_a = sorted(rng.choice(len(days), 20, replace=False))
    keep_b = sorted(rng.choice(len(days), 20, replace=False))
    a = write_csv(tmp_path / "a.csv", [bar_row(days[k], 1 + k) for k in keep_a])
    b = write_csv(tmp_path / "b.csv", [bar_row(days[k], 1 + k) for k in keep_b])
    panel = load_panel([a, b], ["A", "B"])
    assert np.all(np.diff(panel.adj_close[0]) > 0)
    common = sorted(set(keep_a) & set(keep_b))
    assert [str(d) for d in panel.calendar] == [days[k] for k in common]
