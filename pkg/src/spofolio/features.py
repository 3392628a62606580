"""Per-asset technical features and their training-window standardization.

Features at a date use prices and volumes up to and including that date only.
All indicators are computed on ``adj_close``:

- ``log_return``: ``ln(P_t / P_{t-1})``
- ``sma10_trend``: mean of the last 10 daily log returns
- ``price_bias``: ``(P_t - SMA10(P)) / SMA10(P)``
- ``rsi14``: Wilder-smoothed 14-day RSI
- ``macd_diff``: ``((EMA12 - EMA26) - EMA9(EMA12 - EMA26)) / P_t``
- ``bollinger_width``: ``(upper - lower) / middle`` for a 20-day, 2-sigma band
- ``volume_bias``: ``(V_t - SMA10(V)) / SMA10(V)``, 0 when the average volume is 0
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter

from .errors import DataError, HistoryError

FEATURE_NAMES = (
    "log_return",
    "sma10_trend",
    "price_bias",
    "rsi14",
    "macd_diff",
    "bollinger_width",
    "volume_bias",
)
N_RAW = len(FEATURE_NAMES)
# MACD slow EMA (26) plus its signal EMA (9)
MIN_HISTORY = 35

RSI_PERIOD = 14
SMA_PERIOD = 10
BB_PERIOD = 20
BB_WIDTH_SIGMAS = 2.0


def ema(x, span):
    """Recursive EMA with ``alpha = 2 / (span + 1)`` seeded at the first observation."""
    x = np.asarray(x, dtype=float)
    a = 2.0 / (span + 1.0)
    # filtering the deviation from the seed keeps a constant series exactly constant
    return x[0] + lfilter([a], [1.0, a - 1.0], x - x[0])


def wilder_rsi(prices, period=RSI_PERIOD):
    """RSI series; entries before ``period`` deltas are available are NaN.

    A window without losses gives 100; without gains 0; flat prices give 50.
    """
    prices = np.asarray(prices, dtype=float)
    out = np.full(prices.shape, np.nan)
    if prices.size <= period:
        return out
    delta = np.diff(prices)
    gain = np.maximum(delta, 0.0)
    loss = np.maximum(-delta, 0.0)
    avg_g = gain[:period].mean()
    avg_l = loss[:period].mean()
    out[period] = _rsi_value(avg_g, avg_l)
    for t in range(period, delta.size):
        avg_g = (avg_g * (period - 1) + gain[t]) / period
        avg_l = (avg_l * (period - 1) + loss[t]) / period
        out[t + 1] = _rsi_value(avg_g, avg_l)
    return out


def _rsi_value(avg_gain, avg_loss):
    if avg_loss == 0.0:
        return 50.0 if avg_gain == 0.0 else 100.0
    return 100.0 - 100.0 / (1.0 + avg_gain / avg_loss)


def _trailing(fn, x, window):
    out = np.full(x.shape, np.nan)
    if x.size >= window:
        out[window - 1:] = fn(sliding_window_view(x, window), axis=-1)
    return out


def indicator_series(prices, volume):
    """All raw features at every date, shape ``(T, 7)``; NaN where history is too short."""
    prices = np.asarray(prices, dtype=float)
    volume = np.asarray(volume, dtype=float)
    T = prices.size
    out = np.full((T, N_RAW), np.nan)
    logret = np.full(T, np.nan)
    logret[1:] = np.log(prices[1:] / prices[:-1])
    out[:, 0] = logret
    out[:, 1] = _trailing(np.mean, logret, SMA_PERIOD)
    sma_p = _trailing(np.mean, prices, SMA_PERIOD)
    out[:, 2] = (prices - sma_p) / sma_p
    out[:, 3] = wilder_rsi(prices)
    line = ema(prices, 12) - ema(prices, 26)
    out[:, 4] = (line - ema(line, 9)) / prices
    mid = _trailing(np.mean, prices, BB_PERIOD)
    sd = _trailing(np.std, prices, BB_PERIOD)
    out[:, 5] = 2.0 * BB_WIDTH_SIGMAS * sd / mid
    sma_v = _trailing(np.mean, volume, SMA_PERIOD)
    with np.errstate(invalid="ignore", divide="ignore"):
        vb = np.where(sma_v > 0, (volume - sma_v) / np.where(sma_v > 0, sma_v, 1.0), 0.0)
    vb[np.isnan(sma_v)] = np.nan
    out[:, 6] = vb
    out[:MIN_HISTORY] = np.nan
    return out


@dataclass(frozen=True)
class FeatureRow:
    ticker_index: int
    asof: np.datetime64
    values: np.ndarray
    ticker_onehot: np.ndarray

    @property
    def vector(self):
        return np.concatenate([self.values, self.ticker_onehot])


def _onehot(i, n):
    e = np.zeros(n)
    e[i] = 1.0
    return e


def compute_feature_row(panel, asset: int, asof) -> FeatureRow:
    """Features of one asset from data up to and including ``asof``."""
    t = panel.index_of(asof)
    if t < MIN_HISTORY:
        raise HistoryError(
            f"{panel.tickers[asset]} at {asof}: {MIN_HISTORY} trading days of history needed, {t} available",
            shortfall=MIN_HISTORY - t,
        )
    values = indicator_series(panel.adj_close[asset, : t + 1], panel.volume[asset, : t + 1])[-1]
    return FeatureRow(asset, panel.calendar[t], values, _onehot(asset, panel.n))


class FeatureTable:
    """Raw features of every asset at every date, computed once per panel.

    Each series is causal, so a lookup equals :func:`compute_feature_row` on
    the same date.
    """

    def __init__(self, panel):
        self.panel = panel
        self.values = np.stack(
            [indicator_series(panel.adj_close[i], panel.volume[i]) for i in range(panel.n)]
        )

    def available(self, t: int) -> bool:
        return t >= MIN_HISTORY

    def rows(self, t: int):
        """FeatureRows of all assets at date index ``t``."""
        if not self.available(t):
            raise HistoryError(f"date index {t} has fewer than {MIN_HISTORY} days of history")
        n = self.panel.n
        return [FeatureRow(i, self.panel.calendar[t], self.values[i, t], _onehot(i, n)) for i in range(n)]

    def raw_matrix(self, t: int):
        """``(n, 7)`` raw features at date index ``t``."""
        if not self.available(t):
            raise HistoryError(f"date index {t} has fewer than {MIN_HISTORY} days of history")
        return self.values[:, t, :]


def design_matrix(raw, n=None):
    """Append the asset one-hot block to an ``(n, 7)`` raw feature matrix."""
    raw = np.asarray(raw, dtype=float)
    n = raw.shape[0] if n is None else n
    return np.hstack([raw, np.eye(n)])


@dataclass(frozen=True)
class Standardizer:
    """Z-score parameters for the raw feature columns (one-hot block untouched)."""

    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray

    def transform(self, x):
        """Standardize the first ``len(mean)`` columns of ``x``; works on any leading shape."""
        x = np.array(x, dtype=float, copy=True)
        k = self.mean.size
        scale = np.where(self.constant, 1.0, self.std)
        z = (x[..., :k] - self.mean) / scale
        x[..., :k] = np.where(self.constant, 0.0, z)
        return x


def fit_standardizer(rows) -> Standardizer:
    """Fit per-feature mean and population std on training rows.

    ``rows`` is a sequence of :class:`FeatureRow` or an array whose last axis
    holds the raw features.
    """
    if isinstance(rows, np.ndarray):
        x = rows.reshape(-1, rows.shape[-1])
    else:
        rows = list(rows)
        if not rows:
            raise DataError("cannot fit a standardizer on no rows")
        x = np.stack([r.values for r in rows])
    if x.shape[0] == 0:
        raise DataError("cannot fit a standardizer on no rows")
    if x.shape[0] < 2:
        raise DataError(f"standardizer needs at least 2 rows, got {x.shape[0]}")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    constant = std <= 1e-14 * np.maximum(1.0, np.abs(mean))
    return Standardizer(mean=mean, std=std, constant=constant)


def write_feature_dump(path, table: FeatureTable, date_indices):
    """Debug dump of raw features, one row per (date, ticker)."""
    panel = table.panel
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "ticker"] + [f"feat_{k + 1}" for k in range(N_RAW)])
        for t in date_indices:
            for i, ticker in enumerate(panel.tickers):
                writer.writerow([str(panel.calendar[t]), ticker] + [repr(float(v)) for v in table.values[i, t]])
