"""Daily price panels: CSV ingestion, calendar alignment and covariance estimation."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AlignmentError, DataError, HistoryError, ParseError

CSV_HEADER = ["date", "open", "high", "low", "close", "adj_close", "volume"]
TRADING_DAYS_PER_MONTH = 21


@dataclass(frozen=True)
class Bar:
    date: dt.date
    open: float
    high: float
    low: float
    close: float
    adj_close: float
    volume: float

    def __post_init__(self):
        if not self.adj_close > 0:
            raise DataError(f"{self.date}: adj_close must be positive, got {self.adj_close}")
        if not self.volume >= 0:
            raise DataError(f"{self.date}: volume must be non-negative, got {self.volume}")
        ohlc = (self.open, self.high, self.low, self.close)
        if not any(math.isnan(v) for v in ohlc):
            if self.low > min(self.open, self.close) or self.high < max(self.open, self.close):
                raise DataError(f"{self.date}: inconsistent OHLC {ohlc}")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class MarketPanel:
    """Calendar-aligned OHLCV grid for ``n`` assets over ``T`` shared trading dates.

    Price arrays have shape ``(n, T)``; ``returns`` has shape ``(n, T - 1)``
    with ``returns[i, t] = adj_close[i, t + 1] / adj_close[i, t] - 1``.
    Arrays are read-only.
    """

    def __init__(self, tickers, calendar, open, high, low, close, adj_close, volume):
        self.tickers = tuple(tickers)
        cal = np.asarray(calendar, dtype="datetime64[D]")
        if cal.ndim != 1 or cal.size < 2:
            raise AlignmentError("a panel needs at least 2 dates")
        if np.any(np.diff(cal) <= np.timedelta64(0, "D")):
            raise DataError("calendar dates must be strictly increasing")
        cal = cal.copy()
        cal.setflags(write=False)
        self.calendar = cal
        self.open = _frozen(open)
        self.high = _frozen(high)
        self.low = _frozen(low)
        self.close = _frozen(close)
        self.adj_close = _frozen(adj_close)
        self.volume = _frozen(volume)
        shape = (len(self.tickers), cal.size)
        for name in ("open", "high", "low", "close", "adj_close", "volume"):
            if getattr(self, name).shape != shape:
                raise DataError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if np.any(~(self.adj_close > 0)):
            raise DataError("adj_close must be positive")
        self.returns = _frozen(self.adj_close[:, 1:] / self.adj_close[:, :-1] - 1.0)

    @property
    def n(self):
        return len(self.tickers)

    @property
    def T(self):
        return self.calendar.size

    def index_of(self, date):
        d = np.datetime64(date, "D")
        i = int(np.searchsorted(self.calendar, d))
        if i >= self.T or self.calendar[i] != d:
            raise DataError(f"{date} is not a trading date of the panel")
        return i

    def bar(self, asset, t):
        return Bar(
            date=self.calendar[t].astype(dt.date),
            open=float(self.open[asset, t]),
            high=float(self.high[asset, t]),
            low=float(self.low[asset, t]),
            close=float(self.close[asset, t]),
            adj_close=float(self.adj_close[asset, t]),
            volume=float(self.volume[asset, t]),
        )

    def truncate(self, last_date):
        """Panel restricted to dates up to and including ``last_date``."""
        k = int(np.searchsorted(self.calendar, np.datetime64(last_date, "D"), side="right"))
        return MarketPanel(
            self.tickers,
            self.calendar[:k],
            self.open[:, :k],
            self.high[:, :k],
            self.low[:, :k],
            self.close[:, :k],
            self.adj_close[:, :k],
            self.volume[:, :k],
        )

    def month_start_indices(self):
        """Indices of the first trading date of every calendar month in the panel."""
        months = self.calendar.astype("datetime64[M]")
        return np.flatnonzero(np.r_[True, months[1:] != months[:-1]])


def _parse_float(text, path, line, column, required):
    text = text.strip()
    if text == "":
        if required:
            raise ParseError(path, line, f"missing {column}")
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise ParseError(path, line, f"bad {column} value {text!r}") from None


def read_bars(path):
    """Parse one per-ticker CSV into date-sorted :class:`Bar` records."""
    path = Path(path)
    bars = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if [h.strip() for h in header] != CSV_HEADER:
            raise ParseError(path, 1, f"header must be {','.join(CSV_HEADER)}")
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise ParseError(path, line, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
            try:
                date = dt.date.fromisoformat(row[0].strip())
            except ValueError:
                raise ParseError(path, line, f"bad date {row[0]!r}") from None
            if date in bars:
                raise ParseError(path, line, f"duplicate date {date}")
            o, h, lo, c = (
                _parse_float(row[k], path, line, CSV_HEADER[k], required=False) for k in range(1, 5)
            )
            adj = _parse_float(row[5], path, line, "adj_close", required=True)
            vol = _parse_float(row[6], path, line, "volume", required=True)
            try:
                bars[date] = Bar(date, o, h, lo, c, adj, vol)
            except DataError as exc:
                raise DataError(f"{path}:{line}: {exc}") from None
    return [bars[d] for d in sorted(bars)]


def load_panel(paths, tickers) -> MarketPanel:
    """Load one CSV per ticker and align them on the intersection of their dates."""
    paths = list(paths)
    tickers = list(tickers)
    if len(paths) != len(tickers):
        raise DataError(f"{len(paths)} files given for {len(tickers)} tickers")
    series = [read_bars(p) for p in paths]
    common = None
    for bars in series:
        dates = {b.date for b in bars}
        common = dates if common is None else common & dates
    calendar = sorted(common or ())
    if len(calendar) < 2:
        raise AlignmentError(f"only {len(calendar)} shared dates across {', '.join(tickers)}")
    keep = set(calendar)
    fields = {k: [] for k in CSV_HEADER[1:]}
    for bars in series:
        rows = [b for b in bars if b.date in keep]
        for k in fields:
            fields[k].append([getattr(b, k) for b in rows])
    return MarketPanel(tickers, np.array(calendar, dtype="datetime64[D]"), **fields)


def write_panel_csv(panel: MarketPanel, directory) -> list:
    """Write one CSV per ticker in the ingestion schema; returns the paths written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, ticker in enumerate(panel.tickers):
        path = directory / f"{ticker}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for t in range(panel.T):
                writer.writerow([
                    str(panel.calendar[t]),
                    repr(float(panel.open[i, t])),
                    repr(float(panel.high[i, t])),
                    repr(float(panel.low[i, t])),
                    repr(float(panel.close[i, t])),
                    repr(float(panel.adj_close[i, t])),
                    repr(float(panel.volume[i, t])),
                ])
        paths.append(path)
    return paths


@dataclass(frozen=True)
class CovarianceEstimate:
    sigma: np.ndarray
    window_days: int
    ridge: float


def n_returns_before(panel: MarketPanel, asof) -> int:
    """Number of daily returns whose end date is strictly before ``asof``."""
    idx = int(np.searchsorted(panel.calendar, np.datetime64(asof, "D")))
    return max(idx - 1, 0)


def trailing_returns(panel: MarketPanel, asof, window_days) -> np.ndarray:
    """The last ``window_days`` daily returns ending strictly before ``asof``, shape ``(n, window)``."""
    available = n_returns_before(panel, asof)
    if available < window_days:
        raise HistoryError(
            f"{window_days} daily returns needed before {asof}, only {available} available "
            f"(short by {window_days - available})",
            shortfall=window_days - available,
        )
    return panel.returns[:, available - window_days:available]


def estimate_covariance(panel: MarketPanel, asof, window_days: int = 220, ridge: float = 1e-6) -> CovarianceEstimate:
    """Trailing sample covariance of daily returns, scaled to a monthly horizon, plus a ridge."""
    window = trailing_returns(panel, asof, window_days)
    sigma = np.cov(window, ddof=1) * TRADING_DAYS_PER_MONTH
    sigma = np.atleast_2d(sigma)
    sigma = 0.5 * (sigma + sigma.T) + ridge * np.eye(panel.n)
    sigma.setflags(write=False)
    return CovarianceEstimate(sigma=sigma, window_days=window_days, ridge=ridge)
