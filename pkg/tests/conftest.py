import numpy as np
import pytest

from spofolio.market_data import MarketPanel

ACCEPTANCE_LINES = []


def make_panel(adj_close, start="2019-01-01", volume=None, tickers=None):
    """Panel on a weekday calendar whose OHLC all equal ``adj_close``."""
    adj = np.atleast_2d(np.asarray(adj_close, dtype=float))
    n, T = adj.shape
    first = np.busday_offset(np.datetime64(start, "D"), 0, roll="forward")
    calendar = np.busday_offset(first, np.arange(T), roll="forward")
    vol = np.full((n, T), 1e6) if volume is None else np.atleast_2d(volume)
    tickers = tickers or [f"A{i}" for i in range(n)]
    return MarketPanel(tickers, calendar, adj, adj, adj, adj, adj, vol)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
