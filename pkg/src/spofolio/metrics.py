"""Performance summaries, grid aggregation and prediction diagnostics for backtest ledgers."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, SharpeUndefinedError

PERIODS_PER_YEAR = 12
ANNUALIZATIONS = ("geometric", "arithmetic")
SUMMARY_COLUMNS = ["dataset", "lambda", "variant", "ret", "vol", "to", "mdd", "sr"]


@dataclass(frozen=True)
class PerformanceSummary:
    ann_return: float
    ann_vol: float
    mean_turnover: float
    mdd: float
    n_periods: int
    terminal_wealth: float

    @property
    def sharpe(self) -> float:
        if self.ann_vol == 0.0:
            raise SharpeUndefinedError("Sharpe ratio is undefined for a zero-volatility return path")
        return self.ann_return / self.ann_vol

    def sharpe_or_nan(self):
        return self.sharpe if self.ann_vol > 0 else float("nan")


def wealth_path(returns):
    """Compounded wealth starting from 1, length ``T + 1``."""
    return np.concatenate([[1.0], np.cumprod(1.0 + np.asarray(returns, dtype=float))])


def max_drawdown(returns) -> float:
    w = wealth_path(returns)
    return float(min(0.0, (w / np.maximum.accumulate(w) - 1.0).min()))


def summarize_returns(returns, turnovers, annualization="geometric") -> PerformanceSummary:
    rho = np.asarray(returns, dtype=float)
    if rho.size < 2:
        raise DataError(f"summary needs at least 2 periods, got {rho.size}")
    if annualization not in ANNUALIZATIONS:
        raise ValueError(f"annualization must be one of {ANNUALIZATIONS}")
    flat = np.ptp(rho) == 0.0
    if annualization == "arithmetic":
        ann_ret = PERIODS_PER_YEAR * (rho[0] if flat else rho.mean())
    elif flat:
        # exact for identical periods instead of a rounded T-th root
        ann_ret = (1.0 + rho[0]) ** PERIODS_PER_YEAR - 1.0
    else:
        ann_ret = np.prod(1.0 + rho) ** (PERIODS_PER_YEAR / rho.size) - 1.0
    ann_vol = 0.0 if flat else rho.std() * np.sqrt(PERIODS_PER_YEAR)
    return PerformanceSummary(
        ann_return=float(ann_ret),
        ann_vol=float(ann_vol),
        mean_turnover=float(np.mean(turnovers)),
        mdd=max_drawdown(rho),
        n_periods=int(rho.size),
        terminal_wealth=float(np.prod(1.0 + rho)),
    )


def summarize(ledger, annualization="geometric") -> PerformanceSummary:
    """Annualized net performance of a ledger (rows date-sorted first)."""
    ledger = ledger.sorted()
    return summarize_returns(ledger.net_returns, ledger.turnovers, annualization)


def summary_row(dataset, lam, variant, s: PerformanceSummary):
    return {
        "dataset": dataset, "lambda": lam, "variant": variant,
        "ret": s.ann_return, "vol": s.ann_vol, "to": s.mean_turnover, "mdd": s.mdd, "sr": s.sharpe_or_nan(),
    }


def aggregate_cells(cells, annualization="geometric"):
    """Mean and population std across seeds for every (dataset, lambda, variant) cell.

    Failed runs are left out of the statistics and counted in ``n_failed``.
    """
    groups = {}
    for cell in cells:
        key = (cell.dataset, cell.lam, cell.variant)
        groups.setdefault(key, {"ok": [], "failed": 0})
        if cell.ok:
            groups[key]["ok"].append(summarize(cell.ledger, annualization))
        else:
            groups[key]["failed"] += 1
    rows = []
    for (dataset, lam, variant), g in groups.items():
        row = {"dataset": dataset, "lambda": lam, "variant": variant}
        sums = g["ok"]
        values = {
            "ret": [s.ann_return for s in sums],
            "vol": [s.ann_vol for s in sums],
            "to": [s.mean_turnover for s in sums],
            "mdd": [s.mdd for s in sums],
            "sr": [s.sharpe_or_nan() for s in sums],
        }
        for k, v in values.items():
            row[k] = float(np.mean(v)) if v else float("nan")
        for k, v in values.items():
            row[f"{k}_std"] = float(np.std(v)) if v else float("nan")
        row["n_seeds"] = len(sums)
        row["n_failed"] = g["failed"]
        rows.append(row)
    return rows


def write_rows(path, rows, columns=None):
    columns = columns or list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


@dataclass(frozen=True)
class Diagnostics:
    dates: np.ndarray
    mean_r_hat: np.ndarray
    mean_r_tilde: np.ndarray
    mean_realized: np.ndarray
    means_path: Path | None = None
    pairs_path: Path | None = None


def prediction_means(ledger) -> Diagnostics:
    if len(ledger) == 0:
        raise DataError("ledger has no periods")
    ledger = ledger.sorted()
    return Diagnostics(
        dates=ledger.dates,
        mean_r_hat=np.array([r.r_hat.mean() for r in ledger.records]),
        mean_r_tilde=np.array([r.r_tilde.mean() for r in ledger.records]),
        mean_realized=np.array([r.realized.mean() for r in ledger.records]),
    )


def dump_prediction_diagnostics(ledger, directory, prefix="diagnostics") -> Diagnostics:
    """Write per-date cross-sectional means and pooled per-asset pairs as CSV.

    ``<prefix>_means.csv``: ``date,mean_r_hat,mean_r_tilde,mean_realized``;
    ``<prefix>_pairs.csv``: ``date,ticker,r_hat,r_tilde,realized``.
    """
    d = prediction_means(ledger)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    means_path = directory / f"{prefix}_means.csv"
    pairs_path = directory / f"{prefix}_pairs.csv"
    with open(means_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "mean_r_hat", "mean_r_tilde", "mean_realized"])
        for k, date in enumerate(d.dates):
            writer.writerow([str(date), repr(float(d.mean_r_hat[k])), repr(float(d.mean_r_tilde[k])), repr(float(d.mean_realized[k]))])
    with open(pairs_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "ticker", "r_hat", "r_tilde", "realized"])
        for r in ledger.sorted().records:
            for i, ticker in enumerate(ledger.tickers):
                writer.writerow([str(r.date), ticker, repr(float(r.r_hat[i])), repr(float(r.r_tilde[i])), repr(float(r.realized[i]))])
    return Diagnostics(d.dates, d.mean_r_hat, d.mean_r_tilde, d.mean_realized, means_path, pairs_path)
