"""Rolling-window monthly rebalancing for SPO, PTO-MVO and the historical-mean MVO baseline.

At each decision date (first trading day of a month) the engine

1. estimates the covariance from the trailing daily returns,
2. builds one training sample per preceding month (features at that month's
   first trading day, realized simple return to the next month's first day),
3. standardizes features on the training window, searches hyperparameters on
   the train/validation split and retrains on both windows,
4. predicts, applies the variant transform, solves the decision problem
   anchored at the held portfolio and applies the variant's post hook,
5. records turnover and costs and realizes the month's return.

Everything a decision uses is dated on or before the decision date.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import ParseError, ScheduleError, SolverError, SpofolioError, StageError
from .features import FeatureTable, design_matrix, fit_standardizer
from .interventions import VariantSpec, apply_variant
from .market_data import TRADING_DAYS_PER_MONTH, MarketPanel, estimate_covariance, trailing_returns
from .optimizer import OPTIMAL, DecisionProblem, clean_weights, solve
from .predictor import TrainSample, predict, search_hyperparams, train

BACKTEST_MODES = ("spo", "pto", "mvo_baseline")
LEDGER_HEADER = "# spofolio-ledger v1 "
LEDGER_COLUMNS = ["date", "ticker", "r_hat", "r_tilde", "w_target", "w_held", "turnover", "gross", "net", "cost", "realized"]


@dataclass(frozen=True)
class BacktestConfig:
    panel: MarketPanel
    variant: VariantSpec = field(default_factory=VariantSpec)
    mode: str = "spo"
    lam: float = 20.0
    kappa: float = 0.002
    train_months: int = 9
    val_months: int = 3
    warmup_year: int = 2019
    cov_window: int = 220
    cov_ridge: float = 1e-6
    hyper_budget: int = 8
    hyper_refresh: int = 1
    solver_tol: float = 1e-8
    dataset: str = "synthetic"
    seeds: tuple = (0,)

    def __post_init__(self):
        if self.mode not in BACKTEST_MODES:
            raise ValueError(f"mode must be one of {BACKTEST_MODES}, got {self.mode!r}")
        if self.train_months < 1 or self.val_months < 1:
            raise ValueError("train_months and val_months must be >= 1")
        if not (self.lam >= 0 and self.kappa >= 0):
            raise ValueError("lambda and kappa must be >= 0")
        if self.hyper_budget < 1 or self.hyper_refresh < 1:
            raise ValueError("hyper_budget and hyper_refresh must be >= 1")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")

    def describe(self):
        """Scalar settings that determine a run, panel excluded."""
        return {
            "dataset": self.dataset,
            "variant": self.variant.name,
            "gamma": self.variant.gamma,
            "rescale_c": self.variant.c,
            "delta": self.variant.delta,
            "mode": self.mode,
            "lambda": self.lam,
            "kappa": self.kappa,
            "train_months": self.train_months,
            "val_months": self.val_months,
            "warmup_year": self.warmup_year,
            "cov_window": self.cov_window,
            "cov_ridge": self.cov_ridge,
            "hyper_budget": self.hyper_budget,
            "hyper_refresh": self.hyper_refresh,
            "solver_tol": self.solver_tol,
        }


def panel_fingerprint(panel: MarketPanel) -> str:
    h = hashlib.sha256()
    h.update(",".join(panel.tickers).encode())
    h.update(panel.calendar.astype("int64").tobytes())
    for arr in (panel.adj_close, panel.volume):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def config_hash(config: BacktestConfig) -> str:
    payload = json.dumps(config.describe(), sort_keys=True) + panel_fingerprint(config.panel)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class PeriodRecord:
    date: np.datetime64
    r_hat: np.ndarray
    r_tilde: np.ndarray
    w_target: np.ndarray
    w_held: np.ndarray
    realized: np.ndarray
    turnover: float
    gross: float
    net: float
    cost: float


class BacktestLedger:
    """Per-rebalance records of one run plus its metadata (seed, config hash, initial weights)."""

    def __init__(self, tickers, records, metadata=None):
        self.tickers = tuple(tickers)
        self.records = list(records)
        self.metadata = dict(metadata or {})

    def __len__(self):
        return len(self.records)

    @property
    def dates(self):
        return np.array([r.date for r in self.records], dtype="datetime64[D]")

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def net_returns(self):
        return self.column("net")

    @property
    def turnovers(self):
        return self.column("turnover")

    @property
    def w0(self):
        return np.array(self.metadata["w0"], dtype=float)

    def terminal_wealth(self):
        return float(np.prod(1.0 + self.net_returns))

    def sorted(self):
        order = np.argsort(self.dates, kind="stable")
        return BacktestLedger(self.tickers, [self.records[k] for k in order], self.metadata)

    def __eq__(self, other):
        if not isinstance(other, BacktestLedger):
            return NotImplemented
        if self.tickers != other.tickers or self.metadata != other.metadata or len(self) != len(other):
            return False
        for a, b in zip(self.records, other.records):
            if a.date != b.date:
                return False
            for name in ("r_hat", "r_tilde", "w_target", "w_held", "realized", "turnover", "gross", "net", "cost"):
                if not np.array_equal(getattr(a, name), getattr(b, name)):
                    return False
        return True

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(LEDGER_HEADER + json.dumps(self.metadata, sort_keys=True) + "\n")
            writer = csv.writer(fh)
            writer.writerow(LEDGER_COLUMNS)
            for r in self.records:
                for i, ticker in enumerate(self.tickers):
                    writer.writerow([
                        str(r.date), ticker,
                        repr(float(r.r_hat[i])), repr(float(r.r_tilde[i])),
                        repr(float(r.w_target[i])), repr(float(r.w_held[i])),
                        repr(r.turnover), repr(r.gross), repr(r.net), repr(r.cost),
                        repr(float(r.realized[i])),
                    ])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            first = fh.readline()
            if not first.startswith(LEDGER_HEADER):
                raise ParseError(path, 1, "missing ledger header")
            metadata = json.loads(first[len(LEDGER_HEADER):])
            reader = csv.reader(fh)
            if next(reader, None) != LEDGER_COLUMNS:
                raise ParseError(path, 2, f"columns must be {','.join(LEDGER_COLUMNS)}")
            groups, tickers = {}, []
            for line, row in enumerate(reader, start=3):
                if len(row) != len(LEDGER_COLUMNS):
                    raise ParseError(path, line, f"expected {len(LEDGER_COLUMNS)} fields")
                groups.setdefault(row[0], []).append(row)
                if row[1] not in tickers:
                    tickers.append(row[1])
        records = []
        for date, rows in groups.items():
            vec = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
            records.append(PeriodRecord(
                date=np.datetime64(date, "D"),
                r_hat=vec(2), r_tilde=vec(3), w_target=vec(4), w_held=vec(5), realized=vec(10),
                turnover=float(rows[0][6]), gross=float(rows[0][7]), net=float(rows[0][8]), cost=float(rows[0][9]),
            ))
        return cls(tickers, records, metadata)


class RebalanceWindow(NamedTuple):
    train_window: tuple
    val_window: tuple
    decision_date: np.datetime64


def _month_complete(panel: MarketPanel, month_start_idx, month_starts):
    later = month_starts[month_starts > month_start_idx]
    if later.size:
        return True
    month = panel.calendar[month_start_idx].astype("datetime64[M]")
    last_weekday = np.busday_offset((month + 1).astype("datetime64[D]"), -1, roll="forward")
    return panel.calendar[-1] >= last_weekday


def rebalance_schedule(panel: MarketPanel, warmup_year: int, train_months: int = 9, val_months: int = 3):
    """Monthly decision dates with the train and validation months that precede each.

    Windows are lists of month-start dates; every sample month ends on or
    before the decision date.  A decision needs ``train_months + val_months``
    earlier months in the panel, must fall after the warm-up year and its own
    month must be complete so its return can be realized.
    """
    starts = panel.month_start_indices()
    lookback = train_months + val_months
    first_allowed = np.datetime64(f"{warmup_year + 1}-01-01", "D")
    out = []
    for j, k in enumerate(starts):
        date = panel.calendar[k]
        if j < lookback or date < first_allowed or not _month_complete(panel, k, starts):
            continue
        window = tuple(panel.calendar[starts[j - lookback:j]])
        out.append(RebalanceWindow(window[:train_months], window[train_months:], date))
    if not out:
        first_month = panel.calendar[0].astype("datetime64[M]")
        earliest = max(first_month + lookback, first_allowed.astype("datetime64[M]"))
        earliest_day = np.busday_offset(earliest.astype("datetime64[D]"), 0, roll="forward")
        raise ScheduleError(
            f"panel {panel.calendar[0]}..{panel.calendar[-1]} has no feasible decision date; "
            f"the earliest would be {earliest_day}, which needs a complete month of data from then"
        )
    return out


def _next_start(starts, k, T):
    later = starts[starts > k]
    return int(later[0]) if later.size else T - 1


def _stage_seed(seed, j):
    return int(np.random.SeedSequence([int(seed), int(j)]).generate_state(1)[0])


class _SampleBuilder:
    def __init__(self, panel: MarketPanel):
        self.panel = panel
        self.table = FeatureTable(panel)
        self.starts = panel.month_start_indices()

    def raw(self, month_dates):
        """Raw features and realized returns of the usable months in a window."""
        raws, realized, dates = [], [], []
        for d in month_dates:
            k = self.panel.index_of(d)
            if not self.table.available(k):
                continue
            x = self.table.raw_matrix(k)
            if not np.all(np.isfinite(x)):
                continue
            end = _next_start(self.starts, k, self.panel.T)
            raws.append(x)
            realized.append(self.panel.adj_close[:, end] / self.panel.adj_close[:, k] - 1.0)
            dates.append(d)
        return raws, realized, dates

    def samples(self, raws, realized, dates, standardizer, sigma, anchor):
        n = self.panel.n
        return [
            TrainSample(design_matrix(standardizer.transform(x), n), r, sigma, anchor, d)
            for x, r, d in zip(raws, realized, dates)
        ]


def _fit_predictor(cfg, builder, win, sigma, w_held, hp, search_seed):
    tr = builder.raw(win.train_window)
    va = builder.raw(win.val_window)
    search = None
    if hp is None:
        std_tr = fit_standardizer(np.array(tr[0]))
        train_s = builder.samples(*tr, std_tr, sigma, w_held)
        val_s = builder.samples(*va, std_tr, sigma, w_held)
        search = search_hyperparams(
            train_s, val_s, cfg.mode, cfg.hyper_budget, search_seed, cfg.lam, cfg.kappa, tol=cfg.solver_tol
        )
        hp = search.hyperparams
    raws, real, dates = (tr[k] + va[k] for k in range(3))
    std = fit_standardizer(np.array(raws))
    params = train(builder.samples(raws, real, dates, std, sigma, w_held), cfg.mode, hp, cfg.lam, cfg.kappa, search_seed, cfg.solver_tol)
    return params, std, hp


def run_backtest(config: BacktestConfig, seed: int = 0) -> BacktestLedger:
    """Run one configuration; bit-identical for equal ``(config, seed)``."""
    panel = config.panel
    schedule = rebalance_schedule(panel, config.warmup_year, config.train_months, config.val_months)
    builder = _SampleBuilder(panel) if config.mode != "mvo_baseline" else None
    starts = panel.month_start_indices()
    n = panel.n
    w0 = np.full(n, 1.0 / n)
    w_held = w0.copy()
    hp = None
    records = []
    for j, win in enumerate(schedule):
        date = win.decision_date
        try:
            t = panel.index_of(date)
            sigma = np.array(estimate_covariance(panel, date, config.cov_window, config.cov_ridge).sigma)
            if config.mode == "mvo_baseline":
                r_hat = trailing_returns(panel, date, config.cov_window).mean(axis=1) * TRADING_DAYS_PER_MONTH
            else:
                if j % config.hyper_refresh == 0:
                    hp = None
                params, std, hp = _fit_predictor(config, builder, win, sigma, w_held, hp, _stage_seed(seed, j))
                x = design_matrix(std.transform(builder.table.raw_matrix(t)), n)
                r_hat = predict(params, x)
            r_tilde, hook = apply_variant(config.variant, r_hat)
            res = solve(DecisionProblem(r_tilde, sigma, config.lam, config.kappa, w_held), tol=config.solver_tol)
            if res.status != OPTIMAL:
                raise SolverError(f"decision solve ended with status {res.status} (residual {res.kkt_residual:.3e})")
            w_target = clean_weights(res.w_star)
            w_new = clean_weights(hook(w_held, w_target))
        except SpofolioError as exc:
            raise StageError(str(date), exc) from exc
        trade = np.abs(w_new - w_held).sum()
        end = _next_start(starts, t, panel.T)
        realized = panel.adj_close[:, end] / panel.adj_close[:, t] - 1.0
        gross = float(w_new @ realized)
        cost = float(config.kappa * trade)
        records.append(PeriodRecord(
            date=date, r_hat=np.asarray(r_hat, dtype=float), r_tilde=np.asarray(r_tilde, dtype=float),
            w_target=w_target, w_held=w_new, realized=realized,
            turnover=float(0.5 * trade), gross=gross, net=gross - cost, cost=cost,
        ))
        w_held = w_new
    metadata = {
        "seed": int(seed),
        "config_hash": config_hash(config),
        "w0": [float(v) for v in w0],
        "mode": config.mode,
        "variant": config.variant.name,
        "lambda": float(config.lam),
        "kappa": float(config.kappa),
        "dataset": config.dataset,
    }
    return BacktestLedger(panel.tickers, records, metadata)


@dataclass
class GridCell:
    dataset: str
    lam: float
    variant: str
    seed: int
    ledger: BacktestLedger | None = None
    error: str | None = None
    exit_code: int = 0

    @property
    def ok(self):
        return self.ledger is not None


def grid_configs(base: BacktestConfig, panels: dict, variants, lambdas, seeds):
    """Cells in the fixed ``(dataset, lambda, variant, seed)`` order."""
    cells = []
    for name, panel in panels.items():
        for lam in lambdas:
            for v in variants:
                spec = v if isinstance(v, VariantSpec) else replace(base.variant, name=v)
                for seed in seeds:
                    cfg = replace(base, panel=panel, dataset=name, lam=float(lam), variant=spec, seeds=tuple(seeds))
                    cells.append((cfg, int(seed)))
    return cells


def _run_cell(args):
    cfg, seed = args
    cell = GridCell(cfg.dataset, cfg.lam, cfg.variant.name, seed)
    try:
        cell.ledger = run_backtest(cfg, seed)
    except SpofolioError as exc:
        cell.error = f"{type(exc).__name__}: {exc}"
        cell.exit_code = exc.exit_code
    return cell


def run_grid(base: BacktestConfig, panels: dict, variants, lambdas, seeds, workers: int = 1):
    """Run every cell of the grid; a failing cell records its error and the grid continues."""
    cells = grid_configs(base, panels, variants, lambdas, seeds)
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_cell, cells))
    return [_run_cell(c) for c in cells]

