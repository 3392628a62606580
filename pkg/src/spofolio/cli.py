"""Command-line front end.

Exit status: 0 success, 1 configuration error, 2 data error, 3 numerical
error, 4 selftest criterion failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backtest import BacktestConfig, BacktestLedger, run_backtest, run_grid
from .config import SYNTHETIC, RunConfig, parse_config
from .errors import ConfigError, SpofolioError
from .interventions import VariantSpec
from .market_data import load_panel
from .metrics import SUMMARY_COLUMNS, aggregate_cells, dump_prediction_diagnostics, summarize, summary_row, write_rows
from .synthetic import business_days_in_months, generate_synthetic_panel

SELFTEST_FAILED = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError("arguments", message)


def load_dataset(name, rc: RunConfig):
    if name == SYNTHETIC:
        T = business_days_in_months(rc["synthetic_start"], rc["synthetic_months"])
        panel, _ = generate_synthetic_panel(
            rc["synthetic_seed"], rc["synthetic_n"], T, rc["synthetic_signal"], start=rc["synthetic_start"]
        )
        return panel
    paths = sorted(Path(name).glob("*.csv"))
    return load_panel(paths, [p.stem for p in paths])


def base_config(rc: RunConfig, panel, dataset, variant, lam) -> BacktestConfig:
    spec = VariantSpec(variant, gamma=rc["gamma"], c=rc["rescale_c"], delta=rc["delta"])
    return BacktestConfig(
        panel=panel,
        variant=spec,
        mode=rc["mode"],
        lam=lam,
        kappa=rc["kappa"],
        train_months=rc["train_months"],
        val_months=rc["val_months"],
        warmup_year=rc["warmup_year"],
        cov_window=rc["cov_window"],
        cov_ridge=rc["cov_ridge"],
        hyper_budget=rc["hyper_budget"],
        hyper_refresh=rc["hyper_refresh"],
        solver_tol=rc["solver_tol"],
        dataset=dataset,
        seeds=rc["seeds"],
    )


def _single(rc, key):
    values = rc[key]
    if len(values) != 1:
        raise ConfigError(key, f"a single run needs exactly one value, got {len(values)}; use `grid` for sweeps")
    return values[0]


def _write_echo(out: Path, rc: RunConfig):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(rc.echo())


def _single_run(rc):
    dataset, variant, lam, seed = (_single(rc, k) for k in ("dataset", "variant", "lambda", "seeds"))
    panel = load_dataset(dataset, rc)
    cfg = base_config(rc, panel, dataset, variant, lam)
    return cfg, run_backtest(cfg, seed)


def cmd_backtest(rc, args):
    out = Path(args.out)
    _write_echo(out, rc)
    cfg, ledger = _single_run(rc)
    ledger.to_csv(out / "ledger.csv")
    s = summarize(ledger, rc["annualization"])
    write_rows(out / "summary.csv", [summary_row(cfg.dataset, cfg.lam, cfg.variant.name, s)], SUMMARY_COLUMNS)
    print(
        f"{cfg.dataset} {cfg.mode} {cfg.variant.name} lambda={cfg.lam}: ret={s.ann_return:.4f} "
        f"vol={s.ann_vol:.4f} to={s.mean_turnover:.4f} mdd={s.mdd:.4f} sr={s.sharpe_or_nan():.3f}"
    )
    return 0


def cmd_grid(rc, args):
    out = Path(args.out)
    _write_echo(out, rc)
    panels = {name: load_dataset(name, rc) for name in rc["dataset"]}
    first = next(iter(panels))
    base = base_config(rc, panels[first], first, rc["variant"][0], rc["lambda"][0])
    cells = run_grid(base, panels, rc["variant"], rc["lambda"], rc["seeds"], workers=rc["workers"])

    ledger_dir = out / "ledgers"
    ledger_dir.mkdir(exist_ok=True)
    cell_rows = []
    for c in cells:
        row = {"dataset": c.dataset, "lambda": c.lam, "variant": c.variant, "seed": c.seed}
        if c.ok:
            c.ledger.to_csv(ledger_dir / f"{Path(c.dataset).name}_{c.lam!r}_{c.variant}_{c.seed}.csv")
            row.update(summary_row(c.dataset, c.lam, c.variant, summarize(c.ledger, rc["annualization"])))
            row["error"] = ""
        else:
            row["error"] = c.error
        cell_rows.append(row)
    write_rows(out / "cells.csv", cell_rows, ["dataset", "lambda", "variant", "seed"] + SUMMARY_COLUMNS[3:] + ["error"])
    rows = aggregate_cells(cells, rc["annualization"])
    write_rows(out / "summary.csv", rows)
    failed = [c for c in cells if not c.ok]
    for c in failed:
        print(f"cell {c.dataset} lambda={c.lam} {c.variant} seed={c.seed} failed: {c.error}", file=sys.stderr)
    print(f"{len(cells) - len(failed)}/{len(cells)} cells completed; summary in {out / 'summary.csv'}")
    if failed and len(failed) == len(cells):
        return failed[0].exit_code
    return 0


def cmd_diagnose(rc, args):
    out = Path(args.out)
    _write_echo(out, rc)
    if args.ledger:
        ledger = BacktestLedger.from_csv(args.ledger)
    else:
        _, ledger = _single_run(rc)
        ledger.to_csv(out / "ledger.csv")
    d = dump_prediction_diagnostics(ledger, out)
    print(f"wrote {d.means_path} and {d.pairs_path}")
    return 0


def cmd_selftest(rc, args):
    from .acceptance import run_all

    results = run_all(report=print)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return SELFTEST_FAILED if failed else 0


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--dataset", help="'synthetic' or a directory of per-ticker CSVs (comma list for grid)")
    common.add_argument("--variant", help="intervention variant(s)")
    common.add_argument("--lambda", dest="lam", help="risk aversion value(s)")
    common.add_argument("--kappa", help="L1 transaction cost")
    common.add_argument("--mode", help="spo, pto or mvo_baseline")
    seeds = common.add_mutually_exclusive_group()
    seeds.add_argument("--seed", help="run seed")
    seeds.add_argument("--seeds", help="comma-separated seeds (grid)")
    common.add_argument("--hyper-budget", dest="hyper_budget", help="hyperparameter candidates per search")
    common.add_argument("--out", default="spofolio_out", help="output directory")

    parser = _Parser(prog="spofolio", description="Decision-focused portfolio backtests")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("backtest", parents=[common], help="run a single backtest")
    sub.add_parser("grid", parents=[common], help="run the variant x lambda x dataset x seed grid")
    diag = sub.add_parser("diagnose", parents=[common], help="dump prediction diagnostics")
    diag.add_argument("--ledger", help="existing ledger CSV instead of a fresh run")
    sub.add_parser("selftest", parents=[common], help="run the acceptance suite")
    return parser


def resolve(args) -> RunConfig:
    overrides = {
        "dataset": args.dataset,
        "variant": args.variant,
        "lambda": args.lam,
        "kappa": args.kappa,
        "mode": args.mode,
        "seeds": args.seed if args.seed is not None else args.seeds,
        "hyper_budget": args.hyper_budget,
    }
    return parse_config(args.config, overrides)


COMMANDS = {"backtest": cmd_backtest, "grid": cmd_grid, "diagnose": cmd_diagnose, "selftest": cmd_selftest}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        rc = resolve(args)
        return COMMANDS[args.command](rc, args)
    except SpofolioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
