"""Flat ``key = value`` run configuration with the experimental defaults.

Lists are written ``a,b,c`` (optionally in brackets).  Blank lines and lines
starting with ``#`` are ignored.  The resolved configuration prints in the same
format, so feeding the echo back reproduces the run.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .interventions import VARIANTS

SYNTHETIC = "synthetic"


def _float(text):
    return float(text)


def _int(text):
    value = float(text)
    if value != int(value):
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def _str(text):
    return text


# key -> (parser, is_list, default, check, description of the valid range)
SCHEMA = {
    "dataset": (_str, True, (SYNTHETIC,), None, ""),
    "variant": (_str, True, VARIANTS, lambda v: v in VARIANTS, f"one of {', '.join(VARIANTS)}"),
    "mode": (_str, False, "spo", lambda v: v in ("spo", "pto", "mvo_baseline"), "spo, pto or mvo_baseline"),
    "lambda": (_float, True, (0.1, 1.0, 10.0, 20.0, 50.0), lambda v: v > 0, "> 0"),
    "kappa": (_float, False, 0.002, lambda v: v >= 0, ">= 0"),
    "gamma": (_float, False, 0.1, lambda v: v > 0, "> 0"),
    "rescale_c": (_float, False, 0.1, lambda v: v > 0, "> 0"),
    "delta": (_float, False, 0.1, lambda v: 0 < v <= 1, "in (0, 1]"),
    "train_months": (_int, False, 9, lambda v: v >= 1, ">= 1"),
    "val_months": (_int, False, 3, lambda v: v >= 1, ">= 1"),
    "warmup_year": (_int, False, 2019, lambda v: 1900 <= v <= 2200, "a calendar year"),
    "cov_window": (_int, False, 220, lambda v: v >= 2, ">= 2"),
    "cov_ridge": (_float, False, 1e-6, lambda v: v >= 0, ">= 0"),
    "seeds": (_int, True, (0,), lambda v: v >= 0, "non-negative integers"),
    "hyper_budget": (_int, False, 8, lambda v: v >= 1, ">= 1"),
    "hyper_refresh": (_int, False, 1, lambda v: v >= 1, ">= 1"),
    "solver_tol": (_float, False, 1e-8, lambda v: 0 < v < 1e-2, "in (0, 1e-2)"),
    "annualization": (_str, False, "geometric", lambda v: v in ("geometric", "arithmetic"), "geometric or arithmetic"),
    "workers": (_int, False, 1, lambda v: v >= 1, ">= 1"),
    "synthetic_n": (_int, False, 8, lambda v: v >= 2, ">= 2"),
    "synthetic_months": (_int, False, 36, lambda v: v >= 15, ">= 15"),
    "synthetic_signal": (_float, False, 0.05, lambda v: v >= 0, ">= 0"),
    "synthetic_seed": (_int, False, 0, lambda v: v >= 0, ">= 0"),
    "synthetic_start": (_str, False, "2019-01-01", None, ""),
}

# the experimental-configuration table, as resolved from an empty file
TABLE3_DEFAULTS = {
    "gamma": 0.1,
    "rescale_c": 0.1,
    "delta": 0.1,
    "lambda": (0.1, 1.0, 10.0, 20.0, 50.0),
    "train_months": 9,
    "val_months": 3,
    "cov_window": 220,
    "cov_ridge": 1e-6,
}


def _parse_value(key, text):
    if key not in SCHEMA:
        raise ConfigError(key, "unknown key")
    parser, is_list, _, check, valid = SCHEMA[key]
    text = text.strip()
    if is_list:
        if text.startswith("[") and text.endswith("]"):
            text = text[1:-1]
        items = [t.strip() for t in text.split(",") if t.strip()]
        if not items:
            raise ConfigError(key, "needs at least one value")
    else:
        items = [text]
    try:
        values = [parser(t) for t in items]
    except ValueError as exc:
        raise ConfigError(key, f"cannot parse {text!r}: {exc}") from None
    for v in values:
        if check is not None and not check(v):
            raise ConfigError(key, f"value {v!r} out of range (must be {valid})")
    return tuple(values) if is_list else values[0]


def _format_value(key, value):
    is_list = SCHEMA[key][1]
    items = value if is_list else (value,)
    return ",".join(repr(v) if isinstance(v, float) else str(v) for v in items)


@dataclass(frozen=True)
class RunConfig:
    values: dict
    source: str | None = None

    def __getitem__(self, key):
        return self.values[key]

    def echo(self) -> str:
        """The fully resolved configuration in the input format."""
        return "".join(f"{k} = {_format_value(k, self.values[k])}\n" for k in SCHEMA)


def _check_datasets(values):
    for name in values["dataset"]:
        if name == SYNTHETIC:
            continue
        path = Path(name)
        if not path.is_dir():
            raise ConfigError("dataset", f"{name!r} is neither 'synthetic' nor an existing directory")
        if not any(path.glob("*.csv")):
            raise ConfigError("dataset", f"directory {name!r} contains no CSV files")


def parse_text(text, overrides=None, source=None) -> RunConfig:
    values = {k: spec[2] for k, spec in SCHEMA.items()}
    seen = set()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}", f"expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in seen:
            raise ConfigError(key, "set more than once")
        seen.add(key)
        values[key] = _parse_value(key, value)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = _parse_value(key, str(value))
    _check_datasets(values)
    return RunConfig(values=values, source=source)


def parse_config(path=None, overrides=None) -> RunConfig:
    """Read a config file (``None`` means all defaults) and apply flag overrides."""
    if path is None:
        return parse_text("", overrides)
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"file {str(path)!r} not found")
    return parse_text(path.read_text(), overrides, source=str(path))
