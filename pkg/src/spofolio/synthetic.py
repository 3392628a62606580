"""Synthetic one-factor market panels with a planted, learnable return signal.

Daily log returns are ``drift + beta_i * f_d + eps_{i,d}`` with a common
Gaussian factor ``f`` and idiosyncratic noise.  On the first trading day ``k``
of every month (once enough history exists), the generator computes each
asset's raw features ``x_{k,i}`` from the prices generated so far and adds the
planted component

    s_{k,i} = theta' x_{k,i} + bias_i

to the log return of the following month, spread evenly over its days.
The monthly log return from ``k`` to the next month start is therefore
``s_{k,i}`` plus drift plus noise with a known variance, which gives an
analytic signal-to-noise ratio for oracle tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .features import MIN_HISTORY, N_RAW, indicator_series
from .market_data import MarketPanel

DEFAULT_START = "2019-01-01"
FACTOR_VOL = 0.01
BASE_DRIFT = 0.0002

# typical cross-sectional location and spread of the raw features on these panels;
# coefficients are expressed per unit of spread so signal_strength is the signal's monthly std
FEATURE_CENTER = np.array([0.0, 0.0, 0.0, 52.0, 0.0, 0.123, 0.0])
FEATURE_SCALE = np.array([0.018, 0.0057, 0.031, 11.9, 0.0062, 0.051, 0.34])


@dataclass(frozen=True)
class PlantedModel:
    """Ground truth of a synthetic panel.

    ``theta`` and ``bias`` act on raw (unstandardized) features; ``signal[k]``
    is the noiseless component planted for the month starting at
    ``dates[k]`` and ``noise_var[k]`` the variance of the rest of that month's
    log return.
    """

    theta: np.ndarray
    bias: np.ndarray
    dates: np.ndarray
    date_index: np.ndarray
    features: np.ndarray
    signal: np.ndarray
    noise_var: np.ndarray

    def predict(self, raw):
        return np.asarray(raw) @ self.theta + self.bias

    def snr(self):
        return float(self.signal.var() / self.noise_var.mean())

    def expected_r2(self):
        """Population R^2 of regressing monthly log returns on the planted features."""
        snr = self.snr()
        return snr / (1.0 + snr)


def business_days(start, count):
    start = np.datetime64(start, "D")
    first = np.busday_offset(start, 0, roll="forward")
    return np.busday_offset(first, np.arange(count), roll="forward")


def business_days_in_months(start, months):
    """Number of weekdays in ``months`` whole calendar months starting at ``start``'s month."""
    m0 = np.datetime64(start, "M")
    begin = m0.astype("datetime64[D]")
    end = (m0 + months).astype("datetime64[D]")
    return int(np.busday_count(begin, end))


def generate_synthetic_panel(seed: int, n: int, T: int, signal_strength: float, start=DEFAULT_START):
    """Return ``(MarketPanel, PlantedModel)``; bit-identical for equal arguments."""
    if n < 2 or T < 300:
        raise DataError(f"synthetic panel needs n >= 2 and T >= 300, got n={n}, T={T}")
    rng = np.random.default_rng(seed)
    calendar = business_days(start, T)
    beta = rng.uniform(0.5, 1.5, n)
    idio = rng.uniform(0.01, 0.02, n)
    factor = rng.normal(0.0, FACTOR_VOL, T)
    eps = rng.normal(0.0, 1.0, (n, T)) * idio[:, None]
    direction = rng.normal(size=N_RAW)
    direction /= np.linalg.norm(direction)
    theta = signal_strength * direction / FEATURE_SCALE
    bias = np.full(n, -float(theta @ FEATURE_CENTER))

    base_volume = np.exp(rng.uniform(np.log(5e5), np.log(5e6), n))
    vol_noise = rng.normal(0.0, 0.25, (n, T))
    log_vol = np.empty((n, T))
    log_vol[:, 0] = vol_noise[:, 0]
    for t in range(1, T):
        log_vol[:, t] = 0.8 * log_vol[:, t - 1] + vol_noise[:, t]
    volume = np.round(base_volume[:, None] * np.exp(log_vol))

    logret = BASE_DRIFT + beta[:, None] * factor[None, :] + eps
    logret[:, 0] = np.log(rng.uniform(20.0, 200.0, n))  # initial log price

    months = calendar.astype("datetime64[M]")
    starts = np.flatnonzero(np.r_[True, months[1:] != months[:-1]])
    planted_idx, planted_x, planted_s, planted_var = [], [], [], []
    daily_noise_var = beta**2 * FACTOR_VOL**2 + idio**2
    for j, k in enumerate(starts):
        if k < MIN_HISTORY:
            continue
        stop = starts[j + 1] if j + 1 < len(starts) else T - 1
        days = stop - k
        if days <= 0:
            continue
        # cumsum is sequential, so this prefix equals the final price path bit for bit
        with np.errstate(all="ignore"):
            prices = np.exp(np.cumsum(logret[:, : k + 1], axis=1))
            x = np.stack([indicator_series(prices[i], volume[i, : k + 1])[-1] for i in range(n)])
        s = x @ theta + bias
        logret[:, k + 1 : stop + 1] += (s / days)[:, None]
        planted_idx.append(k)
        planted_x.append(x)
        planted_s.append(s)
        planted_var.append(days * daily_noise_var)

    with np.errstate(all="ignore"):
        close = np.exp(np.cumsum(logret, axis=1))
    if not np.all(np.isfinite(close)) or np.any(close <= 0):
        # momentum features feed the planted returns back into themselves; large strengths diverge
        raise DataError(f"planted signal diverged at signal_strength={signal_strength}; use a smaller strength")
    open_ = np.empty_like(close)
    open_[:, 0] = close[:, 0]
    open_[:, 1:] = close[:, :-1] * np.exp(rng.normal(0.0, 0.002, (n, T - 1)))
    high = np.maximum(open_, close) * np.exp(np.abs(rng.normal(0.0, 0.004, (n, T))))
    low = np.minimum(open_, close) * np.exp(-np.abs(rng.normal(0.0, 0.004, (n, T))))
    tickers = [f"SYN{i:02d}" for i in range(n)]
    panel = MarketPanel(tickers, calendar, open_, high, low, close, close, volume)
    planted_idx = np.array(planted_idx, dtype=int)
    model = PlantedModel(
        theta=theta,
        bias=bias,
        dates=calendar[planted_idx],
        date_index=planted_idx,
        features=np.array(planted_x).reshape(-1, n, N_RAW),
        signal=np.array(planted_s).reshape(-1, n),
        noise_var=np.array(planted_var).reshape(-1, n),
    )
    return panel, model
