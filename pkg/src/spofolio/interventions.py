"""Prediction-scale control and partial portfolio adjustment.

Transforms act on predictions at decision time only; they never enter training.
A variant is composed as transform -> optimize -> adjust.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError

VARIANTS = ("standard", "clip", "rescale", "adj", "clip_adj", "rescale_adj")
SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class VariantSpec:
    name: str = "standard"
    gamma: float = 0.1
    c: float = 0.1
    delta: float = 0.1

    def __post_init__(self):
        if self.name not in VARIANTS:
            raise ConfigError("variant", f"unknown variant {self.name!r}; expected one of {', '.join(VARIANTS)}")
        if not self.gamma > 0:
            raise ConfigError("gamma", f"must be > 0, got {self.gamma}")
        if not self.c > 0:
            raise ConfigError("rescale_c", f"must be > 0, got {self.c}")
        if not 0 < self.delta <= 1:
            raise ConfigError("delta", f"must be in (0, 1], got {self.delta}")

    @property
    def transform(self):
        if self.name.startswith("clip"):
            return "clip"
        if self.name.startswith("rescale"):
            return "rescale"
        return None

    @property
    def adjusts(self):
        return self.name == "adj" or self.name.endswith("_adj")


def clip_predictions(r_hat, gamma):
    """Winsorize every prediction into ``[-gamma, gamma]``."""
    return np.clip(np.asarray(r_hat, dtype=float), -gamma, gamma)


def rescale_predictions(r_hat, c):
    """Affine min-max map of the prediction vector onto ``[-c, c]``.

    A constant vector carries no cross-sectional information and maps to zeros.
    """
    r_hat = np.asarray(r_hat, dtype=float)
    lo, hi = r_hat.min(), r_hat.max()
    if hi == lo:
        return np.zeros_like(r_hat)
    return -c + 2.0 * c * (r_hat - lo) / (hi - lo)


def partial_adjust(w_prev, w_target, delta):
    """Move ``delta`` of the way from ``w_prev`` toward ``w_target``."""
    w_prev = np.asarray(w_prev, dtype=float)
    w_target = np.asarray(w_target, dtype=float)
    for name, w in (("w_prev", w_prev), ("w_target", w_target)):
        if np.any(w < -SIMPLEX_TOL) or abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise InputError(f"{name} is off the simplex (sum={w.sum():.12g}, min={w.min():.3e})")
    if not 0 < delta <= 1:
        raise InputError(f"delta must be in (0, 1], got {delta}")
    if delta == 1:
        return w_target.copy()
    return w_prev + delta * (w_target - w_prev)


def apply_variant(spec: VariantSpec, r_hat):
    """Return ``(r_tilde, post_hook)`` for a variant.

    ``post_hook(w_prev, w_target)`` maps the optimizer's target to the held portfolio.
    """
    if spec.transform == "clip":
        r_tilde = clip_predictions(r_hat, spec.gamma)
    elif spec.transform == "rescale":
        r_tilde = rescale_predictions(r_hat, spec.c)
    else:
        r_tilde = np.array(r_hat, dtype=float)

    if spec.adjusts:
        def hook(w_prev, w_target):
            return partial_adjust(w_prev, w_target, spec.delta)
    else:
        def hook(w_prev, w_target):
            return np.array(w_target, dtype=float)
    hook.variant = spec.name
    return r_tilde, hook
