"""Linear return predictor trained by squared error (PTO) or through the optimizer (SPO+).

The model is shared across assets: for the design row ``x_{t,i}`` of asset ``i``
(standardized raw features followed by the asset one-hot),

    r_hat_{t,i} = theta' x_{t,i} + bias_i.

SPO+ for the regularized decision problem.  With ``R(w) = lam w'Sigma w +
kappa ||w - w_anchor||_1`` and ``z*(v) = max_w v'w - R(w)`` over the simplex,

    loss(r_hat, r) = z*(2 r_hat - r) - (2 r_hat - r)' w*(r) + R(w*(r)),

which is convex in ``r_hat``, non-negative, zero at ``r_hat = r`` and has the
subgradient ``2 (w*(2 r_hat - r) - w*(r))``.  For ``lam = kappa = 0`` it is the
usual SPO+ loss of a linear objective over the simplex.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm, qmc

from .errors import DataError, ShapeError, SolverError, WindowError
from .optimizer import RESIDUAL_FLOOR, solve_batch

MODES = ("pto", "spo")
MODEL_HEADER = "spofolio-model v1"

LR_RANGE = (1e-4, 1.0)
EPOCH_RANGE = (50, 500)
L2_RANGE = (1e-6, 1.0)


@dataclass(frozen=True)
class Hyperparams:
    learning_rate: float = 0.01
    epochs: int = 100
    l2: float = 1e-4

    def __post_init__(self):
        if not (self.l2 >= 0 and self.epochs >= 1 and self.learning_rate >= 0):
            raise ValueError(f"invalid hyperparameters {self}")


@dataclass
class PredictorParams:
    theta: np.ndarray
    bias: np.ndarray
    mode: str = "spo"
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    metadata: dict = field(default_factory=dict)

    @property
    def n_features(self):
        return self.theta.size

    @property
    def n_assets(self):
        return self.bias.size


@dataclass(frozen=True)
class TrainSample:
    """One rebalance month: design rows, realized next-period returns and the decision context."""

    features: np.ndarray
    realized: np.ndarray
    sigma: np.ndarray
    w_anchor: np.ndarray
    date: object = None


@dataclass(frozen=True)
class LossGradient:
    theta: np.ndarray
    bias: np.ndarray
    r_hat: np.ndarray


def predict(params: PredictorParams, features) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.ndim < 2 or features.shape[-1] != params.n_features or features.shape[-2] != params.n_assets:
        raise ShapeError(
            f"features of shape {features.shape} do not match a model with "
            f"{params.n_assets} assets and {params.n_features} features"
        )
    return features @ params.theta + params.bias


def _stack(samples):
    samples = list(samples)
    if not samples:
        raise DataError("no training samples")
    X = np.stack([s.features for s in samples])
    R = np.stack([s.realized for s in samples])
    S = np.stack([s.sigma for s in samples])
    W = np.stack([s.w_anchor for s in samples])
    if X.ndim != 3 or R.shape != X.shape[:2]:
        raise ShapeError(f"inconsistent sample shapes: features {X.shape}, realized {R.shape}")
    if np.all(S == S[0]):
        S = S[0]
    return X, R, S, W


def regularizer(sigma, lam, kappa, w_anchor, w):
    quad = np.einsum("...i,...ij,...j->...", w, sigma, w)
    return lam * quad + kappa * np.abs(w - w_anchor).sum(-1)


def _check(batch, what, scale, tol):
    bad = batch.residual > max(tol, RESIDUAL_FLOOR) * np.maximum(1.0, scale)
    if np.any(bad):
        b = int(np.flatnonzero(bad)[0])
        raise SolverError(f"{what} solve failed for instance {b} (KKT residual {batch.residual[b]:.3e})")


def spo_plus_batch(r_hat, realized, sigma, lam, kappa, w_anchor, tol=1e-8, oracle=None, polish=True):
    """SPO+ losses and ``r_hat`` subgradients for a batch, shapes ``(B,)`` and ``(B, n)``.

    ``oracle`` may carry precomputed realized-return decisions ``(B, n)``.
    """
    r_hat = np.atleast_2d(np.asarray(r_hat, dtype=float))
    realized = np.atleast_2d(np.asarray(realized, dtype=float))
    if oracle is None:
        ob = solve_batch(realized, sigma, lam, kappa, w_anchor, tol=tol, polish=polish)
        _check(ob, "oracle (realized-return)", np.abs(realized).max(-1), tol)
        oracle = ob.w
    v = 2.0 * r_hat - realized
    vb = solve_batch(v, sigma, lam, kappa, w_anchor, tol=tol, polish=polish)
    _check(vb, "surrogate (2*r_hat - r)", np.abs(v).max(-1), tol)
    # z*(v) - v'w_r + R(w_r) grouped so that r_hat = r cancels exactly
    gain = (v * vb.w).sum(-1) - (v * oracle).sum(-1)
    loss = gain - (regularizer(sigma, lam, kappa, w_anchor, vb.w) - regularizer(sigma, lam, kappa, w_anchor, oracle))
    grad = 2.0 * (vb.w - oracle)
    return loss, grad


def spo_plus_loss(params: PredictorParams, sample: TrainSample, lam, kappa, tol=1e-8):
    """SPO+ loss of one sample and its gradient with respect to ``theta``, ``bias`` and ``r_hat``."""
    r_hat = predict(params, sample.features)
    loss, g = spo_plus_batch(r_hat[None], sample.realized[None], sample.sigma, lam, kappa, sample.w_anchor, tol=tol)
    g = g[0]
    return float(loss[0]), LossGradient(theta=sample.features.T @ g, bias=g, r_hat=g)


def decisions(r_hat, sigma, lam, kappa, w_anchor, tol=1e-8):
    batch = solve_batch(r_hat, sigma, lam, kappa, w_anchor, tol=tol)
    _check(batch, "decision", np.abs(np.atleast_2d(r_hat)).max(-1), tol)
    return batch.w


def regret(r_hat, realized, sigma, lam, kappa, w_anchor, tol=1e-8):
    """Realized-return gap between the hindsight decision and the predicted one, per sample."""
    realized = np.atleast_2d(realized)
    w_oracle = decisions(realized, sigma, lam, kappa, w_anchor, tol)
    w_pred = decisions(r_hat, sigma, lam, kappa, w_anchor, tol)
    return (realized * w_oracle).sum(-1) - (realized * w_pred).sum(-1)


def initial_params(samples, mode, hyperparams):
    X, R, _, _ = _stack(samples)
    return PredictorParams(theta=np.zeros(X.shape[2]), bias=R.mean(0), mode=mode, hyperparams=hyperparams)


def fit_pto(samples, l2):
    """Closed-form ridge fit of ``sum ||r_hat - r||^2 + l2 ||theta||^2`` (bias unpenalized).

    Returns ``(theta, bias, min_norm)``; ``min_norm`` flags a rank-deficient
    system solved by the minimum-norm rule.
    """
    X, R, _, _ = _stack(samples)
    S, n, d = X.shape
    A = np.concatenate([X.reshape(S * n, d), np.tile(np.eye(n), (S, 1))], axis=1)
    y = R.reshape(-1)
    if l2 > 0:
        pen = np.concatenate([np.sqrt(l2) * np.eye(d), np.zeros((d, n))], axis=1)
        A = np.vstack([A, pen])
        y = np.concatenate([y, np.zeros(d)])
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    return coef[:d], coef[d:], bool(rank < d + n)


def fit_pto_gradient_descent(samples, l2, learning_rate, epochs):
    """Plain gradient descent on the PTO objective; an independent route to :func:`fit_pto`."""
    X, R, _, _ = _stack(samples)
    theta = np.zeros(X.shape[2])
    bias = R.mean(0)
    for _ in range(epochs):
        resid = X @ theta + bias - R
        theta = theta - learning_rate * (2.0 * np.einsum("snd,sn->d", X, resid) + 2.0 * l2 * theta)
        bias = bias - learning_rate * 2.0 * resid.sum(0)
    return theta, bias


def train(samples, mode, hyperparams: Hyperparams, lam, kappa, seed=0, tol=1e-8) -> PredictorParams:
    """Fit the predictor.

    ``pto``: closed-form ridge regression.  ``spo``: full-batch subgradient
    descent on the mean SPO+ loss plus ``l2 ||theta||^2``, started from
    ``theta = 0`` and the per-asset mean of the training returns.  Neither
    mode consumes randomness; ``seed`` is recorded for provenance.
    """
    if mode not in MODES:
        raise ValueError(f"unknown training mode {mode!r}")
    if mode == "pto":
        theta, bias, min_norm = fit_pto(samples, hyperparams.l2)
        return PredictorParams(theta, bias, "pto", hyperparams, {"min_norm": min_norm, "seed": seed})

    X, R, sigma, W = _stack(samples)
    S = X.shape[0]
    theta = np.zeros(X.shape[2])
    bias = R.mean(0)
    lr = hyperparams.learning_rate
    if lr > 0:
        ob = solve_batch(R, sigma, lam, kappa, W, tol=tol)
        _check(ob, "oracle (realized-return)", np.abs(R).max(-1), tol)
        w_oracle = ob.w
        for _ in range(hyperparams.epochs):
            r_hat = X @ theta + bias
            v = 2.0 * r_hat - R
            vb = solve_batch(v, sigma, lam, kappa, W, tol=tol, polish=False)
            _check(vb, "surrogate (2*r_hat - r)", np.abs(v).max(-1), tol)
            G = 2.0 * (vb.w - w_oracle) / S
            theta = theta - lr * (np.einsum("snd,sn->d", X, G) + 2.0 * hyperparams.l2 * theta)
            bias = bias - lr * G.sum(0)
    return PredictorParams(theta, bias, "spo", hyperparams, {"seed": seed})


def validation_score(params, samples, mode, lam, kappa, tol=1e-8):
    """Mean decision regret (spo) or mean squared error (pto) on held-out samples."""
    X, R, sigma, W = _stack(samples)
    r_hat = X @ params.theta + params.bias
    if mode == "pto":
        return float(((r_hat - R) ** 2).mean())
    return float(regret(r_hat, R, sigma, lam, kappa, W, tol).mean())


def candidate_from_unit(u) -> Hyperparams:
    """Map a point of the unit cube to ``(learning_rate, epochs, l2)``."""
    lo, hi = np.log10(LR_RANGE)
    lr = 10.0 ** (lo + (hi - lo) * u[0])
    epochs = int(round(EPOCH_RANGE[0] + (EPOCH_RANGE[1] - EPOCH_RANGE[0]) * u[1]))
    lo, hi = np.log10(L2_RANGE)
    l2 = 10.0 ** (lo + (hi - lo) * u[2])
    return Hyperparams(learning_rate=float(lr), epochs=epochs, l2=float(l2))


@dataclass
class SearchResult:
    hyperparams: Hyperparams
    score: float
    params: PredictorParams
    log: list


def _expected_improvement(X_seen, y_seen, X_pool, seed):
    from sklearn.gaussian_process import GaussianProcessRegressor
    from sklearn.gaussian_process.kernels import ConstantKernel, Matern, WhiteKernel

    y = np.asarray(y_seen, dtype=float)
    if np.ptp(y) == 0:
        return np.zeros(len(X_pool))
    kernel = ConstantKernel(1.0) * Matern(length_scale=0.3, nu=2.5) + WhiteKernel(1e-3)
    gp = GaussianProcessRegressor(kernel=kernel, normalize_y=True, random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        gp.fit(np.asarray(X_seen), y)
        mean, std = gp.predict(np.asarray(X_pool), return_std=True)
    best = y.min()
    std = np.maximum(std, 1e-12)
    z = (best - mean) / std
    return (best - mean) * norm.cdf(z) + std * norm.pdf(z)


def search_hyperparams(train_window, val_window, mode, budget, seed, lam=0.0, kappa=0.0, candidates=None, tol=1e-8) -> SearchResult:
    """Sequential model-based search over ``(learning_rate, epochs, l2)``.

    Candidates come from a scrambled Sobol sequence seeded by ``seed``.  The
    first few are evaluated as drawn; each later pick maximizes expected
    improvement under a Gaussian-process fit to the scores seen so far.  Each
    candidate is trained on ``train_window`` and scored on ``val_window``
    (regret for spo, MSE for pto).  Explicit ``candidates`` are evaluated in
    order instead.  Ties go to the earliest evaluated candidate.
    """
    train_window, val_window = list(train_window), list(val_window)
    if not train_window or not val_window:
        raise WindowError("hyperparameter search needs non-empty training and validation windows")
    if budget < 1:
        raise ValueError("budget must be >= 1")

    log = []
    fitted = []

    def evaluate(hp):
        params = train(train_window, mode, hp, lam, kappa, seed=seed, tol=tol)
        score = validation_score(params, val_window, mode, lam, kappa, tol)
        log.append((hp, score))
        fitted.append(params)

    if candidates is not None:
        for hp in list(candidates)[:budget]:
            evaluate(hp)
    else:
        pool_size = max(64, 1 << int(np.ceil(np.log2(budget + 1))))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pool = qmc.Sobol(d=3, scramble=True, seed=seed).random(pool_size)
        n_init = min(budget, 4)
        seen = list(range(n_init))
        for k in seen:
            evaluate(candidate_from_unit(pool[k]))
        while len(seen) < budget:
            rest = [k for k in range(pool_size) if k not in seen]
            ei = _expected_improvement(pool[seen], [s for _, s in log], pool[rest], seed)
            k = rest[int(np.argmax(ei))]
            seen.append(k)
            evaluate(candidate_from_unit(pool[k]))

    scores = np.array([s for _, s in log])
    best = int(np.argmin(scores))
    return SearchResult(hyperparams=log[best][0], score=float(scores[best]), params=fitted[best], log=log)


def save_model(params: PredictorParams, path):
    hp = params.hyperparams
    with open(path, "w") as fh:
        fh.write(
            f"{MODEL_HEADER} mode={params.mode} learning_rate={hp.learning_rate!r} "
            f"epochs={hp.epochs} l2={hp.l2!r}\n"
        )
        fh.write(f"{params.n_features} {params.n_assets}\n")
        fh.write(" ".join(repr(float(v)) for v in params.theta) + "\n")
        fh.write(" ".join(repr(float(v)) for v in params.bias) + "\n")


def load_model(path) -> PredictorParams:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if len(lines) < 4 or not lines[0].startswith(MODEL_HEADER + " "):
        raise DataError(f"{path}: not a {MODEL_HEADER} file")
    fields = dict(tok.split("=", 1) for tok in lines[0][len(MODEL_HEADER) + 1:].split())
    mode = fields.get("mode")
    if mode not in MODES:
        raise DataError(f"{path}: unknown mode {mode!r}")
    hp = Hyperparams(
        learning_rate=float(fields.get("learning_rate", Hyperparams.learning_rate)),
        epochs=int(fields.get("epochs", Hyperparams.epochs)),
        l2=float(fields.get("l2", Hyperparams.l2)),
    )
    d, n = (int(v) for v in lines[1].split())
    theta = np.array([float(v) for v in lines[2].split()])
    bias = np.array([float(v) for v in lines[3].split()])
    if theta.size != d or bias.size != n:
        raise DataError(f"{path}: coefficient counts do not match dimensions {d} x {n}")
    return PredictorParams(theta=theta, bias=bias, mode=mode, hyperparams=hp)


def with_hyperparams(params, hp):
    return replace(params, hyperparams=hp)
