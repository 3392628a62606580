"""Long-only mean-variance rebalancing with an L1 transaction cost.

The decision problem is

    maximize    r_hat' w - lam * w' Sigma w - kappa * ||w - w_prev||_1
    subject to  1' w = 1,  w >= 0

(``lam = 0`` gives the pure return-maximization problem).  The L1 term is split
as ``w = w_prev + p - m`` with ``p, m >= 0`` and the resulting convex QP

    minimize    0.5 x' Q x + c' x      x = (w, p, m) >= 0
    subject to  1' w = 1,   w - p + m = w_prev

is solved with a dense Mehrotra predictor-corrector interior-point method.
Eliminating ``p``, ``m`` and their multipliers reduces every Newton step to an
``(n + 1)``-dimensional saddle system, solved by a dense Cholesky factorization in a
compiled per-instance loop.  A final active-set polish snaps
weights onto their exact faces (zero, or unchanged from ``w_prev``) and
recomputes the multipliers in closed form.

Multipliers follow the sign convention of the stationarity condition

    r_hat_i - 2 lam (Sigma w)_i - kappa s_i - nu + mu_i = 0,

with ``mu >= 0``, ``mu_i w_i = 0`` and ``s_i`` a subgradient of
``|w_i - w_prev_i|``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import InputError

RIDGE = 1e-10
# residuals are measured without the ridge, whose gradient 2*RIDGE*w sets a floor
RESIDUAL_FLOOR = 4 * RIDGE
SIMPLEX_TOL = 1e-9

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class DecisionProblem:
    r_hat: np.ndarray
    sigma: np.ndarray
    lam: float
    kappa: float
    w_prev: np.ndarray

    def __post_init__(self):
        r_hat = np.asarray(self.r_hat, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        w_prev = np.asarray(self.w_prev, dtype=float)
        n = r_hat.shape[0] if r_hat.ndim == 1 else -1
        if n < 1 or sigma.shape != (n, n) or w_prev.shape != (n,):
            raise InputError(
                f"inconsistent shapes r_hat={r_hat.shape} sigma={sigma.shape} w_prev={w_prev.shape}"
            )
        if not (np.all(np.isfinite(r_hat)) and np.all(np.isfinite(sigma))):
            raise InputError("non-finite r_hat or sigma")
        object.__setattr__(self, "r_hat", r_hat)
        object.__setattr__(self, "sigma", _checked_sigma(sigma))
        object.__setattr__(self, "w_prev", _checked_simplex(w_prev, "w_prev"))
        if not (self.lam >= 0 and self.kappa >= 0):
            raise InputError(f"lam and kappa must be >= 0, got {self.lam}, {self.kappa}")

    @property
    def n(self):
        return self.r_hat.shape[0]


@dataclass(frozen=True)
class DecisionResult:
    w_star: np.ndarray
    nu: float
    mu: np.ndarray
    s: np.ndarray
    objective: float
    kkt_residual: float
    status: str
    iterations: int = 0


@dataclass
class BatchResult:
    """Solutions of ``B`` problems stacked along the first axis."""

    w: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    s: np.ndarray
    objective: np.ndarray
    residual: np.ndarray
    status: list
    iterations: int

    def __getitem__(self, b) -> DecisionResult:
        return DecisionResult(
            w_star=self.w[b],
            nu=float(self.nu[b]),
            mu=self.mu[b],
            s=self.s[b],
            objective=float(self.objective[b]),
            kkt_residual=float(self.residual[b]),
            status=self.status[b],
            iterations=self.iterations,
        )

    def __len__(self):
        return self.w.shape[0]


def _checked_sigma(sigma):
    sym = 0.5 * (sigma + sigma.swapaxes(-1, -2))
    eig_min = np.linalg.eigvalsh(sym).min()
    scale = max(1.0, float(np.abs(sym).max(initial=0.0)))
    if eig_min < -1e-10 * scale:
        raise InputError(f"sigma is not PSD (smallest eigenvalue {eig_min:.3e})")
    return sym


def _checked_simplex(w, name):
    """Validate one weight vector or a batch of them along the last axis."""
    sums = w.sum(-1)
    bad = (w < -SIMPLEX_TOL).any(-1) | (np.abs(sums - 1.0) > SIMPLEX_TOL)
    if np.any(bad):
        k = np.flatnonzero(np.atleast_1d(bad))[0]
        row = np.atleast_2d(w)[k]
        raise InputError(f"{name} is not on the simplex (sum={row.sum():.12g}, min={row.min():.3e})")
    return w


def objective_value(r_hat, sigma, lam, kappa, w_prev, w):
    """Paper-form objective, without the tie-breaking ridge; broadcasts over a batch axis."""
    r_hat, w, w_prev = np.asarray(r_hat), np.asarray(w), np.asarray(w_prev)
    quad = np.einsum("...i,...ij,...j->...", w, sigma, w)
    return (r_hat * w).sum(-1) - lam * quad - kappa * np.abs(w - w_prev).sum(-1)


def kkt_residual(r_hat, sigma, lam, kappa, w_prev, w, nu, mu, s):
    """Worst violation of the optimality conditions for a candidate ``(w, nu, mu, s)``.

    Covers stationarity, primal and dual feasibility, complementarity of ``mu``
    with ``w`` and consistency of ``s`` with the direction of trade (in
    product form, so it vanishes exactly on the subdifferential).
    Broadcasts over a leading batch axis.
    """
    nu = np.asarray(nu)[..., None]
    grad = r_hat - 2.0 * lam * np.einsum("...ij,...j->...i", sigma, w)
    stat = np.abs(grad - kappa * s - nu + mu).max(-1)
    primal = np.maximum(np.abs(w.sum(-1) - 1.0), np.maximum(-w, 0.0).max(-1))
    dual = np.maximum(np.maximum(-mu, 0.0).max(-1), np.maximum(np.abs(s) - 1.0, 0.0).max(-1))
    comp = np.abs(mu * w).max(-1)
    move = w - w_prev
    subgrad = kappa * ((1.0 - s) * np.maximum(move, 0.0) + (1.0 + s) * np.maximum(-move, 0.0)).max(-1)
    return np.maximum.reduce([stat, primal, dual, comp, subgrad])


def solve(problem: DecisionProblem, tol: float = 1e-8, max_iter: int = 100, debug_path=None) -> DecisionResult:
    """Solve one decision problem; see :func:`solve_batch` for the algorithm."""
    batch = _solve_batch_checked(
        problem.r_hat[None, :],
        problem.sigma,
        problem.lam,
        problem.kappa,
        problem.w_prev[None, :],
        tol=tol,
        max_iter=max_iter,
        polish=True,
        debug_path=debug_path,
    )
    return batch[0]


def oracle_decision(r, sigma, lam, kappa, w_prev, tol: float = 1e-8) -> DecisionResult:
    """Decision taken with hindsight: the same problem fed the realized returns."""
    return solve(DecisionProblem(np.asarray(r, dtype=float), sigma, lam, kappa, w_prev), tol=tol)


def solve_batch(r_hat, sigma, lam, kappa, w_prev, tol=1e-8, max_iter=100, polish=True, debug_path=None) -> BatchResult:
    """Solve ``B`` problems sharing ``lam`` and ``kappa``.

    Args:
        r_hat: ``(B, n)`` predicted returns.
        sigma: ``(n, n)`` shared or ``(B, n, n)`` per-instance covariance.
        w_prev: ``(n,)`` shared or ``(B, n)`` per-instance anchor portfolios.
        tol: KKT residual required for ``status == "optimal"``.
        polish: snap to exact faces after the interior-point phase.  Turning
            it off is cheaper and leaves weights accurate to roughly ``tol``.
        debug_path: if given, per-iteration residuals are written there as CSV.
    """
    r_hat = np.atleast_2d(np.asarray(r_hat, dtype=float))
    B, n = r_hat.shape
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape not in ((n, n), (B, n, n)):
        raise InputError(f"sigma shape {sigma.shape} does not match r_hat {r_hat.shape}")
    w_prev = np.broadcast_to(np.asarray(w_prev, dtype=float), (B, n))
    if not np.all(np.isfinite(r_hat)):
        raise InputError("non-finite r_hat")
    if not (lam >= 0 and kappa >= 0):
        raise InputError(f"lam and kappa must be >= 0, got {lam}, {kappa}")
    _checked_simplex(w_prev, "w_prev")
    sigma = _checked_sigma(sigma)
    return _solve_batch_checked(r_hat, sigma, lam, kappa, w_prev, tol, max_iter, polish, debug_path)


def _solve_batch_checked(r_hat, sigma, lam, kappa, w_prev, tol, max_iter, polish, debug_path):
    B, n = r_hat.shape
    eye = np.eye(n)
    Q = 2.0 * (lam * sigma + RIDGE * eye)
    Q = np.broadcast_to(Q, (B, n, n))
    w_prev = np.broadcast_to(w_prev, (B, n))

    ipm = _interior_point(r_hat, Q, kappa, w_prev, max_iter, debug_path)
    w, nu, mu, s = ipm["w"], ipm["nu"], ipm["mu"], ipm["s"]
    residual = kkt_residual(r_hat, sigma, lam, kappa, w_prev, w, nu, mu, s)

    if polish:
        for b in range(B):
            cand = _polish(r_hat[b], Q[b], kappa, w_prev[b], w[b], nu[b], tol)
            if cand is None:
                continue
            cw, cnu, cmu, cs = cand
            res = kkt_residual(r_hat[b], sigma if sigma.ndim == 2 else sigma[b], lam, kappa, w_prev[b], cw, cnu, cmu, cs)
            if res <= residual[b] or res <= max(tol, RESIDUAL_FLOOR):
                w[b], nu[b], mu[b], s[b], residual[b] = cw, cnu, cmu, cs, res

    status = [OPTIMAL if residual[b] <= max(tol, RESIDUAL_FLOOR) else MAX_ITER for b in range(B)]
    obj = objective_value(r_hat, sigma, lam, kappa, w_prev, w)
    return BatchResult(w=w, nu=nu, mu=mu, s=s, objective=obj, residual=residual, status=status, iterations=ipm["iterations"])


@njit(cache=True)
def _max_step(v, dv):
    step = 1.0
    for k in range(v.size):
        if dv.flat[k] < 0.0:
            step = min(step, -v.flat[k] / dv.flat[k])
    return step


@njit(cache=True)
def _cholesky_solve(L, rhs):
    n = rhs.size
    out = rhs.copy()
    for i in range(n):
        acc = out[i]
        for k in range(i):
            acc -= L[i, k] * out[k]
        out[i] = acc / L[i, i]
    for i in range(n - 1, -1, -1):
        acc = out[i]
        for k in range(i + 1, n):
            acc -= L[k, i] * out[k]
        out[i] = acc / L[i, i]
    return out


@njit(cache=True)
def _ipm_instance(c, Qs, ks, w_prev, max_iter, eps, log):
    """Mehrotra predictor-corrector on one scaled instance; returns ``(x, z, nu, y, iterations)``.

    Rows of ``x`` are ``w``, ``p`` (buys) and ``m`` (sells); ``z`` holds their bound multipliers.
    """
    n = c.size
    x = np.empty((3, n))
    x[0, :] = 1.0 / n
    x[1:, :] = 0.5
    z = np.ones((3, n))
    nu = 0.0
    y = np.zeros(n)
    rd = np.empty((3, n))
    rp2 = np.empty(n)
    D = np.empty((3, n))
    E = np.empty(n)
    L = np.empty((n, n))
    f = np.empty((3, n))
    g = np.empty(n)
    dx = np.empty((3, n))
    dz = np.empty((3, n))
    dy = np.empty(n)
    rc = np.empty((3, n))
    ones = np.ones(n)
    scale3n = 1.0 / (3 * n)

    it = 0
    while it < max_iter:
        it += 1
        rp1 = 1.0
        err_p = 0.0
        err_d = 0.0
        gap = 0.0
        for i in range(n):
            qw = 0.0
            for j in range(n):
                qw += Qs[i, j] * x[0, j]
            rd[0, i] = qw + c[i] - nu - y[i] - z[0, i]
            rd[1, i] = ks + y[i] - z[1, i]
            rd[2, i] = ks - y[i] - z[2, i]
            rp1 -= x[0, i]
            rp2[i] = w_prev[i] - x[0, i] + x[1, i] - x[2, i]
            err_p = max(err_p, abs(rp2[i]))
            for k in range(3):
                err_d = max(err_d, abs(rd[k, i]))
                gap += x[k, i] * z[k, i]
        err_p = max(err_p, abs(rp1))
        gap *= scale3n
        if log.shape[0] > 0:
            log[it - 1, 0] = err_p
            log[it - 1, 1] = err_d
            log[it - 1, 2] = gap
        if err_p <= eps and err_d <= eps and gap <= eps:
            break

        for i in range(n):
            for k in range(3):
                D[k, i] = z[k, i] / x[k, i]
            E[i] = 1.0 / D[1, i] + 1.0 / D[2, i]
        # Cholesky of Qs + diag(D_w + 1/E), symmetric positive definite
        for i in range(n):
            for j in range(i + 1):
                acc = Qs[i, j]
                if i == j:
                    acc += D[0, i] + 1.0 / E[i]
                for k in range(j):
                    acc -= L[i, k] * L[j, k]
                if i == j:
                    L[i, i] = np.sqrt(max(acc, 1e-300))
                else:
                    L[i, j] = acc / L[j, j]
        b = _cholesky_solve(L, ones)
        bsum = b.sum()

        sigma_target = 0.0
        for corrector in range(2):
            for i in range(n):
                for k in range(3):
                    if corrector == 0:
                        rc[k, i] = -x[k, i] * z[k, i]
                    else:
                        rc[k, i] = sigma_target - x[k, i] * z[k, i] - dx[k, i] * dz[k, i]
                    f[k, i] = -rd[k, i] + rc[k, i] / x[k, i]
                g[i] = rp2[i] + f[1, i] / D[1, i] - f[2, i] / D[2, i]
            h = f[0] + g / E
            a = _cholesky_solve(L, h)
            dnu = (rp1 - a.sum()) / bsum
            for i in range(n):
                dx[0, i] = a[i] + b[i] * dnu
                dy[i] = (g[i] - dx[0, i]) / E[i]
                dx[1, i] = (f[1, i] - dy[i]) / D[1, i]
                dx[2, i] = (f[2, i] + dy[i]) / D[2, i]
                for k in range(3):
                    dz[k, i] = (rc[k, i] - z[k, i] * dx[k, i]) / x[k, i]
            if corrector == 0:
                a_aff = min(_max_step(x, dx), _max_step(z, dz))
                gap_aff = 0.0
                for i in range(n):
                    for k in range(3):
                        gap_aff += (x[k, i] + a_aff * dx[k, i]) * (z[k, i] + a_aff * dz[k, i])
                gap_aff *= scale3n
                sigma_target = (gap_aff / gap) ** 3 * gap

        alpha = min(1.0, 0.99 * min(_max_step(x, dx), _max_step(z, dz)))
        for i in range(n):
            for k in range(3):
                x[k, i] += alpha * dx[k, i]
                z[k, i] += alpha * dz[k, i]
            y[i] += alpha * dy[i]
        nu += alpha * dnu
    return x, z, nu, y, it


@njit(cache=True)
def _ipm_batch(c, Qs, ks, w_prev, max_iter, eps, log):
    B, n = c.shape
    w = np.empty((B, n))
    zw = np.empty((B, n))
    nu = np.empty(B)
    y = np.empty((B, n))
    iters = np.empty(B, dtype=np.int64)
    for b in range(B):
        xb, zb, nub, yb, it = _ipm_instance(c[b], Qs[b], ks[b], w_prev[b], max_iter, eps, log[b])
        w[b] = xb[0]
        zw[b] = zb[0]
        nu[b] = nub
        y[b] = yb
        iters[b] = it
    return w, zw, nu, y, iters


def _interior_point(r_hat, Q, kappa, w_prev, max_iter, debug_path, eps=1e-11):
    B, n = r_hat.shape
    # scale the objective so that data are O(1); the minimizer is unchanged
    scale = np.maximum.reduce([
        np.abs(r_hat).max(-1),
        np.abs(Q).max((-1, -2)),
        np.full(B, kappa),
        np.full(B, 1e-6),
    ])
    c = np.ascontiguousarray(-r_hat / scale[:, None])
    Qs = np.ascontiguousarray(Q / scale[:, None, None])
    ks = kappa / scale
    log = np.full((B, max_iter if debug_path is not None else 0, 3), np.nan)
    w, zw, nu, y, iters = _ipm_batch(c, Qs, ks, np.ascontiguousarray(w_prev), max_iter, eps, log)

    if debug_path is not None:
        with open(debug_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "primal_residual", "dual_residual", "complementarity"])
            for k in range(int(iters.max())):
                row = log[:, k]
                row = row[~np.isnan(row[:, 0])]
                writer.writerow([k + 1] + [float(v) for v in row.max(0)])

    w_out = np.maximum(w, 0.0)
    w_out = w_out / w_out.sum(-1, keepdims=True)
    if kappa > 0:
        s_out = np.clip(-y * scale[:, None] / kappa, -1.0, 1.0)
    else:
        s_out = np.sign(w_out - w_prev)
    return {
        "w": w_out,
        "nu": -nu * scale,
        "mu": zw * scale[:, None],
        "s": s_out,
        "iterations": int(iters.max()),
    }


def _polish(r, Q, kappa, w_prev, w_ipm, nu_ipm, tol):
    """Identify the active faces of ``w_ipm`` and solve the resulting linear KKT system.

    Returns ``(w, nu, mu, s)`` or ``None`` when no threshold yields a
    consistent active set.
    """
    n = r.shape[0]
    for thr in (1e-7, 1e-9, 1e-5):
        zero = w_ipm <= thr
        if kappa > 0:
            stay = ~zero & (np.abs(w_ipm - w_prev) <= thr)
        else:
            stay = np.zeros(n, dtype=bool)
        free = ~(zero | stay)
        direction = np.sign(w_ipm - w_prev)
        w = np.zeros(n)
        w[stay] = w_prev[stay]
        F = np.flatnonzero(free)
        if F.size:
            k = F.size
            K = np.zeros((k + 1, k + 1))
            K[:k, :k] = Q[np.ix_(F, F)]
            K[:k, k] = 1.0
            K[k, :k] = 1.0
            rhs = np.empty(k + 1)
            rhs[:k] = r[F] - kappa * direction[F] - Q[np.ix_(F, stay)] @ w_prev[stay]
            rhs[k] = 1.0 - w_prev[stay].sum()
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            w[F] = sol[:k]
            nu = sol[k]
            if np.any(w[F] < -1e-14):
                continue
            if kappa > 0 and np.any(direction[F] * (w[F] - w_prev[F]) < -1e-14):
                continue
            w[F] = np.maximum(w[F], 0.0)
        else:
            if abs(w_prev[stay].sum() - 1.0) > 1e-12:
                continue
            w = np.where(stay, w_prev, 0.0)
            g = r - Q @ w
            lower = [-np.inf]
            upper = [np.inf]
            if stay.any():
                lower.append((g[stay] - kappa).max())
                upper.append((g[stay] + kappa).min())
            zp = zero & (w_prev > 0)
            z0 = zero & ~(w_prev > 0)
            if zp.any():
                lower.append((g[zp] + kappa).max())
            if z0.any():
                lower.append((g[z0] - kappa).max())
            lo, hi = max(lower), min(upper)
            if lo > hi + 1e-14:
                continue
            nu = float(np.clip(nu_ipm, lo, hi))

        g = r - Q @ w
        s = np.zeros(n)
        mu = np.zeros(n)
        if kappa > 0:
            s[free] = direction[free]
            s[stay] = np.clip((g[stay] - nu) / kappa, -1.0, 1.0)
            moved_out = zero & (w_prev > 0)
            at_zero = zero & ~(w_prev > 0)
            s[moved_out] = -1.0
            s[at_zero] = np.clip((g[at_zero] - nu) / kappa, -1.0, 1.0)
        else:
            s = np.sign(w - w_prev)
        mu[zero] = nu - g[zero] + kappa * s[zero]
        if np.any(mu < -1e-12 * max(1.0, abs(nu))):
            continue
        mu = np.maximum(mu, 0.0)
        w = w / w.sum()
        return w, nu, mu, s
    return None


@dataclass
class KktReport:
    """Per-asset breakdown of the threshold structure at a solution."""

    score: np.ndarray
    case: list
    nu: float
    worst_residual: float
    ok: bool
    details: list = field(default_factory=list)


def verify_kkt(problem: DecisionProblem, result: DecisionResult, tol: float = 1e-6, face_tol: float = 1e-9) -> KktReport:
    """Check the marginal-score threshold structure of a solved problem.

    Scores are ``g_i = r_hat_i - 2 lam (Sigma w)_i``.  Assets are split into

    * ``"a"``: held and traded, ``g_i - kappa * sign(w_i - w_prev_i) = nu``;
    * ``"b"``: held and untouched, ``|g_i - nu| <= kappa``;
    * ``"c"``: not held, ``g_i - kappa * s_i <= nu`` for an admissible ``s_i``
      (``s_i = -1`` when the asset was sold out of).

    Complementary slackness ``mu_i w_i`` is checked as well.  Failures are
    reported, never raised.
    """
    w = result.w_star
    g = problem.r_hat - 2.0 * problem.lam * problem.sigma @ w
    kappa = problem.kappa
    move = w - problem.w_prev
    inactive = w <= face_tol
    traded = ~inactive & (np.abs(move) > face_tol)
    if kappa == 0:
        # without a cost every held asset sits on the equality
        traded = ~inactive
    cases = []
    details = []
    nu = result.nu
    worst = 0.0
    a_idx = np.flatnonzero(traded)
    if a_idx.size:
        implied = g[a_idx] - kappa * np.sign(move[a_idx])
        spread = float(implied.max() - implied.min())
        worst = max(worst, spread, float(np.abs(implied - nu).max()))
        if spread > tol:
            details.append(f"case (a) scores disagree by {spread:.3e}")
    for i in range(problem.n):
        if inactive[i]:
            cases.append("c")
            s_bound = -1.0 if problem.w_prev[i] > face_tol else 1.0
            viol = g[i] - kappa * s_bound - nu
            if viol > 0:
                worst = max(worst, viol)
                if viol > tol:
                    details.append(f"asset {i}: inactive score exceeds threshold by {viol:.3e}")
        elif traded[i]:
            cases.append("a")
        else:
            cases.append("b")
            viol = abs(g[i] - nu) - kappa
            if viol > 0:
                worst = max(worst, viol)
                if viol > tol:
                    details.append(f"asset {i}: no-trade band violated by {viol:.3e}")
    comp = float(np.abs(result.mu * w).max())
    worst = max(worst, comp)
    if comp > tol:
        details.append(f"complementary slackness violated by {comp:.3e}")
    return KktReport(score=g, case=cases, nu=nu, worst_residual=worst, ok=not details, details=details)


def clean_weights(w, tol=1e-10):
    """Clamp slightly negative weights to zero and renormalize onto the simplex."""
    w = np.asarray(w, dtype=float)
    if np.any(w < -tol):
        raise InputError(f"weight {w.min():.3e} is below the clamp tolerance")
    w = np.maximum(w, 0.0)
    return w / w.sum()
