import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spofolio.acceptance import random_instances, simplex_grid
from spofolio.errors import InputError
from spofolio.optimizer import (
    OPTIMAL,
    DecisionProblem,
    clean_weights,
    kkt_residual,
    objective_value,
    oracle_decision,
    solve,
    solve_batch,
    verify_kkt,
)

# frozen from tests/oracles/qp_oracle.py (cvxpy / Clarabel at 1e-12)
N4 = dict(
    r_hat=[0.04, 0.03, -0.01, 0.02],
    sigma=[[0.010, 0.002, 0.001, 0.000], [0.002, 0.008, 0.000, 0.001], [0.001, 0.000, 0.012, 0.002], [0.000, 0.001, 0.002, 0.006]],
    lam=2.0, kappa=0.005, w_prev=[0.25, 0.25, 0.25, 0.25],
)
N4_W = [0.5, 0.25, 0.0, 0.25]
N4_OBJ = 0.022
N5 = dict(r_hat=[0.02, 0.05, 0.049, -0.03, 0.01], sigma=np.eye(5), lam=0.0, kappa=0.002, w_prev=[0.1, 0.2, 0.3, 0.2, 0.2])
N5_W = [0.0, 0.7, 0.3, 0.0, 0.0]
N5_OBJ = 0.0477


def problem(**kw):
    return DecisionProblem(np.array(kw["r_hat"], float), np.array(kw["sigma"], float), kw["lam"], kw["kappa"], np.array(kw["w_prev"], float))


def test_linear_objective_selects_argmax():
    p = DecisionProblem(np.array([0.3, 0.1, -0.2]), np.eye(3), 0.0, 0.0, np.full(3, 1 / 3))
    res = solve(p)
    np.testing.assert_allclose(res.w_star, [1, 0, 0], atol=1e-12)
    rep = verify_kkt(p, res)
    assert rep.ok and rep.case == ["a", "c", "c"]
    assert rep.nu == pytest.approx(0.3, abs=1e-9)
    assert rep.score[0] == pytest.approx(rep.nu, abs=1e-9)
    assert np.all(rep.score[1:] <= rep.nu)


@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0])
def test_large_cost_freezes_portfolio(lam, rng):
    w_prev = rng.dirichlet(np.ones(4))
    p = DecisionProblem(rng.normal(0, 0.1, 4), np.diag([0.01, 0.02, 0.03, 0.04]), lam, 10.0, w_prev)
    res = solve(p)
    np.testing.assert_allclose(res.w_star, w_prev, atol=1e-10)
    rep = verify_kkt(p, res)
    assert rep.ok and rep.case == ["b"] * 4
    assert np.all(np.abs(rep.score - rep.nu) <= 10.0)


@pytest.mark.parametrize("spec, w_ref, obj_ref", [(N4, N4_W, N4_OBJ), (N5, N5_W, N5_OBJ)])
def test_matches_independent_qp_solver(spec, w_ref, obj_ref):
    res = solve(problem(**spec))
    assert res.status == OPTIMAL
    np.testing.assert_allclose(res.w_star, w_ref, atol=1e-8)
    assert res.objective == pytest.approx(obj_ref, abs=1e-9)


def test_grid_oracle_random_instances():
    grid = simplex_grid()
    for p in random_instances(100, seed=7):
        res = solve(p)
        best = objective_value(p.r_hat, p.sigma, p.lam, p.kappa, p.w_prev, grid).max()
        assert res.objective >= best - 1e-4
        assert res.kkt_residual <= 1e-6
        assert verify_kkt(p, res).ok


def test_oracle_decision_equals_solve():
    p = problem(**N4)
    a = oracle_decision(p.r_hat, p.sigma, p.lam, p.kappa, p.w_prev)
    b = solve(p)
    np.testing.assert_array_equal(a.w_star, b.w_star)
    one_hot = oracle_decision(np.array([0.01, 0.05, 0.02]), np.eye(3), 0, 0, np.full(3, 1 / 3))
    np.testing.assert_allclose(one_hot.w_star, [0, 1, 0], atol=1e-12)


def test_input_validation():
    good = dict(r_hat=np.zeros(2), sigma=np.eye(2), lam=1.0, kappa=0.0, w_prev=np.full(2, 0.5))
    with pytest.raises(InputError, match="PSD"):
        DecisionProblem(**{**good, "sigma": np.array([[1.0, 0.0], [0.0, -1.0]])})
    with pytest.raises(InputError, match="simplex"):
        DecisionProblem(**{**good, "w_prev": np.array([0.7, 0.7])})
    with pytest.raises(InputError):
        DecisionProblem(**{**good, "lam": -1.0})
    with pytest.raises(InputError):
        DecisionProblem(**{**good, "r_hat": np.array([np.nan, 0.0])})
    with pytest.raises(InputError):
        DecisionProblem(**{**good, "r_hat": np.zeros(3)})


def test_asymmetric_sigma_is_symmetrized():
    S = np.array([[0.02, 0.01], [0.0, 0.03]])
    a = solve(DecisionProblem(np.array([0.05, 0.04]), S, 1.0, 0.0, np.full(2, 0.5)))
    b = solve(DecisionProblem(np.array([0.05, 0.04]), 0.5 * (S + S.T), 1.0, 0.0, np.full(2, 0.5)))
    np.testing.assert_allclose(a.w_star, b.w_star, atol=1e-12)


def test_iteration_cap_reports_max_iter():
    p = problem(**N4)
    res = solve(p, max_iter=2)
    assert res.status == "max_iter"
    assert res.kkt_residual > 1e-8
    assert np.isfinite(res.w_star).all()


def test_ties_resolved_deterministically():
    p = DecisionProblem(np.array([0.1, 0.1, 0.0]), np.zeros((3, 3)), 0.0, 0.0, np.full(3, 1 / 3))
    a, b = solve(p), solve(p)
    np.testing.assert_array_equal(a.w_star, b.w_star)
    # the ridge selects the unique minimum-norm point of the optimal face
    np.testing.assert_allclose(a.w_star, [0.5, 0.5, 0.0], atol=1e-8)


def test_batch_matches_single_solves(rng):
    B, n = 6, 5
    R = rng.normal(0, 0.1, (B, n))
    A = rng.normal(size=(n, n)) * 0.1
    S = A @ A.T
    W = rng.dirichlet(np.ones(n), B)
    batch = solve_batch(R, S, 3.0, 0.01, W)
    for b in range(B):
        single = solve(DecisionProblem(R[b], S, 3.0, 0.01, W[b]))
        np.testing.assert_allclose(batch.w[b], single.w_star, atol=1e-12)
        assert batch[b].status == OPTIMAL


def test_duals_reconstruct_residual():
    p = problem(**N4)
    res = solve(p)
    again = kkt_residual(p.r_hat, p.sigma, p.lam, p.kappa, p.w_prev, res.w_star, res.nu, res.mu, res.s)
    assert again <= res.kkt_residual + 1e-15
    assert np.all(res.mu >= 0) and np.all(np.abs(res.s) <= 1)


def test_debug_dump(tmp_path):
    path = tmp_path / "ipm.csv"
    res = solve(problem(**N4), debug_path=path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["iteration", "primal_residual", "dual_residual", "complementarity"]
    assert len(rows) - 1 == res.iterations
    assert float(rows[-1][3]) < float(rows[1][3])


def test_clean_weights():
    w = clean_weights(np.array([0.5, -1e-12, 0.5 + 1e-12]))
    assert w.min() == 0.0 and abs(w.sum() - 1) < 1e-15
    with pytest.raises(InputError):
        clean_weights(np.array([1.1, -0.1]))


def random_problem(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n)) * rng.choice([0.01, 0.1, 1.0])
    return DecisionProblem(
        rng.normal(0, 0.1, n), A @ A.T, float(rng.choice([0.0, 0.5, 5.0, 50.0])),
        float(rng.choice([0.0, 0.001, 0.01, 0.2])), rng.dirichlet(np.ones(n)),
    )


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(2, 12))
def test_feasibility_and_certificate_property(seed, n):
    p = random_problem(seed, n)
    res = solve(p)
    assert res.status == OPTIMAL
    assert abs(res.w_star.sum() - 1) <= 1e-8 and res.w_star.min() >= -1e-10
    assert verify_kkt(p, res).ok


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(2, 8), shift=st.floats(-1.0, 1.0))
def test_uniform_shift_invariance(seed, n, shift):
    p = random_problem(seed, n)
    a = solve(p)
    b = solve(DecisionProblem(p.r_hat + shift, p.sigma, p.lam, p.kappa, p.w_prev))
    np.testing.assert_allclose(a.w_star, b.w_star, atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(2, 8))
def test_turnover_monotone_in_kappa(seed, n):
    p = random_problem(seed, n)
    to = []
    for kappa in (0.0, 0.001, 0.003, 0.01, 0.03, 0.1, 0.3):
        res = solve(DecisionProblem(p.r_hat, p.sigma, p.lam, kappa, p.w_prev))
        to.append(0.5 * np.abs(res.w_star - p.w_prev).sum())
    assert all(b <= a + 1e-7 for a, b in zip(to, to[1:]))
