"""Reference solutions of fixed decision problems with cvxpy (independent of the package's solver)."""
import cvxpy as cp
import numpy as np

INSTANCES = {
    "n4": dict(
        r_hat=[0.04, 0.03, -0.01, 0.02],
        sigma=[[0.010, 0.002, 0.001, 0.000],
               [0.002, 0.008, 0.000, 0.001],
               [0.001, 0.000, 0.012, 0.002],
               [0.000, 0.001, 0.002, 0.006]],
        lam=2.0, kappa=0.005, w_prev=[0.25, 0.25, 0.25, 0.25],
    ),
    "n5_rw": dict(
        r_hat=[0.02, 0.05, 0.049, -0.03, 0.01],
        sigma=np.eye(5).tolist(),
        lam=0.0, kappa=0.002, w_prev=[0.1, 0.2, 0.3, 0.2, 0.2],
    ),
}

if __name__ == "__main__":
    for name, p in INSTANCES.items():
        n = len(p["r_hat"])
        w = cp.Variable(n)
        S = np.array(p["sigma"])
        obj = np.array(p["r_hat"]) @ w - p["lam"] * cp.quad_form(w, S) - p["kappa"] * cp.norm1(w - np.array(p["w_prev"]))
        prob = cp.Problem(cp.Maximize(obj), [cp.sum(w) == 1, w >= 0])
        prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
        print(name, repr(prob.value), [repr(float(v)) for v in w.value])
