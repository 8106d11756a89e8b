"""RBF-kernel soft-margin SVM trained on the dual with pairwise (SMO) updates."""

from __future__ import annotations

import numpy as np

from .. import kernels


def rbf_kernel(A, B, gamma):
    sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * (A @ B.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


def _intercept(alpha, grad, y, C):
    """Bias from the free multipliers, or the midpoint of the feasible interval."""
    yg = y * grad
    upper = alpha >= C
    lower = alpha <= 0.0
    free = ~upper & ~lower
    if free.any():
        rho = float(yg[free].mean())
    else:
        ub_mask = (upper & (y < 0)) | (lower & (y > 0))
        lb_mask = (upper & (y > 0)) | (lower & (y < 0))
        ub = float(yg[ub_mask].min()) if ub_mask.any() else np.inf
        lb = float(yg[lb_mask].max()) if lb_mask.any() else -np.inf
        rho = 0.5 * (ub + lb)
    return -rho


def fit(X, y, hp, seed):
    C = float(hp["C"])
    gamma = float(hp["gamma"])
    tol = float(hp["tol"])
    n = X.shape[0]
    max_iter = hp.get("max_iter") or max(10_000_000, 100 * n)
    ys = np.where(y > 0, 1.0, -1.0)
    K = rbf_kernel(X, X, gamma)
    alpha, grad, iters, converged = kernels.smo_solve(K, ys, C, tol, int(max_iter))
    b = _intercept(alpha, grad, ys, C)
    sv = alpha > 0.0
    objective = 0.5 * float(alpha @ ((ys * alpha) @ K * ys)) - float(alpha.sum())
    params = {
        "alpha": alpha,
        "train_sign": ys,
        "support_vectors": X[sv],
        "dual_coef": alpha[sv] * ys[sv],
        "intercept": np.array([b]),
    }
    diagnostics = {
        "iterations": int(iters),
        "converged": bool(converged),
        "final_objective": objective,
        "n_support": int(sv.sum()),
        "kernel_backend": kernels.BACKEND,
    }
    return params, diagnostics


def scores(params, X, hp):
    sv = params["support_vectors"]
    if sv.shape[0] == 0:
        return np.full(X.shape[0], params["intercept"][0])
    return rbf_kernel(X, sv, float(hp["gamma"])) @ params["dual_coef"] + params["intercept"][0]
