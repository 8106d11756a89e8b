"""L2-regularized logistic regression fitted by damped Newton iterations.

Objective: ``0.5*||w||^2 + C * sum(log(1 + exp(z_i)) - y_i z_i)`` with
``z = Xw + b``; the intercept is not penalized.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


def objective(w, b, X, y, C):
    z = X @ w + b
    return 0.5 * float(w @ w) + C * float(np.sum(np.logaddexp(0.0, z) - y * z))


def gradient(w, b, X, y, C):
    r = expit(X @ w + b) - y
    return np.concatenate([w + C * (X.T @ r), [C * r.sum()]])


def newton_step(X, s, g):
    """Solve ``H step = g`` for the Hessian of the objective at curvature weights ``s``.

    ``H = [[I + X' S X, X' s], [s' X, sum(s)]]`` with ``S = diag(s)``. With more
    columns than rows the weight block is inverted through the Woodbury
    identity on an ``n x n`` system and the intercept is eliminated by its
    Schur complement, so the cost is cubic in ``n`` rather than ``d``.
    """
    n, d = X.shape
    if d <= n:
        H = np.empty((d + 1, d + 1))
        H[:d, :d] = (X.T * s) @ X
        H[:d, :d][np.diag_indices(d)] += 1.0
        H[:d, d] = H[d, :d] = X.T @ s
        H[d, d] = s.sum() + 1e-12
        try:
            return np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(H, g, rcond=None)[0]
    r = np.sqrt(s)
    R = X * r[:, None]
    inner = np.eye(n) + R @ R.T

    def a_inv(v):
        # (I + R'R)^-1 v = v - R' (I + R R')^-1 R v
        return v - R.T @ np.linalg.solve(inner, R @ v)

    c = X.T @ s
    ainv_g = a_inv(g[:d])
    ainv_c = a_inv(c)
    schur = s.sum() + 1e-12 - float(c @ ainv_c)
    step_b = (g[d] - float(c @ ainv_g)) / schur
    return np.concatenate([ainv_g - step_b * ainv_c, [step_b]])


def fit(X, y, hp, seed):
    C = float(hp["C"])
    tol = float(hp["tol"])
    max_iter = int(hp["max_iter"])
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    y = y.astype(np.float64)
    f = objective(w, b, X, y, C)
    g = gradient(w, b, X, y, C)
    it = 0
    while np.max(np.abs(g)) >= tol and it < max_iter:
        it += 1
        p = expit(X @ w + b)
        s = C * p * (1.0 - p)
        step = newton_step(X, s, g)
        slope = float(g @ step)
        if not slope > 0:
            step, slope = g, float(g @ g)
        t = 1.0
        while True:
            w_new, b_new = w - t * step[:d], b - t * step[d]
            f_new = objective(w_new, b_new, X, y, C)
            if f_new <= f - 1e-4 * t * slope or t < 1e-10:
                break
            t *= 0.5
        if f_new > f:
            break
        w, b, f = w_new, b_new, f_new
        g = gradient(w, b, X, y, C)
    grad_norm = float(np.max(np.abs(g)))
    params = {"coef": w, "intercept": np.array([b])}
    diagnostics = {
        "iterations": it,
        "final_objective": f,
        "gradient_inf_norm": grad_norm,
        "converged": bool(grad_norm < tol),
    }
    return params, diagnostics


def scores(params, X):
    return expit(X @ params["coef"] + params["intercept"][0])
