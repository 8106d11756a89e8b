"""One-hidden-layer ReLU network with a logistic output, trained with Adam.

Loss on a batch of ``m`` rows is the mean binary cross-entropy plus
``alpha / (2m) * (||W1||^2 + ||W2||^2)``; biases are not penalized.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

PARAM_NAMES = ("W1", "b1", "W2", "b2")


def init_params(n_in: int, n_hidden: int, rng: np.random.Generator) -> dict:
    """Glorot-uniform weights and biases, bound ``sqrt(6 / (fan_in + fan_out))`` per layer."""
    b_hidden = np.sqrt(6.0 / (n_in + n_hidden))
    b_out = np.sqrt(6.0 / (n_hidden + 1))
    return {
        "W1": rng.uniform(-b_hidden, b_hidden, (n_in, n_hidden)),
        "b1": rng.uniform(-b_hidden, b_hidden, n_hidden),
        "W2": rng.uniform(-b_out, b_out, n_hidden),
        "b2": rng.uniform(-b_out, b_out, 1),
    }


def forward(params, X):
    pre = X @ params["W1"] + params["b1"]
    hidden = np.maximum(pre, 0.0)
    z = hidden @ params["W2"] + params["b2"][0]
    return pre, hidden, z


def loss(params, X, y, alpha):
    _, _, z = forward(params, X)
    m = X.shape[0]
    data = float(np.mean(np.logaddexp(0.0, z) - y * z))
    penalty = alpha / (2.0 * m) * (float(np.sum(params["W1"] ** 2)) + float(np.sum(params["W2"] ** 2)))
    return data + penalty


def loss_and_grad(params, X, y, alpha):
    pre, hidden, z = forward(params, X)
    m = X.shape[0]
    data = float(np.mean(np.logaddexp(0.0, z) - y * z))
    penalty = alpha / (2.0 * m) * (float(np.sum(params["W1"] ** 2)) + float(np.sum(params["W2"] ** 2)))
    dz = (expit(z) - y) / m
    d_hidden = np.outer(dz, params["W2"]) * (pre > 0.0)
    grads = {
        "W1": X.T @ d_hidden + (alpha / m) * params["W1"],
        "b1": d_hidden.sum(axis=0),
        "W2": hidden.T @ dz + (alpha / m) * params["W2"],
        "b2": np.array([dz.sum()]),
    }
    return data + penalty, grads


def fit(X, y, hp, seed):
    rng = np.random.default_rng(seed)
    n, d = X.shape
    y = y.astype(np.float64)
    params = init_params(d, int(hp["hidden_units"]), rng)
    alpha = float(hp["alpha"])
    lr = float(hp["learning_rate"])
    beta1, beta2, eps = float(hp["beta1"]), float(hp["beta2"]), float(hp["epsilon"])
    batch = min(int(hp["batch_size"]), n)
    max_epochs = int(hp["max_epochs"])
    tol = float(hp["tol"])
    patience = int(hp["n_iter_no_change"])
    m1 = {k: np.zeros_like(v) for k, v in params.items()}
    m2 = {k: np.zeros_like(v) for k, v in params.items()}
    step = 0
    best = np.inf
    stale = 0
    curve = []
    converged = False
    for _ in range(max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            value, grads = loss_and_grad(params, X[idx], y[idx], alpha)
            total += value * idx.size
            step += 1
            lr_t = lr * np.sqrt(1.0 - beta2**step) / (1.0 - beta1**step)
            for k in PARAM_NAMES:
                m1[k] = beta1 * m1[k] + (1.0 - beta1) * grads[k]
                m2[k] = beta2 * m2[k] + (1.0 - beta2) * grads[k] ** 2
                params[k] = params[k] - lr_t * m1[k] / (np.sqrt(m2[k]) + eps)
        epoch_loss = total / n
        curve.append(epoch_loss)
        if epoch_loss > best - tol:
            stale += 1
        else:
            stale = 0
        best = min(best, epoch_loss)
        if stale >= patience:
            converged = True
            break
    diagnostics = {
        "iterations": len(curve),
        "final_objective": float(curve[-1]) if curve else float("nan"),
        "converged": converged,
        "batch_size": batch,
        "adam_steps": step,
        "n_iter_no_change": patience,
    }
    return params, diagnostics


def scores(params, X):
    return expit(forward(params, X)[2])


def gradient_check(params, X, y, alpha, h: float = 1e-5, floor: float = 1e-4) -> float:
    """Max elementwise relative error between analytic and central-difference gradients.

    Relative error is ``|a - n| / max(|a| + |n|, floor)``; the floor keeps
    entries that are zero on both sides from dividing rounding noise by ~0.
    """
    _, grads = loss_and_grad(params, X, y, alpha)
    worst = 0.0
    for k in PARAM_NAMES:
        p = params[k]
        flat = p.reshape(-1)
        g = grads[k].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss(params, X, y, alpha)
            flat[i] = orig - h
            down = loss(params, X, y, alpha)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            err = abs(g[i] - numeric) / max(abs(g[i]) + abs(numeric), floor)
            worst = max(worst, err)
    return worst
