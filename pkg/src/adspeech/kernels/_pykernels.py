"""Pure numpy implementations of the hot kernels.

Each function here has a compiled twin in ``_ckernels.pyx`` with the same
signature and the same floating-point expression order, so the two backends
agree to rounding (and usually bit-for-bit).
"""

from __future__ import annotations

import numpy as np

TAU = 1e-12


def zero_crossings(frames: np.ndarray) -> np.ndarray:
    """Count sign changes per frame; zero counts as positive."""
    frames = np.asarray(frames, dtype=np.float64)
    positive = frames >= 0.0
    return np.count_nonzero(positive[:, 1:] != positive[:, :-1], axis=1).astype(np.int64)


def normalized_autocorr(frames: np.ndarray, min_lag: int, max_lag: int) -> np.ndarray:
    """Normalized autocorrelation of every frame for lags ``min_lag..max_lag``.

    ``r[tau] = sum x[n] x[n+tau] / sqrt(sum_{n<N-tau} x[n]^2 * sum_{n>=tau} x[n]^2)``,
    and 0 where either energy vanishes.
    """
    frames = np.asarray(frames, dtype=np.float64)
    n_frames, n = frames.shape
    lags = np.arange(min_lag, max_lag + 1)
    if n_frames == 0:
        return np.zeros((0, lags.size))
    nfft = 1 << int(2 * n - 1).bit_length()
    spec = np.fft.rfft(frames, nfft, axis=1)
    acf = np.fft.irfft(spec * spec.conj(), nfft, axis=1)[:, lags]
    sq = frames * frames
    csum = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(sq, axis=1)], axis=1)
    head = csum[:, n - lags]
    tail = csum[:, n:n + 1] - csum[:, lags]
    denom = np.sqrt(head * tail)
    out = np.zeros_like(acf)
    ok = denom > 0.0
    out[ok] = acf[ok] / denom[ok]
    return out


def best_split(X: np.ndarray, order: np.ndarray, y: np.ndarray):
    """Exhaustive Gini split search.

    ``order[:, f]`` must sort column ``f`` ascending. Returns
    ``(feature, threshold, score)`` with ``score`` the sample-weighted child
    impurity ``n_l*g_l + n_r*g_r``; feature is -1 when no column has two
    distinct values. Ties keep the lowest feature, then the lowest threshold.
    """
    n, d = X.shape
    total_pos = float(np.sum(y))
    best_feature = -1
    best_threshold = 0.0
    best_score = np.inf
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    for f in range(d):
        idx = order[:, f]
        xs = X[idx, f]
        p_left = np.cumsum(y[idx].astype(np.float64))[:-1]
        p_right = total_pos - p_left
        q_left = n_left - p_left
        q_right = n_right - p_right
        score = (n_left - (p_left * p_left + q_left * q_left) / n_left) + (
            n_right - (p_right * p_right + q_right * q_right) / n_right
        )
        score[xs[:-1] == xs[1:]] = np.inf
        i = int(np.argmin(score))
        if score[i] < best_score:
            best_score = float(score[i])
            best_feature = f
            lo, hi = xs[i], xs[i + 1]
            mid = 0.5 * (lo + hi)
            best_threshold = float(lo if mid >= hi else mid)
    return best_feature, best_threshold, best_score


def smo_solve(K: np.ndarray, y: np.ndarray, C: float, tol: float, max_iter: int):
    """Solve the C-SVC dual with second-order working-set selection.

    Minimizes ``0.5 a'Qa - sum(a)`` with ``Q = yy' * K``, ``0 <= a <= C`` and
    ``y'a = 0``. Returns ``(alpha, gradient, iterations, converged)``.
    """
    K = np.asarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    alpha = np.zeros(n)
    G = -np.ones(n)
    diag = np.diag(K).copy()
    pos = y > 0
    it = 0
    converged = False
    while it < max_iter:
        at_upper = alpha >= C
        at_lower = alpha <= 0.0
        up = np.where(pos, ~at_upper, ~at_lower)
        low = np.where(pos, ~at_lower, ~at_upper)
        minus_yg = -y * G
        cand = np.where(up, minus_yg, -np.inf)
        i = int(np.argmax(cand))
        gmax = cand[i]
        yg = y * G
        gmax2 = np.max(np.where(low, yg, -np.inf))
        if gmax + gmax2 < tol:
            converged = True
            break
        grad_diff = gmax + yg
        quad = diag[i] + diag - 2.0 * K[i]
        quad = np.where(quad > 0.0, quad, TAU)
        obj = np.where(low & (grad_diff > 0.0), -(grad_diff * grad_diff) / quad, np.inf)
        j = int(np.argmin(obj))
        if not np.isfinite(obj[j]):
            converged = True
            break
        it += 1

        old_i, old_j = alpha[i], alpha[j]
        q = diag[i] + diag[j] - 2.0 * K[i, j]
        if q <= 0.0:
            q = TAU
        ai, aj = old_i, old_j
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / q
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0.0:
                if aj < 0.0:
                    aj = 0.0
                    ai = diff
            elif ai < 0.0:
                ai = 0.0
                aj = -diff
            if diff > 0.0:
                if ai > C:
                    ai = C
                    aj = C - diff
            elif aj > C:
                aj = C
                ai = C + diff
        else:
            delta = (G[i] - G[j]) / q
            total = ai + aj
            ai -= delta
            aj += delta
            if total > C:
                if ai > C:
                    ai = C
                    aj = total - C
            elif aj < 0.0:
                aj = 0.0
                ai = total
            if total > C:
                if aj > C:
                    aj = C
                    ai = total - C
            elif ai < 0.0:
                ai = 0.0
                aj = total
        alpha[i], alpha[j] = ai, aj
        dai = ai - old_i
        daj = aj - old_j
        qi = (y[i] * y) * K[i]
        qj = (y[j] * y) * K[j]
        G += qi * dai + qj * daj
    return alpha, G, it, converged
