# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()

cdef double TAU = 1e-12


def zero_crossings(frames):
    cdef const double[:, ::1] x = np.ascontiguousarray(frames, dtype=np.float64)
    cdef Py_ssize_t n_frames = x.shape[0], n = x.shape[1], f, i
    out = np.zeros(n_frames, dtype=np.int64)
    cdef cnp.int64_t[::1] counts = out
    cdef cnp.int64_t c
    cdef bint prev, cur
    with nogil:
        for f in range(n_frames):
            c = 0
            if n > 0:
                prev = x[f, 0] >= 0.0
                for i in range(1, n):
                    cur = x[f, i] >= 0.0
                    if cur != prev:
                        c += 1
                    prev = cur
            counts[f] = c
    return out


def normalized_autocorr(frames, Py_ssize_t min_lag, Py_ssize_t max_lag):
    cdef const double[:, ::1] x = np.ascontiguousarray(frames, dtype=np.float64)
    cdef Py_ssize_t n_frames = x.shape[0], n = x.shape[1]
    cdef Py_ssize_t n_lags = max_lag - min_lag + 1
    out = np.zeros((n_frames, n_lags), dtype=np.float64)
    cdef double[:, ::1] r = out
    csum_arr = np.zeros(n + 1, dtype=np.float64)
    cdef double[::1] csum = csum_arr
    cdef Py_ssize_t f, k, tau, i, m
    cdef double num, denom, a0, a1, a2, a3
    cdef const double* row
    with nogil:
        for f in range(n_frames):
            row = &x[f, 0]
            # energies of the head and tail windows come from one prefix sum
            for i in range(n):
                csum[i + 1] = csum[i] + row[i] * row[i]
            for k in range(n_lags):
                tau = min_lag + k
                m = n - tau
                # four accumulators break the add dependency chain
                a0 = a1 = a2 = a3 = 0.0
                i = 0
                while i + 4 <= m:
                    a0 += row[i] * row[i + tau]
                    a1 += row[i + 1] * row[i + 1 + tau]
                    a2 += row[i + 2] * row[i + 2 + tau]
                    a3 += row[i + 3] * row[i + 3 + tau]
                    i += 4
                while i < m:
                    a0 += row[i] * row[i + tau]
                    i += 1
                num = (a0 + a1) + (a2 + a3)
                denom = sqrt(csum[n - tau] * (csum[n] - csum[tau]))
                if denom > 0.0:
                    r[f, k] = num / denom
    return out


def best_split(X, order, y):
    cdef const double[:, ::1] xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const cnp.int64_t[::1, :] ov = np.asfortranarray(order, dtype=np.int64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], d = xv.shape[1], f, i, row
    cdef double total_pos = 0.0
    for i in range(n):
        total_pos += yv[i]
    cdef Py_ssize_t best_feature = -1
    cdef double best_threshold = 0.0, best_score = INFINITY
    cdef double p_left, p_right, q_left, q_right, n_left, n_right, score, lo, hi, mid
    with nogil:
        for f in range(d):
            p_left = 0.0
            for i in range(n - 1):
                row = ov[i, f]
                p_left += yv[row]
                lo = xv[row, f]
                hi = xv[ov[i + 1, f], f]
                if lo == hi:
                    continue
                n_left = <double>(i + 1)
                n_right = n - n_left
                p_right = total_pos - p_left
                q_left = n_left - p_left
                q_right = n_right - p_right
                score = (n_left - (p_left * p_left + q_left * q_left) / n_left) + (
                    n_right - (p_right * p_right + q_right * q_right) / n_right
                )
                if score < best_score:
                    best_score = score
                    best_feature = f
                    mid = 0.5 * (lo + hi)
                    best_threshold = lo if mid >= hi else mid
    return int(best_feature), float(best_threshold), float(best_score)


def smo_solve(K, y, double C, double tol, Py_ssize_t max_iter):
    cdef const double[:, ::1] k = np.ascontiguousarray(K, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0]
    alpha_arr = np.zeros(n, dtype=np.float64)
    grad_arr = -np.ones(n, dtype=np.float64)
    cdef double[::1] alpha = alpha_arr
    cdef double[::1] G = grad_arr
    cdef Py_ssize_t it = 0, t, i, j
    cdef bint converged = False, up, low, pos
    cdef double gmax, gmax2, yg, grad_diff, quad, obj, best_obj
    cdef double q, ai, aj, old_i, old_j, delta, diff, total, dai, daj, yi, yj
    with nogil:
        while it < max_iter:
            gmax = -INFINITY
            i = -1
            for t in range(n):
                pos = yv[t] > 0.0
                if pos:
                    up = alpha[t] < C
                else:
                    up = alpha[t] > 0.0
                if up and -yv[t] * G[t] > gmax:
                    gmax = -yv[t] * G[t]
                    i = t
            gmax2 = -INFINITY
            best_obj = INFINITY
            j = -1
            for t in range(n):
                pos = yv[t] > 0.0
                if pos:
                    low = alpha[t] > 0.0
                else:
                    low = alpha[t] < C
                if not low:
                    continue
                yg = yv[t] * G[t]
                if yg > gmax2:
                    gmax2 = yg
                if i < 0:
                    continue
                grad_diff = gmax + yg
                if grad_diff > 0.0:
                    quad = k[i, i] + k[t, t] - 2.0 * k[i, t]
                    if not quad > 0.0:
                        quad = TAU
                    obj = -(grad_diff * grad_diff) / quad
                    if obj < best_obj:
                        best_obj = obj
                        j = t
            if gmax + gmax2 < tol:
                converged = True
                break
            if j < 0:
                converged = True
                break
            it += 1

            old_i = alpha[i]
            old_j = alpha[j]
            q = k[i, i] + k[j, j] - 2.0 * k[i, j]
            if q <= 0.0:
                q = TAU
            ai = old_i
            aj = old_j
            if yv[i] != yv[j]:
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
            alpha[i] = ai
            alpha[j] = aj
            dai = ai - old_i
            daj = aj - old_j
            yi = yv[i]
            yj = yv[j]
            for t in range(n):
                G[t] += ((yi * yv[t]) * k[i, t]) * dai + ((yj * yv[t]) * k[j, t]) * daj
    return alpha_arr, grad_arr, int(it), bool(converged)
