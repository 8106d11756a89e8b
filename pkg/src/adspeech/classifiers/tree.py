"""CART classification tree with Gini impurity and deterministic tie-breaking."""

from __future__ import annotations

import numpy as np

from .. import kernels

LEAF = -1


def gini_weighted(n_pos: float, n: float) -> float:
    """``n * gini`` for a node holding ``n`` rows of which ``n_pos`` are positive."""
    if n == 0:
        return 0.0
    q = n - n_pos
    return n - (n_pos * n_pos + q * q) / n


def fit(X, y, hp, seed):
    min_split = int(hp["min_samples_split"])
    min_leaf = int(hp["min_samples_leaf"])
    max_depth = hp.get("max_depth")
    y = y.astype(np.float64)
    feature, threshold, left, right, n_pos, n_rows, impurity = [], [], [], [], [], [], []

    def new_node(idx):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        n_pos.append(float(y[idx].sum()))
        n_rows.append(float(idx.size))
        impurity.append(gini_weighted(n_pos[-1], n_rows[-1]))
        return len(feature) - 1

    root = new_node(np.arange(X.shape[0]))
    stack = [(root, np.arange(X.shape[0]), 0)]
    depth_reached = 0
    while stack:
        node, idx, depth = stack.pop()
        depth_reached = max(depth_reached, depth)
        if idx.size < min_split or impurity[node] == 0.0:
            continue
        if max_depth is not None and depth >= int(max_depth):
            continue
        Xn = X[idx]
        order = np.argsort(Xn, axis=0, kind="stable")
        f, thr, score = kernels.best_split(Xn, order, y[idx])
        # zero-gain splits are allowed (XOR-like nodes); only a worsening split is refused
        if f < 0 or score > impurity[node] + 1e-9 * idx.size:
            continue
        go_left = Xn[:, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        if li.size < min_leaf or ri.size < min_leaf:
            continue
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # push right first so the left subtree is numbered first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    params = {
        "feature": np.array(feature, dtype=np.int64),
        "threshold": np.array(threshold),
        "left": np.array(left, dtype=np.int64),
        "right": np.array(right, dtype=np.int64),
        "n_pos": np.array(n_pos),
        "n_rows": np.array(n_rows),
    }
    n_leaves = int(np.sum(params["feature"] == LEAF))
    diagnostics = {
        "iterations": len(feature),
        "converged": True,
        "final_objective": float(sum(impurity[i] for i in range(len(feature)) if feature[i] == LEAF)),
        "n_nodes": len(feature),
        "n_leaves": n_leaves,
        "depth": depth_reached,
        "kernel_backend": kernels.BACKEND,
    }
    return params, diagnostics


def leaf_index(params, X) -> np.ndarray:
    feature, threshold = params["feature"], params["threshold"]
    left, right = params["left"], params["right"]
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = feature[node] != LEAF
    while active.any():
        rows = np.flatnonzero(active)
        cur = node[rows]
        go_left = X[rows, feature[cur]] <= threshold[cur]
        node[rows] = np.where(go_left, left[cur], right[cur])
        active = feature[node] != LEAF
    return node


def scores(params, X):
    leaf = leaf_index(params, X)
    return params["n_pos"][leaf] / params["n_rows"][leaf]
