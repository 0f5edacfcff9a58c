"""Numba inner loops for the lasso path and exact-greedy tree growth."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def lasso_cd_path(gram, xty, lambdas, tol, max_sweeps):
    """Covariance-update coordinate descent over a decreasing lambda path.

    Minimizes (1/2n)||y - Xb||^2 + lam*||b||_1 given gram = X'X/n and
    xty = X'y/n, warm-starting each lambda from the previous solution.
    Returns (coefs[L, p], sweeps[L]).
    """
    p = xty.shape[0]
    L = lambdas.shape[0]
    coefs = np.zeros((L, p))
    sweeps = np.zeros(L, dtype=np.int64)
    beta = np.zeros(p)
    grad = xty.copy()  # X'(y - Xb)/n
    for k in range(L):
        lam = lambdas[k]
        it = 0
        while it < max_sweeps:
            it += 1
            max_change = 0.0
            for j in range(p):
                gjj = gram[j, j]
                z = grad[j] + gjj * beta[j]
                if z > lam:
                    new = (z - lam) / gjj
                elif z < -lam:
                    new = (z + lam) / gjj
                else:
                    new = 0.0
                delta = new - beta[j]
                if delta != 0.0:
                    for i in range(p):
                        grad[i] -= gram[i, j] * delta
                    beta[j] = new
                    if abs(delta) > max_change:
                        max_change = abs(delta)
            if max_change < tol:
                break
        sweeps[k] = it
        coefs[k, :] = beta
    return coefs, sweeps


@njit(cache=True, nogil=True)
def best_splits_level(X, order, resid, node_of, n_nodes, min_leaf):
    """Best variance-reduction split for every open node of one tree level.

    ``order[:, f]`` sorts the rows by feature f; ``node_of[i]`` is the open
    node holding row i or -1. Gains are SSE reductions, i.e. node-size
    weighted variance reductions. Ties keep the first feature and the
    smallest threshold.
    """
    n, p = X.shape
    totals = np.zeros(n_nodes)
    counts = np.zeros(n_nodes, dtype=np.int64)
    sq = np.zeros(n_nodes)
    for i in range(n):
        k = node_of[i]
        if k >= 0:
            totals[k] += resid[i]
            counts[k] += 1
            sq[k] += resid[i] * resid[i]
    best_gain = np.zeros(n_nodes)
    best_feat = -np.ones(n_nodes, dtype=np.int64)
    best_thr = np.zeros(n_nodes)
    floor = np.empty(n_nodes)
    for k in range(n_nodes):
        sse = sq[k] - (totals[k] * totals[k] / counts[k] if counts[k] > 0 else 0.0)
        floor[k] = 1e-12 * max(sse, 1e-300)
    left_sum = np.zeros(n_nodes)
    left_cnt = np.zeros(n_nodes, dtype=np.int64)
    last_val = np.zeros(n_nodes)
    for f in range(p):
        left_sum[:] = 0.0
        left_cnt[:] = 0
        for t in range(n):
            i = order[t, f]
            k = node_of[i]
            if k < 0:
                continue
            v = X[i, f]
            nl = left_cnt[k]
            nr = counts[k] - nl
            if nl >= min_leaf and nr >= min_leaf and v > last_val[k]:
                ls = left_sum[k]
                rs = totals[k] - ls
                gain = ls * ls / nl + rs * rs / nr - totals[k] * totals[k] / counts[k]
                if gain > best_gain[k] and gain > floor[k]:
                    thr = last_val[k] + 0.5 * (v - last_val[k])
                    if thr >= v:
                        thr = last_val[k]
                    best_gain[k] = gain
                    best_feat[k] = f
                    best_thr[k] = thr
            left_sum[k] += resid[i]
            left_cnt[k] += 1
            last_val[k] = v
    return best_feat, best_thr, best_gain
