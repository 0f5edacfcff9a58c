"""Base learners: ridge, lasso path, penalized logistic regression and
gradient-boosted regression trees with impurity importance.

Everything here is written against plain numpy arrays; the heavy inner
loops live in ``_kernels``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._kernels import best_splits_level, lasso_cd_path
from .core import RngSpec, SelectionSet, as_generator, balanced_folds

# the usual RidgeCV grid; wider grids drift to heavy shrinkage on noisy
# pseudo-outcomes, which smears effects onto correlated neighbours
DEFAULT_RIDGE_GRID = (0.1, 1.0, 10.0)
DEFAULT_LOGISTIC_GRID = tuple(np.logspace(-2, 4, 7))


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearModel:
    coefficients: np.ndarray
    intercept: float
    penalty: float = 0.0

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.intercept + X @ self.coefficients

    def predict_proba(self, X) -> np.ndarray:
        eta = self.predict(X)
        return _sigmoid(eta)


def _sigmoid(eta):
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------- ridge


def ridge_fit(X, y, penalty: float) -> LinearModel:
    """Ridge regression with an unpenalized intercept."""
    if penalty < 0:
        raise ValueError("penalty must be >= 0")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    xm, ym = X.mean(axis=0), y.mean()
    Xc, yc = X - xm, y - ym
    A = Xc.T @ Xc
    A[np.diag_indices_from(A)] += penalty
    rhs = Xc.T @ yc
    if penalty == 0 and X.shape[1] and np.linalg.matrix_rank(A) < X.shape[1]:
        raise np.linalg.LinAlgError("singular normal equations at penalty 0")
    try:
        beta = scipy.linalg.solve(A, rhs, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        raise np.linalg.LinAlgError("singular normal equations") from None
    return LinearModel(beta, float(ym - xm @ beta), float(penalty))


def _ridge_cv_errors(X, y, grid, fold_of, k):
    """Pooled held-out squared error for each penalty, via one SVD per fold."""
    errors = np.zeros(len(grid))
    for f in range(k):
        test = fold_of == f
        Xtr, ytr = X[~test], y[~test]
        xm, ym = Xtr.mean(axis=0), ytr.mean()
        U, s, Vt = np.linalg.svd(Xtr - xm, full_matrices=False)
        uty = U.T @ (ytr - ym)
        Xte = X[test] - xm
        XteV = Xte @ Vt.T
        for g, lam in enumerate(grid):
            pred = ym + XteV @ (s / (s * s + lam) * uty)
            errors[g] += np.sum((y[test] - pred) ** 2)
    return errors / len(y)


def ridge_cv(X, y, penalty_grid=DEFAULT_RIDGE_GRID, k: int = 5, rng: RngSpec | None = None) -> LinearModel:
    """Pick the penalty with the lowest k-fold CV error, refit on all rows.

    Ties (to relative 1e-10) go to the larger penalty.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    grid = np.asarray(penalty_grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("empty penalty grid")
    n = X.shape[0]
    if n < k:
        raise ValueError(f"n={n} rows is fewer than k={k} folds")
    if grid.size == 1:
        return ridge_fit(X, y, float(grid[0]))
    fold_of = balanced_folds(n, k, as_generator(rng))
    errors = _ridge_cv_errors(X, y, grid, fold_of, k)
    best = _argmin_prefer_large(grid, errors)
    return ridge_fit(X, y, float(grid[best]))


def _argmin_prefer_large(grid, errors):
    order = np.argsort(-grid, kind="stable")
    best = order[0]
    for g in order[1:]:
        if errors[g] < errors[best] and not np.isclose(errors[g], errors[best], rtol=1e-10, atol=0):
            best = g
    return int(best)


# ---------------------------------------------------------------- lasso


@dataclass(frozen=True)
class RegularizationPath:
    lambdas: np.ndarray
    coefficients: np.ndarray  # (L, p)
    intercepts: np.ndarray

    @property
    def active_sets(self) -> list[SelectionSet]:
        return [SelectionSet.from_mask(row != 0) for row in self.coefficients]

    @property
    def active_mask(self) -> np.ndarray:
        return self.coefficients != 0


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def lasso_lambda_max(X, y) -> float:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(np.max(np.abs(X.T @ (y - y.mean()))) / X.shape[0])


def lasso_path(X, y, lambdas, tol: float = 1e-7, max_sweeps: int = 1000,
               check_standardized: bool = True) -> RegularizationPath:
    """Lasso solutions of (1/2n)||y - b0 - Xb||^2 + lam*||b||_1 along ``lambdas``.

    ``X`` must have unit population column variance. Coordinate descent with
    warm starts; stops at a max coefficient change below ``tol``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    lambdas = np.asarray(lambdas, dtype=float).ravel()
    if lambdas.size == 0 or np.any(lambdas <= 0) or np.any(np.diff(lambdas) >= 0):
        raise ValueError("lambdas must be positive and strictly decreasing")
    n = X.shape[0]
    xm = X.mean(axis=0)
    Xc = X - xm
    if check_standardized:
        var = np.mean(Xc**2, axis=0)
        bad = np.flatnonzero(np.abs(var - 1.0) > 1e-6)
        if bad.size:
            raise ValueError(f"lasso_path needs standardized columns; column {bad[0]} has variance {var[bad[0]]:.6g}")
    ym = y.mean()
    gram = Xc.T @ Xc / n
    xty = Xc.T @ (y - ym) / n
    coefs, _ = lasso_cd_path(gram, xty, lambdas, tol, max_sweeps)
    return RegularizationPath(lambdas, coefs, ym - coefs @ xm)


def lasso_objective(X, y, beta, lam, intercept=None) -> float:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if intercept is None:
        intercept = y.mean() - X.mean(axis=0) @ beta
    r = y - intercept - X @ beta
    return float(r @ r / (2 * len(y)) + lam * np.sum(np.abs(beta)))


def lasso_cv(X, y, k: int = 5, n_lambdas: int = 50, eps: float = 1e-3,
             rng: RngSpec | None = None) -> tuple[LinearModel, RegularizationPath]:
    """Lasso at the CV-optimal penalty on a geometric grid below lambda_max."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    lam_max = lasso_lambda_max(X, y)
    if lam_max <= 0:
        return LinearModel(np.zeros(X.shape[1]), float(y.mean())), None
    lambdas = lam_max * np.geomspace(1.0, eps, n_lambdas)
    fold_of = balanced_folds(len(y), k, as_generator(rng))
    errors = np.zeros(n_lambdas)
    for f in range(k):
        test = fold_of == f
        path = lasso_path(X[~test], y[~test], lambdas, check_standardized=False)
        pred = path.intercepts[:, None] + path.coefficients @ X[test].T
        errors += np.sum((y[test][None, :] - pred) ** 2, axis=1)
    best = int(np.argmin(errors))
    full = lasso_path(X, y, lambdas, check_standardized=False)
    model = LinearModel(full.coefficients[best], float(full.intercepts[best]), float(lambdas[best]))
    return model, full


# ---------------------------------------------------------------- logistic


def logistic_fit(X, z, l2: float = 1.0, max_iter: int = 100, tol: float = 1e-8) -> LinearModel:
    """L2-penalized logistic regression by damped Newton steps.

    Maximizes sum_i log-likelihood - (l2/2)*||b||^2; the intercept is not
    penalized. Converged once the gradient norm is at most ``tol``.
    """
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    if l2 <= 0:
        raise ValueError("l2 must be > 0")
    if z.min() == z.max():
        raise ValueError("logistic_fit needs both classes present")
    n, p = X.shape
    Xa = np.hstack([np.ones((n, 1)), X])
    pen = np.full(p + 1, l2)
    pen[0] = 0.0

    def objective(w):
        eta = Xa @ w
        return float(np.sum(z * eta - np.logaddexp(0.0, eta)) - 0.5 * np.sum(pen * w * w))

    w = np.zeros(p + 1)
    w[0] = np.log(z.mean() / (1 - z.mean()))
    obj = objective(w)
    for _ in range(max_iter):
        prob = _sigmoid(Xa @ w)
        grad = Xa.T @ (z - prob) - pen * w
        if np.linalg.norm(grad) <= tol:
            return LinearModel(w[1:].copy(), float(w[0]), float(l2))
        H = (Xa * (prob * (1 - prob))[:, None]).T @ Xa
        H[np.diag_indices_from(H)] += pen + 1e-12
        step = scipy.linalg.solve(H, grad, assume_a="pos")
        if grad @ step < 1e-10:
            # quadratic regime: objective differences are below roundoff
            w = w + step
            obj = objective(w)
            continue
        t = 1.0
        while True:
            cand = w + t * step
            cand_obj = objective(cand)
            if cand_obj >= obj or t < 1e-10:
                break
            t *= 0.5
        w, obj = cand, cand_obj
    prob = _sigmoid(Xa @ w)
    grad = Xa.T @ (z - prob) - pen * w
    if np.linalg.norm(grad) <= tol:
        return LinearModel(w[1:].copy(), float(w[0]), float(l2))
    raise ConvergenceError(f"logistic_fit did not converge in {max_iter} iterations "
                           f"(gradient norm {np.linalg.norm(grad):.3g})")


def logistic_cv(X, z, l2_grid=DEFAULT_LOGISTIC_GRID, k: int = 5,
                rng: RngSpec | None = None) -> LinearModel:
    """Penalty chosen by k-fold held-out log-loss, refit on all rows.

    Folds missing a class are skipped; ties go to the larger penalty.
    """
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    grid = np.asarray(l2_grid, dtype=float).ravel()
    if grid.size == 1:
        return logistic_fit(X, z, float(grid[0]))
    fold_of = balanced_folds(len(z), k, as_generator(rng))
    losses = np.zeros(grid.size)
    for f in range(k):
        test = fold_of == f
        if z[~test].min() == z[~test].max():
            continue
        for g, l2 in enumerate(grid):
            prob = np.clip(logistic_fit(X[~test], z[~test], float(l2)).predict_proba(X[test]), 1e-12, 1 - 1e-12)
            losses[g] -= np.sum(z[test] * np.log(prob) + (1 - z[test]) * np.log(1 - prob))
    return logistic_fit(X, z, float(grid[_argmin_prefer_large(grid, losses)]))


# ---------------------------------------------------------------- boosting


@dataclass(frozen=True)
class RegressionTree:
    """Axis-aligned binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def depth(self) -> int:
        def walk(k):
            if self.feature[k] < 0:
                return 0
            return 1 + max(walk(self.left[k]), walk(self.right[k]))
        return walk(0)

    def predict(self, X) -> np.ndarray:
        return self.value[_route(self, np.asarray(X, dtype=float))]


@dataclass(frozen=True)
class TreeEnsemble:
    trees: tuple[RegressionTree, ...]
    learning_rate: float
    base_score: float
    importance: np.ndarray
    raw_gain: np.ndarray

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            out += tree.predict(X)
        return out

    def staged_predict(self, X):
        X = np.asarray(X, dtype=float)
        out = np.full(X.shape[0], self.base_score)
        yield out.copy()
        for tree in self.trees:
            out += tree.predict(X)
            yield out.copy()


def _grow_tree(X, order, resid, in_sample, max_depth, min_leaf, learning_rate, gain_acc):
    n = X.shape[0]
    feature, threshold, left, right = [-1], [0.0], [-1], [-1]
    node_of = np.where(in_sample, 0, -1).astype(np.int64)
    level_nodes = [0]
    for _ in range(max_depth):
        feats, thrs, gains = best_splits_level(X, order, resid, node_of, len(level_nodes), min_leaf)
        new_level = []
        local_map = -np.ones(2 * len(level_nodes), dtype=np.int64)
        for k, node in enumerate(level_nodes):
            if feats[k] < 0:
                continue
            feature[node], threshold[node] = int(feats[k]), float(thrs[k])
            for side in (0, 1):
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                child = len(feature) - 1
                (left if side == 0 else right)[node] = child
                local_map[2 * k + side] = len(new_level)
                new_level.append(child)
            gain_acc[feats[k]] += gains[k]
        if not new_level:
            break
        active = node_of >= 0
        k_rows = node_of[active]
        f_rows = feats[k_rows]
        split_rows = f_rows >= 0
        new_node_of = -np.ones(n, dtype=np.int64)
        idx = np.flatnonzero(active)[split_rows]
        ks = k_rows[split_rows]
        goes_right = X[idx, feats[ks]] > thrs[ks]
        new_node_of[idx] = local_map[2 * ks + goes_right]
        node_of = new_node_of
        level_nodes = new_level
    feature = np.asarray(feature, dtype=np.int64)
    tree = RegressionTree(feature, np.asarray(threshold), np.asarray(left, dtype=np.int64),
                          np.asarray(right, dtype=np.int64), np.zeros(len(feature)))
    # leaf values: learning-rate-scaled mean residual of in-sample rows
    leaf = _route(tree, X[in_sample])
    sums = np.bincount(leaf, weights=resid[in_sample], minlength=len(feature))
    cnts = np.bincount(leaf, minlength=len(feature))
    value = np.where(cnts > 0, learning_rate * sums / np.maximum(cnts, 1), 0.0)
    return RegressionTree(tree.feature, tree.threshold, tree.left, tree.right, value)


def _route(tree: RegressionTree, X) -> np.ndarray:
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    while True:
        f = tree.feature[node]
        internal = f >= 0
        if not internal.any():
            return node
        go_left = X[rows[internal], f[internal]] <= tree.threshold[node[internal]]
        node[internal] = np.where(go_left, tree.left[node[internal]], tree.right[node[internal]])


def gbt_fit(X, y, rounds: int = 100, max_depth: int = 3, learning_rate: float = 0.1,
            min_leaf: int = 5, rng: RngSpec | None = None, subsample: float = 1.0) -> TreeEnsemble:
    """Squared-error gradient boosting with exact greedy depth-limited trees.

    With ``subsample < 1`` each round grows its tree on a random row subset
    drawn from ``rng``; the default uses every row and is deterministic.
    """
    if rounds < 0 or max_depth < 1 or min_leaf < 1:
        raise ValueError("need rounds >= 0, max_depth >= 1, min_leaf >= 1")
    if not 0 < learning_rate <= 1:
        raise ValueError("learning_rate must lie in (0, 1]")
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    base = float(y.mean())
    pred = np.full(n, base)
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable"))
    gain_acc = np.zeros(p)
    gen = as_generator(rng) if subsample < 1 else None
    trees = []
    for _ in range(rounds):
        if gen is None:
            in_sample = np.ones(n, dtype=bool)
        else:
            in_sample = np.zeros(n, dtype=bool)
            in_sample[gen.choice(n, max(1, int(round(subsample * n))), replace=False)] = True
        tree = _grow_tree(X, order, y - pred, in_sample, max_depth, min_leaf, learning_rate, gain_acc)
        pred += tree.predict(X)
        trees.append(tree)
    total = gain_acc.sum()
    importance = gain_acc / total if total > 0 else np.zeros(p)
    return TreeEnsemble(tuple(trees), learning_rate, base, importance, gain_acc)


def gbt_importance(ensemble: TreeEnsemble) -> np.ndarray:
    """Normalized mean-decrease-impurity; all zeros when no split was made."""
    return ensemble.importance.copy()
