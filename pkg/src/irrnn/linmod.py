"""Voxel-wise linear models: OLS, residual variances, Z-maps and Lasso.

All voxels share one design matrix, so most routines work on the whole
``N x V`` response block at once instead of looping over voxels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, RankDeficiencyError

VAR_FLOOR = 1e-8
MAX_CONDITION = 1e12


@dataclass(frozen=True, eq=False)
class MuaResult:
    """Mass univariate fit. ``degenerate`` flags entries whose standard error is 0."""

    beta_ols: np.ndarray
    se: np.ndarray
    z: np.ndarray
    sigma2_tilde: np.ndarray
    degenerate: np.ndarray


def _check_design(X, extra_dof=0):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidArgumentError("X must be a 2-d N x J matrix")
    N, J = X.shape
    if N <= J + extra_dof:
        raise InvalidArgumentError(f"need N > {J + extra_dof} subjects, got N={N}")
    gram = X.T @ X
    if not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > MAX_CONDITION:
        raise RankDeficiencyError("X'X is singular or too ill-conditioned")
    return X, gram


def _ols_block(X, Y):
    X, gram = _check_design(X)
    gram_inv = np.linalg.inv(gram)
    coef = gram_inv @ (X.T @ Y)
    resid = Y - X @ coef
    return coef, resid, gram_inv


def ols_voxel(X, y):
    """Least squares for a single voxel; returns ``(coef, residual_ss)``."""
    y = np.asarray(y, dtype=np.float64)
    coef, resid, _ = _ols_block(X, y[:, None])
    return coef[:, 0], float(resid[:, 0] @ resid[:, 0])


def residual_maker(X):
    """The projection I - X (X'X)^{-1} X'."""
    X, gram = _check_design(X)
    return np.eye(X.shape[0]) - X @ np.linalg.solve(gram, X.T)


def mean_squared_residuals(X, Y):
    """N^{-1} ||(I - H) y(s_v)||^2 per voxel, without any floor."""
    _, resid, _ = _ols_block(X, np.asarray(Y, dtype=np.float64))
    return np.einsum("nv,nv->v", resid, resid) / resid.shape[0]


def floor_variance(sigma2, floor=VAR_FLOOR):
    return np.maximum(sigma2, floor)


def initial_variance(ds) -> np.ndarray:
    """Per-voxel mean squared OLS residual, floored at ``VAR_FLOOR``."""
    return floor_variance(mean_squared_residuals(ds.X, ds.Y))


def mua(ds) -> MuaResult:
    """Per-voxel OLS with conventional (N - J) standard errors and Z-statistics."""
    X, Y = ds.X, ds.Y
    _check_design(X, extra_dof=1)
    coef, resid, gram_inv = _ols_block(X, Y)
    N, J = X.shape
    rss = np.einsum("nv,nv->v", resid, resid)
    s2 = rss / (N - J)
    se = np.sqrt(np.outer(np.diag(gram_inv), s2))
    degenerate = se == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        z = coef / se
    # exact fits: signed infinity, or 0 when the coefficient is exactly 0 too
    z[degenerate] = np.copysign(np.inf, coef[degenerate])
    z[degenerate & (coef == 0)] = 0.0
    return MuaResult(coef, se, z, floor_variance(rss / N), degenerate)


# ---------------------------------------------------------------------------
# Lasso

def soft_threshold(u, t):
    return np.sign(u) * np.maximum(np.abs(u) - t, 0.0)


def lambda_max(X, Y):
    """Smallest penalty with an all-zero solution, per voxel: max_j |X_j'y| / N."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    return np.max(np.abs(X.T @ Y), axis=0) / X.shape[0]


def lasso_objective(X, y, coef, lam):
    r = y - X @ coef
    return (r @ r) / (2 * X.shape[0]) + lam * np.abs(coef).sum()


def lasso_block(X, Y, lam, tol=1e-8, max_sweeps=10_000, history=None):
    """Cyclic coordinate descent for many independent Lasso problems at once.

    Solves ``min (2N)^{-1} ||y - X b||^2 + lam ||b||_1`` for every column of
    ``Y`` (shape ``N x P``) with its own penalty ``lam`` (scalar or length P).
    Works on the Gram form, so each sweep costs O(J^2 P).
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    N, J = X.shape
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (Y.shape[1],))
    if np.any(lam < 0):
        raise InvalidArgumentError("lambda must be non-negative")
    gram = X.T @ X / N
    xty = X.T @ Y / N
    diag = np.diag(gram)
    coef = np.zeros((J, Y.shape[1]))
    active = diag > 0
    for _ in range(max_sweeps):
        max_change = 0.0
        for j in np.flatnonzero(active):
            # partial residual correlation excluding coordinate j
            rho = xty[j] - gram[j] @ coef + diag[j] * coef[j]
            new = soft_threshold(rho, lam) / diag[j]
            change = np.max(np.abs(new - coef[j])) if new.size else 0.0
            max_change = max(max_change, change)
            coef[j] = new
        if history is not None:
            history.append(coef.copy())
        if max_change < tol:
            break
    return coef


def lasso_voxel(X, y, lam, tol=1e-8, max_sweeps=10_000):
    y = np.asarray(y, dtype=np.float64)
    return lasso_block(X, y[:, None], lam, tol, max_sweeps)[:, 0]


def default_lambda_grid(X, Y, n_lambdas=50, ratio=1e-4):
    """Per-voxel log-spaced grids from ratio * lambda_max up to lambda_max (V x n)."""
    lmax = lambda_max(X, Y)
    steps = np.logspace(np.log10(ratio), 0.0, n_lambdas)
    return lmax[:, None] * steps[None, :]


def fold_ids(N, folds):
    """Contiguous, near-equal folds over subjects 0..N-1."""
    return np.repeat(np.arange(folds), np.diff(np.linspace(0, N, folds + 1).round().astype(int)))


def cv_errors(X, Y, lambda_grid, folds=5):
    """K-fold CV mean squared prediction error, shape V x n_lambdas."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    N, V = Y.shape
    L = lambda_grid.shape[1]
    ids = fold_ids(N, folds)
    sse = np.zeros((V, L))
    # every (voxel, lambda) pair is an independent column
    lam_flat = lambda_grid.reshape(-1)
    for k in range(folds):
        test = ids == k
        Xtr, Xte = X[~test], X[test]
        Ytr = np.repeat(Y[~test], L, axis=1)
        coef = lasso_block(Xtr, Ytr, lam_flat)
        pred = Xte @ coef
        resid = np.repeat(Y[test], L, axis=1) - pred
        sse += np.einsum("nc,nc->c", resid, resid).reshape(V, L)
    return sse / N


def lower_median(values):
    s = np.sort(np.asarray(values))
    return float(s[(len(s) - 1) // 2])


def select_lambda(ds, folds=5, lambda_grid=None):
    """Median over voxels of the CV-optimal voxel-wise Lasso penalty.

    ``lambda_grid`` is a shared list of penalties; when omitted each voxel
    gets its own 50-point grid below its lambda_max. Ties go to the
    smaller penalty; an even voxel count takes the lower median.
    """
    X, Y = ds.X, ds.Y
    N, V = Y.shape
    if folds < 2 or N < folds:
        raise InvalidArgumentError(f"need 2 <= folds <= N, got folds={folds}, N={N}")
    if lambda_grid is None:
        grid = default_lambda_grid(X, Y)
    else:
        g = np.asarray(lambda_grid, dtype=np.float64).ravel()
        if g.size == 0:
            raise InvalidArgumentError("lambda grid is empty")
        if np.any(g < 0):
            raise InvalidArgumentError("lambda grid must be non-negative")
        grid = np.broadcast_to(np.sort(g), (V, g.size))
    err = cv_errors(X, Y, grid, folds)
    # argmin over ascending grid returns the first (smallest) minimiser
    best = grid[np.arange(V), np.argmin(err, axis=1)]
    return lower_median(best)
