"""scikit-learn style estimators wrapping the fitting routines.

``fit(X, Y, grid=...)`` takes the N x J covariates and the N x V images;
``predict(X)`` returns population-level images ``X @ coef_``.
"""
from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.stats import norm
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import linmod
from .estimator import FitConfig, fit, significance_counts
from .grid import Dataset
from .nn import TrainSpec
from .validation import as_grid, check_covariates, check_images


class IRRNNRegressor(RegressorMixin, BaseEstimator):
    """Spatially varying coefficient regression with coordinate networks.

    Parameters
    ----------
    hidden_layers, hidden_width : int
        Depth and width shared by the three networks.
    activation : {"relu", "sigmoid"}
    epochs, batch_size, learning_rate, lr_decay, clip_norm : SGD schedule.
    lam : float or None
        L1 weight on the main-effect network output; ``None`` selects it by
        voxel-wise Lasso cross-validation.
    eta : sequence of float or None
        Per-covariate hard thresholds; ``None`` matches the number of
        significant MUA voxels at ``alpha_level``.
    random_state : int
        Master seed for initialisation and batch order.

    Attributes
    ----------
    coef_ : ndarray (J, V)
        Thresholded main effects.
    beta_tilde_, alpha_hat_, sigma2_hat_ : ndarray
    lambda_, eta_ : realised tuning values.
    result_ : FitResult
    """

    def __init__(self, hidden_layers=4, hidden_width=64, activation="relu", epochs=300,
                 batch_size=32, learning_rate=0.2, lr_decay=0.995, clip_norm=10.0, lam=None,
                 eta=None, alpha_level=0.05, cv_folds=5, random_state=0):
        self.hidden_layers = hidden_layers
        self.hidden_width = hidden_width
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.clip_norm = clip_norm
        self.lam = lam
        self.eta = eta
        self.alpha_level = alpha_level
        self.cv_folds = cv_folds
        self.random_state = random_state

    def to_config(self) -> FitConfig:
        seed = 0 if self.random_state is None else int(self.random_state)
        return FitConfig(
            hidden_layers=self.hidden_layers, hidden_width=self.hidden_width,
            activation=self.activation,
            train=TrainSpec(self.epochs, self.batch_size, self.learning_rate,
                            self.lr_decay, seed, self.clip_norm),
            lam=self.lam, eta=None if self.eta is None else tuple(np.atleast_1d(self.eta)),
            alpha_level=self.alpha_level, cv_folds=self.cv_folds, seed=seed)

    def fit(self, X, Y, grid=None):
        X = check_covariates(X)
        Y = check_images(Y, X.shape[0])
        grid = as_grid(grid, Y.shape[1])
        return self.fit_dataset(Dataset(grid, X, Y))

    def fit_dataset(self, ds):
        res = fit(ds, self.to_config())
        self.result_ = res
        self.grid_ = ds.grid
        self.n_features_in_ = ds.J
        self.coef_ = res.beta_hat
        self.beta_tilde_ = res.beta_tilde
        self.alpha_hat_ = res.alpha_hat
        self.sigma2_hat_ = res.sigma2_hat
        self.lambda_ = res.lam
        self.eta_ = res.eta
        return self

    @property
    def selection_scores_(self):
        check_is_fitted(self, "beta_tilde_")
        return np.abs(self.beta_tilde_)

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return check_covariates(X) @ self.coef_


def presmooth(Y, grid, sigma):
    """Gaussian smoothing of each image on its grid, truncated at 3 sigma.

    Weights are renormalised near the boundary, so a constant image stays
    constant.
    """
    if sigma <= 0:
        return np.asarray(Y, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    kw = dict(sigma=sigma, mode="constant", cval=0.0, truncate=3.0)
    mass = gaussian_filter(np.ones(grid.dims), **kw)
    out = np.empty_like(Y)
    for i, y in enumerate(Y):
        out[i] = (gaussian_filter(y.reshape(grid.dims), **kw) / mass).ravel()
    return out


class MassUnivariateRegressor(RegressorMixin, BaseEstimator):
    """Voxel-by-voxel OLS; optional Gaussian pre-smoothing (``smoothing_sigma`` in voxels).

    ``coef_`` holds the raw OLS estimates, ``selected_coef_`` those with
    |Z| above the two-sided ``alpha_level`` cut-off and zeros elsewhere.
    """

    def __init__(self, alpha_level=0.05, smoothing_sigma=0.0):
        self.alpha_level = alpha_level
        self.smoothing_sigma = smoothing_sigma

    def fit(self, X, Y, grid=None):
        X = check_covariates(X)
        Y = check_images(Y, X.shape[0])
        grid = as_grid(grid, Y.shape[1])
        return self.fit_dataset(Dataset(grid, X, Y))

    def fit_dataset(self, ds):
        Y = presmooth(ds.Y, ds.grid, self.smoothing_sigma)
        res = linmod.mua(Dataset(ds.grid, ds.X, Y))
        self.mua_ = res
        self.grid_ = ds.grid
        self.n_features_in_ = ds.J
        self.coef_ = res.beta_ols
        self.z_ = res.z
        self.se_ = res.se
        crit = norm.ppf(1 - self.alpha_level / 2)
        self.selected_coef_ = np.where(np.abs(res.z) > crit, res.beta_ols, 0.0)
        self.n_significant_ = significance_counts(res.z, self.alpha_level)
        return self

    @property
    def selection_scores_(self):
        check_is_fitted(self, "z_")
        return np.abs(self.z_)

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return check_covariates(X) @ self.coef_
