"""Three-step image-on-scalar fit with coordinate networks.

Step 1 fits the main effects with a variance-weighted, L1-penalised network
and hard-thresholds them; step 2 fits the per-subject deviations to what is
left; step 3 fits the log noise variance to the updated mean squared
residuals. Each step runs exactly once.
"""
from __future__ import annotations

import contextlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import norm

from . import linmod
from ._seeds import derive_seed
from .errors import FormatError, InvalidArgumentError, IRRNNError
from .grid import (VoxelGrid, grid_from_manifest, grid_manifest, read_array,
                   read_manifest, write_array, write_manifest)
from .nn import NetConfig, TrainSpec, forward, init_net, load_net, save_net, train

NETS = ("beta", "alpha", "sigma")


@dataclass(frozen=True)
class FitConfig:
    """Architecture, optimiser and tuning settings.

    ``lam`` and ``eta`` left as ``None`` are tuned from the data (voxel-wise
    Lasso CV and the MUA significance count respectively).
    """

    hidden_layers: int = 4
    hidden_width: int = 64
    activation: str = "relu"
    train: TrainSpec = field(default_factory=TrainSpec)
    lam: float = None
    eta: tuple = None
    alpha_level: float = 0.05
    cv_folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.lam is not None and not (np.isfinite(self.lam) and self.lam >= 0):
            raise InvalidArgumentError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.eta is not None:
            eta = tuple(float(e) for e in np.atleast_1d(self.eta))
            if any(not np.isfinite(e) or e < 0 for e in eta):
                raise InvalidArgumentError(f"eta entries must be finite and >= 0, got {eta}")
            object.__setattr__(self, "eta", eta)
        if not 0 < self.alpha_level < 1:
            raise InvalidArgumentError("alpha_level must lie in (0, 1)")
        NetConfig(1, self.hidden_layers, self.hidden_width, 1, self.activation)

    def net_config(self, which, input_dim, output_dim) -> NetConfig:
        k = NETS.index(which)
        return NetConfig(input_dim, self.hidden_layers, self.hidden_width, output_dim,
                         self.activation, derive_seed(self.seed, 0, k))

    def train_spec(self, which) -> TrainSpec:
        k = NETS.index(which)
        return replace(self.train, seed=derive_seed(self.train.seed, 1, k))


@dataclass(eq=False)
class FitResult:
    grid: VoxelGrid
    beta_tilde: np.ndarray
    beta_hat: np.ndarray
    alpha_hat: np.ndarray
    sigma2_tilde: np.ndarray
    sigma2_bar: np.ndarray
    sigma2_hat: np.ndarray
    nets: dict
    lam: float
    eta: np.ndarray
    tuned: dict = field(default_factory=dict)

    def predict(self, X):
        """Population-level images X beta_hat for new covariate rows."""
        return np.asarray(X, dtype=np.float64) @ self.beta_hat


@contextlib.contextmanager
def _stage(label):
    try:
        yield
    except IRRNNError as exc:
        exc.stage = label
        if exc.args:
            exc.args = (f"[{label}] {exc.args[0]}",) + exc.args[1:]
        raise


# ---------------------------------------------------------------------------
# step 1

def _rms(a) -> float:
    r = float(np.sqrt(np.mean(np.square(a)))) if np.size(a) else 0.0
    return r if np.isfinite(r) and r > 0 else 1.0


def main_effect_scale(X, Y) -> float:
    """Typical coefficient size: RMS of the minimum-norm least-squares fit (1 if that is 0)."""
    coef = np.linalg.lstsq(np.asarray(X, dtype=np.float64), Y, rcond=None)[0]
    return _rms(coef)


def main_effect_loss(X, Y, sigma2_tilde, lam, scale=1.0):
    """Loss on net outputs ``o`` with ``b = scale * o``, and its gradient in ``o``.

    The objective per voxel is ``||y_v - X b_v||^2 / s2_v + lam ||b_v||_1``.
    The batch mean is divided by the constant ``N c``, where
    ``c = scale^2 * mean(1 / s2) * max eig(X'X / N)``. That constant does not
    move the minimiser. It gives the loss unit curvature in ``o``, so one
    step size works whatever the units of Y or the noise level. The Gram
    form keeps a batch at O(B J^2).
    """
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    gram = X.T @ X
    xty = (X.T @ Y).T.copy()
    yty = np.einsum("nv,nv->v", Y, Y)
    w = 1.0 / linmod.floor_variance(np.asarray(sigma2_tilde, dtype=np.float64))
    top = float(np.linalg.eigvalsh(gram / N)[-1]) if gram.size else 0.0
    norm_c = N * scale**2 * float(np.mean(w)) * (top if top > 0 else 1.0)

    def loss(idx, out):
        B = out.shape[0]
        b = scale * out
        gb = b @ gram
        data = (yty[idx] - 2 * np.einsum("bj,bj->b", b, xty[idx])
                + np.einsum("bj,bj->b", gb, b)) * w[idx]
        value = float(np.mean(data + lam * np.abs(b).sum(axis=1))) / norm_c
        grad = (2 * (gb - xty[idx]) * w[idx, None] + lam * np.sign(b)) * (scale / (B * norm_c))
        return value, grad

    return loss


def _fold_scale(net, scale):
    """Multiply the output layer so the net returns ``scale * o`` directly."""
    net.weights[-1] *= scale
    net.biases[-1] *= scale
    return net


def fit_main_effect(ds, sigma2_tilde, cfg: FitConfig):
    """Train the main-effect net; returns ``(net, beta_tilde)`` with beta_tilde J x V."""
    lam = 0.0 if cfg.lam is None else cfg.lam
    scale = main_effect_scale(ds.X, ds.Y)
    net = init_net(cfg.net_config("beta", ds.grid.D, ds.J))
    loss = main_effect_loss(ds.X, ds.Y, sigma2_tilde, lam, scale)
    net = _fold_scale(train(net, ds.grid.coords, cfg.train_spec("beta"), loss), scale)
    return net, forward(net, ds.grid.coords).T.copy()


def hard_threshold(beta_tilde, eta):
    """Zero every entry with |beta_tilde[j, v]| <= eta[j]."""
    beta_tilde = np.asarray(beta_tilde, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64).reshape(-1)
    if eta.shape[0] != beta_tilde.shape[0]:
        raise InvalidArgumentError(f"need {beta_tilde.shape[0]} thresholds, got {eta.shape[0]}")
    if np.any(eta < 0):
        raise InvalidArgumentError("thresholds must be non-negative")
    return np.where(np.abs(beta_tilde) > eta[:, None], beta_tilde, 0.0)


def significance_counts(z, alpha_level=0.05):
    """Per covariate, the number of voxels with |Z| above the two-sided critical value."""
    crit = norm.ppf(1 - alpha_level / 2)
    return np.sum(np.abs(z) > crit, axis=1)


def threshold_for_count(magnitudes, m):
    """Largest-convention order statistic leaving at most ``m`` values strictly above it."""
    a = np.sort(np.asarray(magnitudes, dtype=np.float64))
    V = a.size
    if m <= 0:
        return float(a[-1])
    if m >= V:
        return 0.0
    return float(a[V - m - 1])


def select_eta(beta_tilde, mua_result, alpha_level=0.05):
    beta_tilde = np.asarray(beta_tilde)
    if mua_result.z.shape != beta_tilde.shape:
        raise InvalidArgumentError("Z-map and beta_tilde shapes differ")
    counts = significance_counts(mua_result.z, alpha_level)
    return np.array([threshold_for_count(np.abs(b), m) for b, m in zip(beta_tilde, counts)])


# ---------------------------------------------------------------------------
# steps 2 and 3

def deviation_loss(target, sigma2_tilde, scale=1.0):
    """Loss on outputs ``o`` with ``a = scale * o``; ``target`` is the N x V image Y - X beta_hat.

    The batch mean of ``||t_v - a_v||^2 / s2_v`` is divided by the constant
    ``N scale^2 mean(1 / s2)``, as for the main effect.
    """
    T = np.asarray(target, dtype=np.float64).T.copy()
    N = T.shape[1]
    w = 1.0 / linmod.floor_variance(np.asarray(sigma2_tilde, dtype=np.float64))
    norm_c = N * scale**2 * float(np.mean(w))

    def loss(idx, out):
        r = T[idx] - scale * out
        value = float(np.mean(np.sum(r * r, axis=1) * w[idx])) / norm_c
        return value, r * (-2.0 * scale / (out.shape[0] * norm_c)) * w[idx, None]

    return loss


def fit_individual_deviation(ds, beta_hat, sigma2_tilde, cfg: FitConfig):
    target = ds.Y - ds.X @ beta_hat
    scale = _rms(target)
    net = init_net(cfg.net_config("alpha", ds.grid.D, ds.N))
    net = train(net, ds.grid.coords, cfg.train_spec("alpha"),
                deviation_loss(target, sigma2_tilde, scale))
    net = _fold_scale(net, scale)
    return net, forward(net, ds.grid.coords).T.copy()


def variance_scale(sigma2_bar):
    return max(float(np.mean(sigma2_bar)), linmod.VAR_FLOOR)


def log_variance_loss(sigma2_bar):
    """Batch mean of (s2_v - exp(out_v))^2 / m^2 with m the mean of ``sigma2_bar``.

    Dividing by the constant m^2 makes the objective unit-free without moving
    its minimiser.
    """
    s2 = np.asarray(sigma2_bar, dtype=np.float64)
    scale = 1.0 / variance_scale(s2) ** 2

    def loss(idx, out):
        e = np.exp(out[:, 0])
        r = s2[idx] - e
        value = float(np.mean(r * r)) * scale
        return value, (r * e * (-2.0 * scale / out.shape[0]))[:, None]

    return loss


def fit_noise_variance(ds, beta_hat, alpha_hat, cfg: FitConfig):
    """Returns ``(net, sigma2_bar, sigma2_hat)``."""
    resid = ds.Y - ds.X @ beta_hat - alpha_hat
    sigma2_bar = np.einsum("nv,nv->v", resid, resid) / ds.N
    net = init_net(cfg.net_config("sigma", ds.grid.D, 1))
    # start from the constant fit log(mean residual variance)
    net.biases[-1][:] = np.log(variance_scale(sigma2_bar))
    net = train(net, ds.grid.coords, cfg.train_spec("sigma"), log_variance_loss(sigma2_bar))
    sigma2_hat = np.exp(forward(net, ds.grid.coords)[:, 0])
    return net, sigma2_bar, sigma2_hat


# ---------------------------------------------------------------------------

def fit(ds, cfg: FitConfig = None) -> FitResult:
    """Run the full pipeline once: variance, lambda, beta, eta, threshold, alpha, sigma^2."""
    cfg = FitConfig() if cfg is None else cfg
    tuned = {}
    with _stage("step 1: initial variance"):
        sigma2_tilde = linmod.initial_variance(ds)
    lam = cfg.lam
    if lam is None:
        with _stage("step 1: lambda selection"):
            lam = linmod.select_lambda(ds, folds=cfg.cv_folds)
        tuned["lam"] = True
        cfg = replace(cfg, lam=lam)
    with _stage("step 1: main effect"):
        net_beta, beta_tilde = fit_main_effect(ds, sigma2_tilde, cfg)
    if cfg.eta is None:
        with _stage("step 1: eta selection"):
            eta = select_eta(beta_tilde, linmod.mua(ds), cfg.alpha_level)
        tuned["eta"] = True
    else:
        eta = np.asarray(cfg.eta, dtype=np.float64)
        if eta.size == 1 and ds.J > 1:
            eta = np.full(ds.J, eta[0])
    with _stage("step 1: thresholding"):
        beta_hat = hard_threshold(beta_tilde, eta)
    with _stage("step 2: individual deviation"):
        net_alpha, alpha_hat = fit_individual_deviation(ds, beta_hat, sigma2_tilde, cfg)
    with _stage("step 3: noise variance"):
        net_sigma, sigma2_bar, sigma2_hat = fit_noise_variance(ds, beta_hat, alpha_hat, cfg)
    return FitResult(ds.grid, beta_tilde, beta_hat, alpha_hat, sigma2_tilde, sigma2_bar,
                     sigma2_hat, {"beta": net_beta, "alpha": net_alpha, "sigma": net_sigma},
                     float(lam), eta, tuned)


# ---------------------------------------------------------------------------
# persistence

_FIT_ARRAYS = ("beta_tilde", "beta_hat", "alpha_hat", "sigma2_tilde", "sigma2_bar",
               "sigma2_hat")


def save_fit(result: FitResult, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    J, V = result.beta_hat.shape
    arrays = {name: write_array(path, name, getattr(result, name)) for name in _FIT_ARRAYS}
    arrays["eta"] = write_array(path, "eta", result.eta)
    for name, net in result.nets.items():
        save_net(net, path / f"net_{name}")
    manifest = {"format": "irrnn-fit", "version": 1, "byte_order": "little",
                "element_type": "float64", "J": J, "N": result.alpha_hat.shape[0],
                "lambda": result.lam, "eta": [float(e) for e in result.eta],
                "tuned": sorted(k for k, v in result.tuned.items() if v),
                "nets": {name: f"net_{name}" for name in result.nets},
                "arrays": arrays, **grid_manifest(result.grid)}
    write_manifest(path, manifest)


def load_fit(path) -> FitResult:
    path = Path(path)
    m = read_manifest(path, "irrnn-fit")
    grid = grid_from_manifest(m)
    J, N, V = m.get("J"), m.get("N"), grid.V
    if not all(isinstance(n, int) and n >= 1 for n in (J, N)):
        raise FormatError("J and N must be positive integers", "J")
    shapes = {"beta_tilde": (J, V), "beta_hat": (J, V), "alpha_hat": (N, V),
              "sigma2_tilde": (V,), "sigma2_bar": (V,), "sigma2_hat": (V,)}
    arrays = m.get("arrays")
    if not isinstance(arrays, dict):
        raise FormatError("missing array table", "arrays")
    values = {}
    for name, shape in shapes.items():
        if name not in arrays:
            raise FormatError("array missing from manifest", name)
        values[name] = read_array(path, arrays[name], name, shape)
    eta = read_array(path, arrays.get("eta"), "eta", (J,))
    lam = m.get("lambda")
    if not isinstance(lam, (int, float)) or isinstance(lam, bool):
        raise FormatError(f"must be a number, got {lam!r}", "lambda")
    nets = {}
    net_dirs = m.get("nets", {})
    for name in NETS:
        if name not in net_dirs:
            raise FormatError(f"network {name!r} missing", "nets")
        nets[name] = load_net(path / net_dirs[name])
    tuned = {k: True for k in m.get("tuned", [])}
    return FitResult(grid, nets=nets, lam=float(lam), eta=eta, tuned=tuned, **values)


def fit_summary(result: FitResult) -> str:
    return json.dumps({"lambda": result.lam, "eta": [float(e) for e in result.eta]})
