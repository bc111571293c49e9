"""Acceptance criteria 1-11; each test prints one PASS/FAIL line."""
import contextlib
import json
import time

import numpy as np
import pytest
from scipy.stats import norm

from irrnn.bench import Cell, run_replication
from irrnn.cli import main
from irrnn.estimator import FitConfig, fit, hard_threshold, load_fit, save_fit
from irrnn.grid import load_dataset, save_dataset
from irrnn.linmod import lambda_max, lasso_voxel, mua, ols_voxel
from irrnn.metrics import median_iqr, roc_auc
from irrnn.nn import NetConfig, TrainSpec, backward, forward, init_net
from irrnn.simgen import SimConfig, component_variances, generate, standard_noise

from conftest import ACCEPTANCE_LINES
from oracles import auc_pairs, median_iqr_sorted, ols_normal_equations
from test_nn import fd_gradient, flat

REPS = 10


@contextlib.contextmanager
def criterion(number, label):
    info = {}
    t0 = time.perf_counter()
    try:
        yield info
    except BaseException as exc:
        line = f"criterion {number}: FAIL  {label}  ({type(exc).__name__}: {exc})"
        ACCEPTANCE_LINES.append(line.splitlines()[0])
        print(line)
        raise
    detail = info.get("detail", "")
    line = f"criterion {number}: PASS  {label}  [{time.perf_counter() - t0:.1f}s] {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


# -- 1 -------------------------------------------------------------------------

LOSSES = {
    "squared": (lambda o, t: np.sum((o - t) ** 2), lambda o, t: 2 * (o - t)),
    "logcosh": (lambda o, t: np.sum(np.log(np.cosh(o - t))), lambda o, t: np.tanh(o - t)),
    "linear": (lambda o, t: np.sum(o * t), lambda o, t: t),
}


def test_criterion_01_gradients():
    with criterion(1, "analytic vs finite-difference gradients, 100 triples") as info:
        rng = np.random.default_rng(2024)
        t0 = time.perf_counter()
        worst = 0.0
        for k in range(100):
            cfg = NetConfig(int(rng.integers(1, 4)), int(rng.integers(1, 4)),
                            int(rng.integers(2, 9)), int(rng.integers(1, 4)),
                            ["relu", "sigmoid"][k % 2], int(rng.integers(1 << 30)))
            net = init_net(cfg)
            for b in net.biases:
                b[:] = rng.normal(scale=0.3, size=b.shape)
            s = rng.uniform(-1, 1, size=cfg.input_dim)
            target = rng.normal(size=cfg.output_dim)
            f, df = LOSSES[list(LOSSES)[k % 3]]
            upstream = df(forward(net, s), target)
            analytic = flat(backward(net, s, upstream))
            # finite differences of the composed scalar loss
            theta = net.parameters()
            numeric = np.empty_like(theta)
            probe = net.copy()
            h = 1e-6
            for i in range(theta.size):
                t = theta.copy()
                t[i] += h
                probe.set_parameters(t)
                up = f(forward(probe, s), target)
                t[i] -= 2 * h
                probe.set_parameters(t)
                numeric[i] = (up - f(forward(probe, s), target)) / (2 * h)
            assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-8), k
            scale = np.maximum(np.abs(numeric), 1e-3)
            worst = max(worst, float(np.max(np.abs(analytic - numeric) / scale)))
        elapsed = time.perf_counter() - t0
        assert elapsed < 10
        info["detail"] = f"max rel err {worst:.1e}"


# -- 2 -------------------------------------------------------------------------

def test_criterion_02_linear_model_oracles():
    with criterion(2, "OLS / Lasso oracles") as info:
        rng = np.random.default_rng(7)
        t0 = time.perf_counter()
        ols_err = lasso_err = 0.0
        for _ in range(100):
            X = rng.normal(size=(50, 3))
            y = X @ rng.normal(size=3) + rng.normal(size=50)
            coef = ols_voxel(X, y)[0]
            ols_err = max(ols_err, np.max(np.abs(coef - ols_normal_equations(X, y))))
            lasso_err = max(lasso_err, np.max(np.abs(lasso_voxel(X, y, 0.0) - coef)))
            lmax = lambda_max(X, y[:, None])[0]
            for lam in (lmax, 2 * lmax):
                assert np.all(lasso_voxel(X, y, lam) == 0.0)
        assert ols_err < 1e-10 and lasso_err < 1e-6
        assert time.perf_counter() - t0 < 10
        info["detail"] = f"OLS err {ols_err:.1e}, lasso(0) err {lasso_err:.1e}"


# -- 3 -------------------------------------------------------------------------

def test_criterion_03_metric_oracles():
    with criterion(3, "AUC and median/IQR oracles") as info:
        rng = np.random.default_rng(3)
        t0 = time.perf_counter()
        for k in range(100):
            n = int(rng.integers(4, 60))
            labels = rng.random(n) < 0.4
            labels[:2] = [True, False]
            # half the sets are tie-free, half use a coarse score lattice
            scores = rng.normal(size=n) if k % 2 else rng.integers(0, 4, n).astype(float)
            got, want = roc_auc(scores, labels), auc_pairs(scores, labels)
            if k % 2:
                assert got == want
            else:
                assert got == pytest.approx(want, abs=1e-12)
            vals = rng.normal(size=int(rng.integers(1, 30)))
            assert median_iqr(vals) == pytest.approx(median_iqr_sorted(vals), abs=1e-12)
        assert time.perf_counter() - t0 < 5


# -- 4 -------------------------------------------------------------------------

def test_criterion_04_simulation_calibration():
    with criterion(4, "variance ratio 0.2:0.5:1.0 and chi-square standardisation") as info:
        worst = 0.0
        for seed in range(20):
            ds, truth = generate(SimConfig(dims=(32, 32, 8), N=50, seed=seed))
            main_v, dev_v, err_v = component_variances(ds.X, truth)
            rel = np.abs(np.array([main_v, dev_v, err_v]) / err_v / [0.2, 0.5, 1.0] - 1)
            worst = max(worst, float(rel.max()))
        assert worst < 0.10
        z = standard_noise("chisq3", 10**6, np.random.default_rng(0))
        assert abs(z.mean()) < 0.01 and abs(z.var() - 1) < 0.01
        info["detail"] = (f"worst ratio error {worst:.1e}; chisq mean {z.mean():.4f}, "
                          f"var {z.var():.4f}")


# -- 5 to 9: desk-scale simulation study ---------------------------------------

ARCHS = {"4x64": (4, 64), "2x64": (2, 64), "6x64": (6, 64), "4x16": (4, 16)}


def _run_cell(dims, noise, arch="4x64", methods=("mua", "irrnn")):
    layers, width = ARCHS[arch]
    params = dict(hidden_layers=layers, hidden_width=width)
    cell = Cell(20, dims, noise)
    out = {m: [] for m in methods}
    seconds = []
    for rep in range(REPS):
        t0 = time.perf_counter()
        res = run_replication(cell, rep, 0, methods, irrnn_params=params)
        seconds.append(time.perf_counter() - t0)
        for m in methods:
            if isinstance(res[m], Exception):
                raise res[m]
            out[m].append(res[m])
    return out, max(seconds)


class Study:
    def __init__(self):
        self._cache = {}

    def cell(self, dims, noise="gaussian", arch="4x64"):
        key = (dims, noise, arch)
        if key not in self._cache:
            methods = ("mua", "irrnn") if arch == "4x64" else ("irrnn",)
            self._cache[key] = _run_cell(dims, noise, arch, methods)
        return self._cache[key][0]

    def max_seconds(self, dims, noise="gaussian", arch="4x64"):
        self.cell(dims, noise, arch)
        return self._cache[(dims, noise, arch)][1]


@pytest.fixture(scope="session")
def study():
    return Study()


def _med(reports, name="mse_beta"):
    return median_iqr([getattr(r, name) for r in reports])


DIMS = [(16, 16, 8), (32, 32, 8)]


@pytest.mark.slow
def test_criterion_05_estimation(study):
    with criterion(5, "IRRNN median beta-MSE <= 0.5 x MUA") as info:
        parts = []
        for dims in DIMS:
            cell = study.cell(dims)
            irr, mu = _med(cell["irrnn"])[0], _med(cell["mua"])[0]
            parts.append(f"{dims[0]}x{dims[1]}x{dims[2]}: {irr:.4f} vs {mu:.4f}")
            assert irr <= 0.5 * mu, parts[-1]
            assert study.max_seconds(dims) < 300
        info["detail"] = "; ".join(parts)


@pytest.mark.slow
def test_criterion_06_resolution_trend(study):
    with criterion(6, "IRRNN MSE at 32x32x8 <= MSE at 16x16x8 + IQR") as info:
        m16, iqr16 = _med(study.cell(DIMS[0])["irrnn"])
        m32, _ = _med(study.cell(DIMS[1])["irrnn"])
        info["detail"] = f"{m32:.4f} vs {m16:.4f} + {iqr16:.4f}"
        assert m32 <= m16 + iqr16, info["detail"]


@pytest.mark.slow
def test_criterion_07_selection(study):
    with criterion(7, "IRRNN FPR <= 0.10 and AUC >= MUA AUC - 0.02") as info:
        parts = []
        for dims in DIMS:
            cell = study.cell(dims)
            fpr = _med(cell["irrnn"], "fpr")[0]
            auc_i, auc_m = _med(cell["irrnn"], "auc")[0], _med(cell["mua"], "auc")[0]
            parts.append(f"{dims[0]}: fpr {fpr:.3f}, auc {auc_i:.3f} vs {auc_m:.3f}")
            assert fpr <= 0.10 and auc_i >= auc_m - 0.02, parts[-1]
        info["detail"] = "; ".join(parts)


@pytest.mark.slow
def test_criterion_08_noise_robustness(study):
    with criterion(8, "chi-square noise moves IRRNN MSE by <= 25%") as info:
        parts = []
        for dims in DIMS:
            g = _med(study.cell(dims)["irrnn"])[0]
            c = _med(study.cell(dims, "chisq3")["irrnn"])[0]
            parts.append(f"{dims[0]}: {c:.4f} vs {g:.4f} ({abs(c / g - 1):.0%})")
            assert abs(c - g) <= 0.25 * g, parts[-1]
        info["detail"] = "; ".join(parts)


@pytest.mark.slow
def test_criterion_09_architecture(study):
    with criterion(9, "architectures 2x64/4x64/6x64 within 30%; 4x16 beats MUA") as info:
        dims = DIMS[0]
        meds = {a: _med(study.cell(dims, arch=a)["irrnn"])[0] for a in ARCHS}
        mu = _med(study.cell(dims)["mua"])[0]
        main3 = [meds[a] for a in ("2x64", "4x64", "6x64")]
        info["detail"] = ", ".join(f"{a} {v:.4f}" for a, v in meds.items()) + f", mua {mu:.4f}"
        assert max(main3) <= 1.3 * min(main3), info["detail"]
        assert meds["4x16"] < mu, info["detail"]


# -- 10 ------------------------------------------------------------------------

def _files(d):
    return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file() and p.name != "run.log"}


def test_criterion_10_determinism(tmp_path):
    with criterion(10, "byte-identical reruns and exact round trips"):
        quick = ["--layers", "2", "--width", "32", "--epochs", "40"]
        for name in ("a", "b"):
            d = tmp_path / name
            assert main(["simulate", "--dims", "8,8,4", "--n", "12", "--seed", "5",
                         "--out", str(d / "data")]) == 0
            assert main(["fit", "--data", str(d / "data"), "--out", str(d / "fit"),
                         "--seed", "3", *quick]) == 0
            assert main(["evaluate", "--fit", str(d / "fit"), "--data", str(d / "data"),
                         "--out", str(d / "eval"), "--slices", str(d / "slices")]) == 0
            assert main(["benchmark", "--reps", "2", "--n", "10", "--dims", "6,6,2",
                         "--out", str(d / "bench"), *quick]) == 0
        assert _files(tmp_path / "a") == _files(tmp_path / "b")
        ds = load_dataset(tmp_path / "a" / "data")
        save_dataset(ds, tmp_path / "copy")
        assert load_dataset(tmp_path / "copy") == ds
        res = load_fit(tmp_path / "a" / "fit")
        save_fit(res, tmp_path / "fitcopy")
        assert _files(tmp_path / "fitcopy") == _files(tmp_path / "a" / "fit")


# -- 11 ------------------------------------------------------------------------

def test_criterion_11_pipeline_contracts():
    with criterion(11, "thresholding, support monotonicity, positivity, eta count; 20 fits"):
        crit = norm.ppf(0.975)
        cfg = FitConfig(hidden_layers=2, hidden_width=32,
                        train=TrainSpec(epochs=40, batch_size=64, learning_rate=0.2))
        for seed in range(20):
            ds, _ = generate(SimConfig(dims=(8, 8, 4), N=int(10 + seed % 5), seed=seed))
            res = fit(ds, FitConfig(**{**cfg.__dict__, "seed": seed}))
            once = hard_threshold(res.beta_tilde, res.eta)
            assert np.array_equal(once, res.beta_hat)
            assert np.array_equal(hard_threshold(once, res.eta), once)
            bigger = hard_threshold(res.beta_tilde, res.eta * 1.5 + 0.01)
            assert np.all((bigger != 0) <= (once != 0))
            assert np.all(res.sigma2_hat > 0)
            counts = np.sum(np.abs(mua(ds).z) > crit, axis=1)
            assert np.array_equal(np.sum(res.beta_hat != 0, axis=1), counts)
