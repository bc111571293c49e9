"""Estimation and selection accuracy, plus median/IQR aggregation."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidArgumentError, UndefinedMetricError


@dataclass
class MetricsReport:
    mse_beta: float = np.nan
    mse_alpha: float = np.nan
    mse_sigma2: float = np.nan
    auc: float = np.nan
    fpr: float = np.nan
    tpr: float = np.nan
    sign_error: float = np.nan
    recon_mse: float = np.nan

    def as_dict(self):
        return asdict(self)


METRIC_NAMES = tuple(f.name for f in fields(MetricsReport))


def mse_field(est, truth) -> float:
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise InvalidArgumentError(f"shape mismatch: {est.shape} vs {truth.shape}")
    return float(np.mean((est - truth) ** 2))


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=bool).ravel()
    if scores.shape != labels.shape:
        raise InvalidArgumentError("scores and labels differ in length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def selection_rates(beta_hat, support):
    """Pooled (fpr, tpr) of the nonzero pattern of ``beta_hat`` against ``support``."""
    selected = np.asarray(beta_hat) != 0
    support = np.asarray(support, dtype=bool)
    if selected.shape != support.shape:
        raise InvalidArgumentError("beta_hat and support shapes differ")
    n_pos = support.sum()
    n_neg = support.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("selection rates need both signal and null voxels")
    fpr = np.sum(selected & ~support) / n_neg
    tpr = np.sum(selected & support) / n_pos
    return float(fpr), float(tpr)


def sign_error(beta_hat, beta) -> float:
    """Average over voxels of the number of covariates whose signs disagree."""
    beta_hat = np.asarray(beta_hat)
    beta = np.asarray(beta)
    if beta_hat.shape != beta.shape:
        raise InvalidArgumentError("shape mismatch")
    beta_hat = beta_hat.reshape(-1, beta.shape[-1]) if beta.ndim > 1 else beta_hat[None]
    beta = beta.reshape(beta_hat.shape)
    return float(np.sum(np.sign(beta_hat) != np.sign(beta)) / beta.shape[1])


def recon_mse(beta_hat, X_test, Y_test, alpha_hat=None) -> float:
    """Mean squared error of reconstructing held-out images from beta_hat.

    ``alpha_hat`` is only meaningful when the test subjects are the training
    subjects themselves.
    """
    beta_hat = np.asarray(beta_hat, dtype=np.float64)
    X_test = np.asarray(X_test, dtype=np.float64)
    Y_test = np.asarray(Y_test, dtype=np.float64)
    if beta_hat.shape[1] != Y_test.shape[1] or X_test.shape[1] != beta_hat.shape[0]:
        raise InvalidArgumentError("test data do not match the fitted grid or covariates")
    pred = X_test @ beta_hat
    if alpha_hat is not None:
        pred = pred + alpha_hat
    return float(np.mean((Y_test - pred) ** 2))


def fit_recon_mse(fit, test_ds, with_alpha=False) -> float:
    if fit.grid.dims != test_ds.grid.dims:
        raise InvalidArgumentError(
            f"test grid {test_ds.grid.dims} differs from fit grid {fit.grid.dims}")
    return recon_mse(fit.beta_hat, test_ds.X, test_ds.Y,
                     fit.alpha_hat if with_alpha else None)


def evaluate(beta_hat, truth, scores=None, alpha_hat=None, sigma2_hat=None) -> MetricsReport:
    """Truth-based metrics; ``scores`` (default |beta_hat|) drive the ROC curve."""
    rep = MetricsReport()
    rep.mse_beta = mse_field(beta_hat, truth.beta)
    if alpha_hat is not None:
        rep.mse_alpha = mse_field(alpha_hat, truth.alpha)
    if sigma2_hat is not None:
        rep.mse_sigma2 = mse_field(sigma2_hat, truth.sigma2)
    scores = np.abs(beta_hat) if scores is None else scores
    rep.auc = roc_auc(scores, truth.support)
    rep.fpr, rep.tpr = selection_rates(beta_hat, truth.support)
    rep.sign_error = sign_error(beta_hat, truth.beta)
    return rep


def evaluate_fit(fit, truth) -> MetricsReport:
    return evaluate(fit.beta_hat, truth, scores=np.abs(fit.beta_tilde),
                    alpha_hat=fit.alpha_hat, sigma2_hat=fit.sigma2_hat)


# ---------------------------------------------------------------------------

def median_iqr(values):
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise InvalidArgumentError("no values to aggregate")
    q1, med, q3 = np.percentile(v, [25, 50, 75], method="linear")
    return float(med), float(q3 - q1)


def aggregate(reports):
    """``{metric: (median, iqr)}`` over reports; NaN-only metrics stay NaN."""
    reports = list(reports)
    if not reports:
        raise InvalidArgumentError("cannot aggregate an empty list of reports")
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        vals = vals[np.isfinite(vals)]
        out[name] = median_iqr(vals) if vals.size else (np.nan, np.nan)
    return out


CSV_COLUMNS = ("method", "N", "dims", "noise", "metric", "median", "iqr")


def format_number(x) -> str:
    return "nan" if not np.isfinite(x) else f"{x:.12g}"


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([row[c] if c not in ("median", "iqr") else format_number(row[c])
                         for c in CSV_COLUMNS])
    return buf.getvalue()


def read_csv_rows(text):
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        row["N"] = int(row["N"])
        row["median"] = float(row["median"])
        row["iqr"] = float(row["iqr"])
        rows.append(row)
    return rows


def format_table(rows, scale=1.0) -> str:
    """Aligned text table: one line per (cell, method), ``median (iqr)`` per metric."""
    metrics = [m for m in METRIC_NAMES if any(r["metric"] == m and np.isfinite(r["median"])
                                              for r in rows)]
    keyed = {}
    for r in rows:
        keyed.setdefault((r["N"], r["dims"], r["noise"], r["method"]), {})[r["metric"]] = r
    header = ["N", "dims", "noise", "method"] + metrics
    lines = [header]
    for key in keyed:
        cells = [str(k) for k in key]
        for m in metrics:
            r = keyed[key].get(m)
            if r is None or not np.isfinite(r["median"]):
                cells.append("-")
            else:
                cells.append(f"{r['median'] * scale:.4g} ({r['iqr'] * scale:.2g})")
        lines.append(cells)
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(line, widths)) for line in lines) + "\n"
