"""Evaluation against ground truth and descriptive analyses of fits.

Estimation error integrates the squared difference between the true and
fitted log-rate surfaces over the interior window [h, 1-h], normalized
per cell, which is the benchmark's accuracy metric.  The remaining
operations summarize a fit on its own: per-cell total variation of the
trajectory, its quartiles by named groups of event types, and an OLS
regression of per-unit factor scores on covariates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .model import FactorModel
from .rotate import principal_angles
from .simulate import TrueModel

__all__ = [
    "ErrorReport",
    "estimation_error",
    "loading_error",
    "total_variation",
    "total_variation_surface",
    "variability_quartiles",
    "factor_regression",
]


@dataclass
class ErrorReport:
    """Integrated squared error of a fitted surface against the truth."""

    mse_integral: float
    n_eval: int
    per_point: np.ndarray

    def __post_init__(self):
        if self.mse_integral < 0.0:
            raise ValueError("squared error cannot be negative")


def estimation_error(true_model: TrueModel, fitted: FactorModel,
                     bandwidth: float, n_eval: int = 901) -> ErrorReport:
    """Window-weighted mean squared error of the fitted log-rate surface.

    Evaluates the exact truth and the linearly interpolated fit on
    ``n_eval`` evenly spaced times spanning [h, 1-h] and returns
    (1 - 2h) * mean_t ||X*(t) - Xhat(t)||_F^2 / (N J), the Riemann
    approximation of the windowed integral.
    """
    n, j = true_model.n_units, true_model.n_types
    if (fitted.n_units, fitted.n_types) != (n, j):
        raise ValueError(
            f"fit is {fitted.n_units}x{fitted.n_types}, truth is {n}x{j}"
        )
    if n_eval < 2:
        raise ValueError("need at least two evaluation points")
    ts = np.linspace(bandwidth, 1.0 - bandwidth, n_eval)
    per_point = np.empty(n_eval)
    scale = 1.0 / (n * j)
    for k, t in enumerate(ts):
        diff = true_model.x_at_time(t) - fitted.x_at_time(float(t))
        per_point[k] = (diff * diff).sum() * scale
    mse = (1.0 - 2.0 * bandwidth) * per_point.mean()
    return ErrorReport(mse_integral=float(mse), n_eval=n_eval, per_point=per_point)


def loading_error(true_loadings: np.ndarray, fitted_loadings: np.ndarray) -> float:
    """Frobenius norm of the sines of the principal angles.

    Zero iff the two loading matrices span the same column space, which
    is all a factorization identifies about the loadings.
    """
    _, sines = principal_angles(true_loadings, fitted_loadings)
    return float(np.linalg.norm(sines))


def total_variation(fitted: FactorModel, i: int, j: int) -> float:
    """Total variation of cell (i, j)'s fitted log rate across the grid."""
    n, m = fitted.n_units, fitted.n_types
    if not (0 <= i < n and 0 <= j < m):
        raise IndexError(f"cell ({i}, {j}) outside panel ({n}, {m})")
    x = fitted.theta[:, i, :] @ fitted.loadings[j]
    return float(np.abs(np.diff(x)).sum())


def total_variation_surface(fitted: FactorModel) -> np.ndarray:
    """Total variation of every cell at once, shape (N, J)."""
    q = fitted.grid.size
    prev = fitted.x_at_grid(0)
    acc = np.zeros_like(prev)
    for l in range(1, q):
        cur = fitted.x_at_grid(l)
        acc += np.abs(cur - prev)
        prev = cur
    return acc


def variability_quartiles(fitted: FactorModel, groups: dict) -> dict:
    """Quartiles of total variation pooled per group of event types.

    ``groups`` maps type index -> group label.  For each label the total
    variations of all (unit, type) cells with that label are pooled and
    summarized by their 25/50/75 percent quantiles with the linear
    interpolation convention.
    """
    surface = total_variation_surface(fitted)
    members: dict[str, list] = {}
    for j, label in groups.items():
        if not 0 <= int(j) < fitted.n_types:
            raise IndexError(f"type {j} outside panel")
        members.setdefault(label, []).append(int(j))
    if not members:
        raise ValueError("no groups given")
    out = {}
    for label, cols in members.items():
        pooled = surface[:, cols].ravel()
        q25, q50, q75 = np.quantile(pooled, [0.25, 0.50, 0.75])
        out[label] = {"q25": float(q25), "q50": float(q50), "q75": float(q75)}
    return out


def factor_regression(scores: np.ndarray, design: dict) -> dict:
    """OLS of one factor's per-unit scores on named covariates.

    An intercept is always included.  Rows with a missing score or any
    missing covariate are dropped.  Returns coefficient, two-sided
    t-test p-value, and standard error per term, plus R squared.
    """
    y = np.asarray(scores, dtype=np.float64).reshape(-1)
    names = ["intercept"] + list(design)
    cols = [np.ones(y.size)]
    for name in design:
        col = np.asarray(design[name], dtype=np.float64).reshape(-1)
        if col.size != y.size:
            raise ValueError(f"covariate {name!r} has {col.size} rows, y has {y.size}")
        cols.append(col)
    x = np.column_stack(cols)
    keep = np.isfinite(y) & np.isfinite(x).all(axis=1)
    y, x = y[keep], x[keep]
    n, p = x.shape
    if n <= p:
        raise ValueError(f"{n} complete rows cannot identify {p} terms")
    q, r = np.linalg.qr(x)
    diag = np.abs(np.diag(r))
    if diag.min() <= 1e-10 * max(diag.max(), 1e-300):
        raise ValueError("design matrix is rank deficient")
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - x @ beta
    rss = float(resid @ resid)
    dof = n - p
    sigma2 = rss / dof
    r_inv = np.linalg.solve(r, np.eye(p))
    se = np.sqrt(sigma2 * (r_inv * r_inv).sum(axis=1))
    tstat = np.divide(beta, se, out=np.zeros_like(beta), where=se > 0)
    pvals = 2.0 * stats.t.sf(np.abs(tstat), dof)
    tss = float(((y - y.mean()) ** 2).sum())
    r_squared = 0.0 if tss == 0.0 else 1.0 - rss / tss
    return {
        "coefficients": dict(zip(names, beta.tolist())),
        "std_errors": dict(zip(names, se.tolist())),
        "p_values": dict(zip(names, pvals.tolist())),
        "r_squared": float(r_squared),
        "n_used": int(n),
    }
