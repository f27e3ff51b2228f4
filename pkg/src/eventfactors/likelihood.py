"""Smoothed pseudo-likelihood of a factor model on an event panel.

With smoothed rates yhat_ij(t_l) precomputed on the evaluation grid, the
criterion maximized by the fitting step is

    L = sum over observed cells (i, j) and grid times t_l of
        yhat_ij(t_l) * log f(X_ij(t_l)) - f(X_ij(t_l)),

the kernel-weighted Poisson log likelihood without its data-only term.
No grid-spacing factor multiplies the sum; the rank-selection penalties
are calibrated to this unscaled form.

All reductions are plain numpy sums over arrays in a fixed memory
layout, so repeated evaluations are bit-identical regardless of how many
worker threads the caller uses elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec, evaluation_interval, kernel_weight, normalizer
from .model import FactorModel, get_link

__all__ = [
    "SmoothedWeights",
    "precompute_weights",
    "log_pseudo_likelihood",
    "gradients",
]


@dataclass
class SmoothedWeights:
    """Smoothed rates yhat on a grid, with masked cells flagged absent.

    ``values[l, i, j]`` is the smoothed rate of cell (i, j) at grid time
    ``grid[l]``; masked-out cells hold NaN so accidental use poisons the
    result instead of silently contributing zeros.
    """

    values: np.ndarray
    grid: np.ndarray
    kernel: KernelSpec | None
    mask: np.ndarray | None = None
    _dense: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.grid = np.asarray(self.grid, dtype=np.float64).reshape(-1)
        if self.values.ndim != 3 or self.values.shape[0] != self.grid.size:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid"
            )
        if self.mask is not None:
            self.mask = np.asarray(self.mask).astype(bool)
            if self.mask.shape != self.values.shape[1:]:
                raise ValueError("mask shape does not match panel")

    @property
    def n_units(self) -> int:
        return self.values.shape[1]

    @property
    def n_types(self) -> int:
        return self.values.shape[2]

    def dense(self) -> tuple[np.ndarray, np.ndarray | None]:
        """(values with masked cells zeroed, float mask or None)."""
        if self._dense is None:
            if self.mask is None:
                self._dense = (self.values, None)
            else:
                w0 = np.where(self.mask[None, :, :], self.values, 0.0)
                self._dense = (w0, self.mask.astype(np.float64)[None, :, :])
        return self._dense


def precompute_weights(panel, spec: KernelSpec, grid: np.ndarray) -> SmoothedWeights:
    """Smoothed rates for every cell at every grid time.

    Events are pooled across cells and scattered back per grid time, so
    the cost is O(q * events-in-window) instead of O(q * N * J * events).
    Agrees with per-cell evaluation of the same sums to within floating
    point reordering.
    """
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    lo, hi = evaluation_interval(spec)
    eps = 1e-12
    if grid.size < 1 or grid[0] < lo - eps or grid[-1] > hi + eps:
        raise ValueError(f"grid must lie inside the evaluation interval [{lo}, {hi}]")
    n_units, n_types = panel.n_units, panel.n_types
    times, cells = panel.flattened()
    # Outside this radius the kernel is zero (Epanechnikov) or below
    # float resolution relative to its peak (Gaussian).
    radius = spec.h if spec.family == "epanechnikov" else 9.0 * spec.h
    q = grid.size
    values = np.zeros((q, n_units, n_types), dtype=np.float64)
    norms = normalizer(spec, grid)
    size = n_units * n_types
    for l, t in enumerate(grid):
        a = np.searchsorted(times, t - radius, side="left")
        b = np.searchsorted(times, t + radius, side="right")
        if b > a:
            w = kernel_weight(spec, t - times[a:b])
            values[l] = np.bincount(
                cells[a:b], weights=w, minlength=size
            ).reshape(n_units, n_types)
        values[l] /= norms[l]
    mask = panel.mask
    if mask is not None:
        values[:, ~mask] = np.nan
    return SmoothedWeights(values=values, grid=grid, kernel=spec, mask=mask)


def x_surface(theta: np.ndarray, loadings: np.ndarray) -> np.ndarray:
    """Log-rate surfaces X(t_l) = Theta(t_l) A' stacked as (q, N, J)."""
    q, n, r = theta.shape
    return (theta.reshape(q * n, r) @ loadings.T).reshape(q, n, loadings.shape[0])


def objective_arrays(weights: SmoothedWeights, theta, loadings, link) -> tuple:
    """Objective value plus the rate surface it was computed from.

    Returns (L, X, F) with F = f(X); callers reuse F for the gradient at
    an accepted iterate, which is the hot path of the optimizer.
    """
    w0, maskf = weights.dense()
    x = x_surface(theta, loadings)
    fx = link.f(x)
    terms = w0 * link.logf(x) - fx
    if maskf is not None:
        terms = terms * maskf
    val = float(terms.sum())
    return val, x, fx


def gradient_arrays(weights: SmoothedWeights, theta, loadings, link,
                    fx: np.ndarray, x: np.ndarray) -> tuple:
    """Gradients of the objective at (theta, loadings).

    Returns (d_theta, d_loadings) with shapes matching the inputs.
    """
    w0, maskf = weights.dense()
    resid = link.residual(w0, x, fx)
    if maskf is not None:
        resid = resid * maskf
    q, n, r = theta.shape
    j = loadings.shape[0]
    flat = resid.reshape(q * n, j)
    d_theta = (flat @ loadings).reshape(q, n, r)
    d_loadings = flat.T @ theta.reshape(q * n, r)
    return d_theta, d_loadings


def log_pseudo_likelihood(weights: SmoothedWeights, model: FactorModel) -> float:
    """Smoothed pseudo-likelihood of a model given precomputed weights."""
    _check_compatible(weights, model)
    val, _, _ = objective_arrays(weights, model.theta, model.loadings, model.link)
    return val


def gradients(weights: SmoothedWeights, model: FactorModel) -> tuple:
    """Objective gradients with respect to theta (q, N, r) and loadings (J, r)."""
    _check_compatible(weights, model)
    link = model.link
    _, x, fx = objective_arrays(weights, model.theta, model.loadings, link)
    return gradient_arrays(weights, model.theta, model.loadings, link, fx, x)


def _check_compatible(weights: SmoothedWeights, model: FactorModel):
    if weights.values.shape != (model.grid.size, model.n_units, model.n_types):
        raise ValueError(
            f"weights shape {weights.values.shape} does not match model "
            f"({model.grid.size}, {model.n_units}, {model.n_types})"
        )
    if not np.allclose(weights.grid, model.grid, rtol=0.0, atol=1e-12):
        raise ValueError("weights and model evaluated on different grids")
