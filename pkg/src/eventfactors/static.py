"""Static factor baseline: constant log rates fitted to total counts.

Ignoring time structure, the total count of cell (i, j) is Poisson with
rate f(X_ij) for a constant surface X = Theta A'.  Maximizing the count
log likelihood over the same row-norm ball reuses the projected gradient
machinery with a single pseudo-time point whose weights are the raw
counts.  The predicted surface is constant in t.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .events import EventPanel
from .likelihood import SmoothedWeights
from .model import FactorModel
from .optimize import FitConfig, _run

__all__ = ["StaticFit", "fit_static", "save_static", "load_static"]

# Placeholder grid time for serialization; a static fit has no grid.
_SENTINEL_TIME = 0.5


@dataclass
class StaticFit:
    """Constant-rate factor fit with the optimizer's diagnostics."""

    theta: np.ndarray
    loadings: np.ndarray
    objective_trace: np.ndarray
    iterations: int
    converged: bool
    final_gradient_norm: float
    stalled: bool = False
    bound: float = 36.0
    link_name: str = "exp"

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])

    def x_surface(self) -> np.ndarray:
        return self.theta @ self.loadings.T

    def as_model(self, interval: tuple[float, float] = (0.25, 0.75)) -> FactorModel:
        """The constant fit as a two-point FactorModel for shared metrics."""
        lo, hi = interval
        theta = np.broadcast_to(
            self.theta, (2,) + self.theta.shape
        ).copy()
        return FactorModel(
            grid=np.array([lo, hi]),
            theta=theta,
            loadings=self.loadings,
            link_name=self.link_name,
            bound=self.bound,
        )


def fit_static(panel: EventPanel, config: FitConfig) -> StaticFit:
    """Fit the constant-rate factor model to the panel's total counts.

    Uses the config's rank, bound, and optimizer knobs; kernel settings
    are irrelevant here and ignored.
    """
    counts = panel.counts().astype(np.float64)
    values = counts[None, :, :].copy()
    if panel.mask is not None:
        values[:, ~panel.mask] = np.nan
    weights = SmoothedWeights(
        values=values,
        grid=np.array([_SENTINEL_TIME]),
        kernel=None,
        mask=panel.mask,
    )
    with threadpool_limits(limits=1):
        raw = _run(weights, config)
    return StaticFit(
        theta=raw.theta[0],
        loadings=raw.loadings,
        objective_trace=raw.trace,
        iterations=raw.trace.size - 1,
        converged=raw.converged,
        final_gradient_norm=raw.gradient_norm,
        stalled=raw.stalled,
        bound=config.bound,
        link_name=config.link_name,
    )


def save_static(fit: StaticFit, path) -> None:
    """Write the static fit in the model JSON schema with a static marker."""
    obj = {
        "static": True,
        "grid": [_SENTINEL_TIME],
        "theta": fit.theta[None, :, :].tolist(),
        "loadings": fit.loadings.tolist(),
        "link": fit.link_name,
        "bound_m": float(fit.bound),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def load_static(path) -> StaticFit:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not obj.get("static"):
        raise ValueError(f"{path} is not a static fit")
    theta = np.asarray(obj["theta"], dtype=np.float64)
    if theta.ndim != 3 or theta.shape[0] != 1:
        raise ValueError("static theta must have a single time slice")
    return StaticFit(
        theta=theta[0],
        loadings=np.asarray(obj["loadings"], dtype=np.float64),
        objective_trace=np.array([np.nan]),
        iterations=0,
        converged=True,
        final_gradient_norm=np.nan,
        bound=float(obj.get("bound_m", 36.0)),
        link_name=obj.get("link", "exp"),
    )
