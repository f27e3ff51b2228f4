"""Time-varying factor models for event-rate surfaces.

The log intensity surface of a panel is modeled as X(t) = Theta(t) A',
with unit factors Theta(t) of shape (N, r) evaluated on a fixed time
grid and static type loadings A of shape (J, r).  The occurrence rate of
cell (i, j) is f(X_ij(t)) for a known positive link f.  Every row of
Theta(t_l) and of A is constrained to the Euclidean ball of radius
sqrt(bound); that two-to-infinity bound is what the fitting step
projects onto.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ExpLink",
    "get_link",
    "FactorModel",
    "project_rows",
    "max_row_norm",
    "save_model",
    "load_model",
]

# Row-norm bounds above this make exp(x) overflow float64 at the corner
# of the feasible set, so configs must reject them.
MAX_SAFE_BOUND = 700.0


class ExpLink:
    """Exponential link: rate f(x) = exp(x)."""

    name = "exp"

    @staticmethod
    def f(x):
        return np.exp(x)

    @staticmethod
    def fprime(x):
        return np.exp(x)

    @staticmethod
    def logf(x):
        return np.asarray(x, dtype=np.float64)

    @staticmethod
    def score(w, x):
        """d/dx of w * log f(x) - f(x)."""
        return w - np.exp(x)

    @staticmethod
    def residual(w, x, fx):
        """Same score given precomputed rates fx = f(x)."""
        return w - fx


_LINKS = {"exp": ExpLink()}


def get_link(name: str) -> ExpLink:
    try:
        return _LINKS[name]
    except KeyError:
        raise ValueError(f"unknown link {name!r}") from None


def project_rows(mat: np.ndarray, bound: float) -> np.ndarray:
    """Scale rows of ``mat`` (along the last axis) into the sqrt(bound) ball.

    Rows already inside the ball are returned unchanged, so the
    projection is idempotent and exact for feasible input.
    """
    radius = np.sqrt(bound)
    norms = np.linalg.norm(mat, axis=-1, keepdims=True)
    scale = np.where(norms > radius, radius / np.maximum(norms, 1e-300), 1.0)
    return mat * scale


def max_row_norm(mat: np.ndarray) -> float:
    """Largest Euclidean row norm along the last axis."""
    return float(np.linalg.norm(mat, axis=-1).max())


@dataclass
class FactorModel:
    """Fitted or true factor structure on a time grid.

    Parameters
    ----------
    grid : ndarray, shape (q,)
        Strictly increasing evaluation times inside [0, 1], q >= 2.
    theta : ndarray, shape (q, N, r)
        Unit factors at each grid time.
    loadings : ndarray, shape (J, r)
        Static type loadings.
    link_name : str
        Name of the positive link, currently only "exp".
    bound : float
        Squared row-norm bound M; rows live in the sqrt(M) ball.
    """

    grid: np.ndarray
    theta: np.ndarray
    loadings: np.ndarray
    link_name: str = "exp"
    bound: float = 36.0

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64).reshape(-1)
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.loadings = np.asarray(self.loadings, dtype=np.float64)
        self.validate()

    def validate(self):
        q = self.grid.size
        if q < 2:
            raise ValueError(f"grid needs at least 2 points, got {q}")
        if self.grid[0] < 0.0 or self.grid[-1] > 1.0:
            raise ValueError("grid times must lie in [0, 1]")
        if np.any(np.diff(self.grid) <= 0.0):
            raise ValueError("grid times must be strictly increasing")
        if self.theta.ndim != 3 or self.theta.shape[0] != q:
            raise ValueError(f"theta shape {self.theta.shape} does not match grid")
        if self.loadings.ndim != 2:
            raise ValueError("loadings must be 2-d")
        if self.theta.shape[2] != self.loadings.shape[1]:
            raise ValueError("theta and loadings disagree on rank")
        if not (np.isfinite(self.theta).all() and np.isfinite(self.loadings).all()):
            raise ValueError("model parameters must be finite")
        if self.bound <= 0.0 or self.bound > MAX_SAFE_BOUND:
            raise ValueError(f"bound must lie in (0, {MAX_SAFE_BOUND}]")
        radius = np.sqrt(self.bound) + 1e-9
        if max_row_norm(self.theta) > radius or max_row_norm(self.loadings) > radius:
            raise ValueError("row norms exceed sqrt(bound)")
        get_link(self.link_name)

    @property
    def n_units(self) -> int:
        return self.theta.shape[1]

    @property
    def n_types(self) -> int:
        return self.loadings.shape[0]

    @property
    def rank(self) -> int:
        return self.loadings.shape[1]

    @property
    def link(self) -> ExpLink:
        return get_link(self.link_name)

    def x_at_grid(self, l: int) -> np.ndarray:
        """Log-rate surface X(t_l) = Theta(t_l) A' as an (N, J) array."""
        return self.theta[l] @ self.loadings.T

    def theta_at_time(self, t: float) -> np.ndarray:
        """Unit factors at an arbitrary time by linear interpolation.

        Times outside the grid are clamped to the nearest endpoint.
        """
        g = self.grid
        if t <= g[0]:
            return self.theta[0]
        if t >= g[-1]:
            return self.theta[-1]
        l = int(np.searchsorted(g, t, side="right")) - 1
        l = min(l, g.size - 2)
        w = (t - g[l]) / (g[l + 1] - g[l])
        return (1.0 - w) * self.theta[l] + w * self.theta[l + 1]

    def x_at_time(self, t: float) -> np.ndarray:
        return self.theta_at_time(t) @ self.loadings.T

    def x_interp(self, i: int, j: int, t: float) -> float:
        """Interpolated log rate of one cell at one time."""
        return float(self.theta_at_time(t)[i] @ self.loadings[j])


def save_model(model: FactorModel, path) -> None:
    """Write the model as JSON with exact round-trip floats."""
    obj = {
        "grid": model.grid.tolist(),
        "theta": model.theta.tolist(),
        "loadings": model.loadings.tolist(),
        "link": model.link_name,
        "bound_m": float(model.bound),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def load_model(path) -> FactorModel:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("static"):
        raise ValueError(
            f"{path} holds a static fit; load it with the static-model reader"
        )
    return FactorModel(
        grid=np.asarray(obj["grid"], dtype=np.float64),
        theta=np.asarray(obj["theta"], dtype=np.float64),
        loadings=np.asarray(obj["loadings"], dtype=np.float64),
        link_name=obj.get("link", "exp"),
        bound=float(obj.get("bound_m", 36.0)),
    )
