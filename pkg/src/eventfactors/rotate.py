"""Factor aggregation, varimax rotation, and subspace angle metrics.

A fitted factorization X(t) = Theta(t) A' is only identified up to an
invertible r x r transform, so for interpretation the pipeline first
re-expresses the fit in canonical coordinates through a thin SVD of the
aggregated surface Thetabar A' = U S V', taking canonical loadings
L = V S / sqrt(N), and then finds the orthogonal rotation of L that
maximizes the varimax simplicity criterion.  Both steps leave every
X(t_l) unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import FactorModel, max_row_norm

__all__ = [
    "RotationError",
    "RotationResult",
    "aggregate_factors",
    "varimax_criterion",
    "varimax",
    "rotate_model",
    "principal_angles",
    "rotate_fit",
]


class RotationError(ValueError):
    """Raised for rank-deficient inputs or singular transforms."""


@dataclass
class RotationResult:
    """Orthogonal rotation of the canonical factorization of a fit.

    ``rotated_theta`` and ``rotated_loadings`` reproduce the fitted
    X(t_l) exactly; ``q_matrix`` is the varimax rotation applied in the
    canonical coordinates.
    """

    q_matrix: np.ndarray
    rotated_loadings: np.ndarray
    rotated_theta: np.ndarray
    varimax_criterion: float


def aggregate_factors(model: FactorModel) -> np.ndarray:
    """Time-averaged factors: trapezoidal mean of Theta over the grid.

    Normalized by the grid span, so a constant path returns itself.
    """
    span = model.grid[-1] - model.grid[0]
    integral = np.trapezoid(model.theta, x=model.grid, axis=0)
    return integral / span


def varimax_criterion(loadings: np.ndarray) -> float:
    """Raw varimax simplicity: per-column variance of squared loadings.

    Computed as sum_k [ sum_j a_jk^4 - (sum_j a_jk^2)^2 / J ].
    """
    a2 = np.asarray(loadings, dtype=np.float64) ** 2
    j = a2.shape[0]
    return float((a2 * a2).sum() - ((a2.sum(axis=0) ** 2) / j).sum())


def varimax(loadings: np.ndarray, kaiser: bool = False, tol: float = 1e-10,
            max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Varimax rotation by pairwise Givens sweeps.

    Each update sets the exact optimal angle for one column pair, so the
    criterion is non-decreasing step by step; sweeps stop when a full
    pass improves it by less than ``tol``.  With ``kaiser`` set, rows
    are normalized to unit length for the rotation search and rescaled
    afterward.  Returns (rotated, Q) with rotated = loadings @ Q.
    """
    a = np.array(loadings, dtype=np.float64)
    if a.ndim != 2:
        raise RotationError("loadings must be 2-d")
    j, r = a.shape
    q = np.eye(r)
    if r < 2:
        return a, q
    scale = None
    if kaiser:
        scale = np.linalg.norm(a, axis=1, keepdims=True)
        scale[scale == 0.0] = 1.0
        a = a / scale
    lam = a.copy()
    crit = varimax_criterion(lam)
    for _ in range(max_sweeps):
        start = crit
        for p in range(r - 1):
            for s in range(p + 1, r):
                angle = _pair_angle(lam[:, p], lam[:, s], j)
                if angle == 0.0:
                    continue
                c, d = math.cos(angle), math.sin(angle)
                rot = np.array([[c, -d], [d, c]])
                cand = lam[:, [p, s]] @ rot
                old = lam[:, [p, s]].copy()
                lam[:, [p, s]] = cand
                new_crit = varimax_criterion(lam)
                if new_crit < crit:
                    lam[:, [p, s]] = old
                    continue
                crit = new_crit
                q[:, [p, s]] = q[:, [p, s]] @ rot
        if crit - start <= tol:
            break
    # Rotating the Kaiser-normalized rows by Q and rescaling equals
    # rotating the original rows, so one return expression covers both.
    return np.asarray(loadings, dtype=np.float64) @ q, q


def _pair_angle(x: np.ndarray, y: np.ndarray, j: int) -> float:
    """Optimal varimax angle for one column pair (classical quartic form)."""
    u = x * x - y * y
    v = 2.0 * x * y
    su, sv = u.sum(), v.sum()
    num = 2.0 * ((u * v).sum() - su * sv / j)
    den = (u * u - v * v).sum() - (su * su - sv * sv) / j
    if num == 0.0 and den == 0.0:
        return 0.0
    return 0.25 * math.atan2(num, den)


def rotate_model(model: FactorModel, q: np.ndarray) -> FactorModel:
    """Change factor coordinates: loadings -> A Q, theta -> Theta (Q')^-1.

    The surface X(t_l) is preserved for any invertible Q.  A
    non-orthogonal Q can push factor rows outside the model's norm ball,
    in which case the stored bound is enlarged to keep the rotated model
    valid; orthogonal rotations preserve row norms and the bound.
    """
    q = np.asarray(q, dtype=np.float64)
    r = model.rank
    if q.shape != (r, r):
        raise RotationError(f"rotation must be {r}x{r}, got {q.shape}")
    try:
        q_inv_t = np.linalg.inv(q).T
    except np.linalg.LinAlgError:
        raise RotationError("rotation matrix is singular") from None
    new_theta = model.theta @ q_inv_t
    new_load = model.loadings @ q
    needed = max(max_row_norm(new_theta), max_row_norm(new_load)) ** 2
    bound = max(model.bound, needed * (1.0 + 1e-12))
    return FactorModel(
        grid=model.grid.copy(),
        theta=new_theta,
        loadings=new_load,
        link_name=model.link_name,
        bound=bound,
    )


def principal_angles(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Principal angles between the column spaces of two matrices.

    Returns (angles, sines) with angles ascending in [0, pi/2].  Both
    inputs must have full column rank; the result is unchanged by
    right-multiplying either argument by an invertible matrix.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise RotationError("arguments must be matrices with equal row counts")
    basis = []
    for mat in (a, b):
        qm, rm = np.linalg.qr(mat)
        diag = np.abs(np.diag(rm))
        if mat.shape[1] == 0 or diag.min() <= 1e-12 * max(diag.max(), 1e-300):
            raise RotationError("rank-deficient argument")
        basis.append(qm)
    cosines = np.linalg.svd(basis[0].T @ basis[1], compute_uv=False)
    cosines = np.clip(cosines, 0.0, 1.0)
    angles = np.arccos(cosines)
    return angles, np.sqrt(np.maximum(0.0, 1.0 - cosines * cosines))


def rotate_fit(model: FactorModel, kaiser: bool = False) -> RotationResult:
    """Canonicalize a fit by thin SVD and varimax-rotate its loadings.

    The aggregated surface Thetabar A' = U S V' defines canonical
    loadings L = V S / sqrt(N) and canonical factors X(t_l) V S^-1
    sqrt(N); varimax then picks the orthogonal Q for L.  Requires the
    aggregated factors to have full rank r.
    """
    n = model.n_units
    r = model.rank
    theta_bar = aggregate_factors(model)
    xbar = theta_bar @ model.loadings.T
    u, s, vt = np.linalg.svd(xbar, full_matrices=False)
    if s[r - 1] <= 1e-12 * max(s[0], 1e-300):
        raise RotationError("aggregated factors are rank deficient")
    v = vt[:r].T
    s = s[:r]
    canon_load = v * (s / math.sqrt(n))
    rotated_load, q = varimax(canon_load, kaiser=kaiser)
    q_pts = model.grid.size
    rotated_theta = np.empty((q_pts, n, r))
    back = v * (math.sqrt(n) / s)
    for l in range(q_pts):
        rotated_theta[l] = (model.theta[l] @ model.loadings.T) @ back @ q
    return RotationResult(
        q_matrix=q,
        rotated_loadings=rotated_load,
        rotated_theta=rotated_theta,
        varimax_criterion=varimax_criterion(rotated_load),
    )
