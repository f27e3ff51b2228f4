"""Rank selection by penalized pseudo-likelihood comparison.

For each candidate rank r the model is fitted and scored by

    IC(r) = -2 L(r) + c * r * N * J * h**p,

with (c, p) = (40, 1.99) calibrated for within-block dependent panels
and (4000, 3.99) for fully independent ones.  The selected rank
minimizes IC, with ties broken toward the smaller rank.  Smoothed
weights are computed once and shared across candidates, which is where
almost all of the avoidable cost sits.

Candidates are fitted incrementally: each rank starts from the previous
rank's fitted model padded with a small random extra column.  The
penalty scale assumes exactly this.  An extra factor beyond the true
rank can always buy a likelihood gain far above the penalty by bending
its column into sampling noise, but reaching that gain from a small
random column takes the optimizer through a long flat stretch, and the
relative-improvement stop fires first.  A real factor instead pulls the
new column up within a handful of iterations, because the column only
has to align with a direction in which the gradient is already large.
Fitting every rank from scratch breaks this: a fresh factorization of
the smoothed data hands each extra column its noise gain up front.

Whether the new column grew is observable, so the scan checks it: a
padded fit whose new columns stay at the pad scale has expressed no new
factor and is retried with fresh columns a few times.  Real factors
escape within an attempt or two; noise columns stall on every attempt,
which is what keeps the likelihood path flat beyond the true rank.

A factor can still slip through every retry at its own rank and then
surface at a higher one.  A backward pass catches this: walking the
candidates downward, each rank is compared against the next higher fit
truncated to its size (dropping the columns with the smallest norm
product, which is where stalled pads sit).  When the truncation alone
already beats the rank's own fit, a real factor was missed, and the
rank is refitted from the truncated model.  Noise cannot ride down this
path because noise columns never outgrow their pads at any rank.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .kernels import KernelSpec, make_grid
from .likelihood import SmoothedWeights, objective_arrays, precompute_weights
from .model import get_link
from .optimize import FitConfig, FitError, FitResult, fit_from_weights

__all__ = [
    "PenaltySpec",
    "SelectConfig",
    "SelectionResult",
    "penalty_value",
    "information_criterion",
    "select_rank",
    "select_rank_from_weights",
]

# A padded fit counts as having expressed a new factor when some new
# column's norm product grew by this factor over its pad.  Observed
# growth is ~1-3 for stalled columns and >1e4 for expressed ones, so
# the cut is not delicate.
_ESCAPE_GROWTH = 10.0


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty v(N, J, r) = coefficient * r * N * J * h**exponent."""

    coefficient: float
    exponent: float

    def __post_init__(self):
        if self.coefficient < 0.0:
            raise ValueError("penalty coefficient must be nonnegative")

    @classmethod
    def dependent_default(cls) -> "PenaltySpec":
        return cls(coefficient=40.0, exponent=1.99)

    @classmethod
    def independent_default(cls) -> "PenaltySpec":
        return cls(coefficient=4000.0, exponent=3.99)


def penalty_value(penalty: PenaltySpec, n_units: int, n_types: int,
                  rank: int, bandwidth: float) -> float:
    return (
        penalty.coefficient * rank * n_units * n_types
        * bandwidth ** penalty.exponent
    )


def information_criterion(fit_result: FitResult, penalty: PenaltySpec,
                          bandwidth: float) -> float:
    """-2 times the fitted pseudo-likelihood plus the rank penalty."""
    model = fit_result.model
    v = penalty_value(penalty, model.n_units, model.n_types, model.rank, bandwidth)
    return -2.0 * fit_result.objective + v


@dataclass(frozen=True)
class SelectConfig:
    """Candidate set, penalty, and the fit template applied per rank.

    ``warm_start`` picks how candidates beyond the first are
    initialized: ``"nested"`` grows each rank out of the previous fit
    (the calibrated default, see the module docstring), ``"fresh"``
    fits every rank from the template's own initializer.  ``pad_scale``
    sets the half-width of the uniform entries in the added columns and
    ``pad_attempts`` bounds the retries when the added columns fail to
    grow.
    """

    penalty: PenaltySpec
    candidates: tuple = (1, 2, 3, 4, 5)
    fit: FitConfig = field(default_factory=FitConfig)
    warm_start: str = "nested"
    pad_scale: float = 0.01
    pad_attempts: int = 8
    nesting_tol: float = 1e-6
    tie_tol: float = 1e-9
    retry_seed: int = 777

    def __post_init__(self):
        cands = tuple(int(r) for r in self.candidates)
        if not cands or any(r < 1 for r in cands):
            raise ValueError("candidates must be positive integers")
        if list(cands) != sorted(set(cands)):
            raise ValueError("candidates must be strictly ascending")
        if self.penalty.coefficient <= 0.0:
            raise ValueError("selection needs a positive penalty coefficient")
        if self.warm_start not in ("nested", "fresh"):
            raise ValueError(f"unknown warm start mode {self.warm_start!r}")
        if not self.pad_scale > 0.0:
            raise ValueError("pad scale must be positive")
        if self.pad_attempts < 1:
            raise ValueError("pad attempts must be positive")
        object.__setattr__(self, "candidates", cands)


@dataclass
class SelectionResult:
    rank: int
    table: list
    fits: dict


def select_rank(panel, kernel: KernelSpec, config: SelectConfig) -> SelectionResult:
    """Fit every candidate rank on shared weights and minimize IC."""
    grid = make_grid(kernel, config.fit.grid_size)
    weights = precompute_weights(panel, kernel, grid)
    return select_rank_from_weights(weights, config)


def select_rank_from_weights(weights: SmoothedWeights,
                             config: SelectConfig) -> SelectionResult:
    if weights.kernel is None:
        raise FitError("rank selection needs kernel-smoothed weights")
    bandwidth = weights.kernel.h
    limit = min(weights.n_units, weights.n_types)
    fits: dict[int, FitResult] = {}
    failures: dict[int, str] = {}
    prev = None
    for r in config.candidates:
        if r > limit:
            failures[r] = f"rank {r} exceeds min(N, J) = {limit}"
            continue
        cfg = replace(config.fit, rank=r)
        try:
            if prev is None or config.warm_start == "fresh":
                fits[r] = fit_from_weights(weights, cfg)
            else:
                fits[r] = _grown_fit(weights, cfg, prev, config)
        except FitError as exc:
            failures[r] = str(exc)
            continue
        prev = fits[r]
    if config.warm_start == "nested":
        _backward_repair(weights, config, fits)
    _enforce_nesting(weights, config, fits)
    table = []
    for r in config.candidates:
        if r in failures:
            table.append({"rank": r, "error": failures[r]})
            continue
        res = fits[r]
        pen = penalty_value(
            config.penalty, res.model.n_units, res.model.n_types, r, bandwidth
        )
        table.append({
            "rank": r,
            "log_likelihood": res.objective,
            "penalty": pen,
            "ic": -2.0 * res.objective + pen,
            "converged": res.converged,
            "iterations": res.iterations,
        })
    scored = [row for row in table if "ic" in row]
    if not scored:
        raise FitError(f"every candidate rank failed: {failures}")
    best_ic = min(row["ic"] for row in scored)
    r_hat = min(row["rank"] for row in scored if row["ic"] <= best_ic + config.tie_tol)
    return SelectionResult(rank=r_hat, table=table, fits=fits)


def _padded_start(model, rank: int, scale: float, rng) -> tuple:
    """The fitted model widened to ``rank`` with small random columns.

    Returns ((theta, loadings), pad_sizes) where pad_sizes[k] is the
    norm product of the k-th added column pair, the yardstick for
    deciding later whether that column grew.
    """
    extra = rank - model.rank
    q, n, _ = model.theta.shape
    theta_pad = rng.uniform(-scale, scale, size=(q, n, extra))
    load_pad = rng.uniform(-scale, scale, size=(model.n_types, extra))
    pad_sizes = np.array([
        np.linalg.norm(theta_pad[:, :, k]) * np.linalg.norm(load_pad[:, k])
        for k in range(extra)
    ])
    theta = np.concatenate([model.theta, theta_pad], axis=2)
    load = np.concatenate([model.loadings, load_pad], axis=1)
    return (theta, load), pad_sizes


def _column_growth(result: FitResult, base_rank: int, pad_sizes) -> float:
    """Largest factor by which an added column outgrew its pad."""
    theta = result.model.theta[:, :, base_rank:]
    load = result.model.loadings[:, base_rank:]
    growth = [
        np.linalg.norm(theta[:, :, k]) * np.linalg.norm(load[:, k]) / pad_sizes[k]
        for k in range(len(pad_sizes))
    ]
    return max(growth)


def _grown_fit(weights: SmoothedWeights, cfg: FitConfig, prev: FitResult,
               config: SelectConfig) -> FitResult:
    """Fit one candidate by growing the previous rank's fitted model."""
    best = None
    for attempt in range(config.pad_attempts):
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=config.retry_seed, spawn_key=(cfg.rank, attempt)
        ))
        start, pad_sizes = _padded_start(prev.model, cfg.rank, config.pad_scale, rng)
        result = fit_from_weights(weights, cfg, start=start)
        if best is None or result.objective > best.objective:
            best = result
        if _column_growth(result, prev.model.rank, pad_sizes) > _ESCAPE_GROWTH:
            break
    return best


def _truncated_start(model, rank: int) -> tuple:
    """The model's ``rank`` strongest column pairs, in original order."""
    strength = [
        np.linalg.norm(model.theta[:, :, k]) * np.linalg.norm(model.loadings[:, k])
        for k in range(model.rank)
    ]
    keep = sorted(np.argsort(strength)[::-1][:rank])
    return model.theta[:, :, keep], model.loadings[:, keep]


def _backward_repair(weights: SmoothedWeights, config: SelectConfig,
                     fits: dict) -> None:
    """Hand factors that surfaced late in the scan down to lower ranks.

    Descending through the candidates, each rank is refitted from the
    next higher fit truncated to its size, but only when that truncated
    start already scores above the rank's own fit, which happens only
    if the upward scan expressed a real factor at the higher rank that
    this rank missed.
    """
    ranks = sorted(fits)
    link = get_link(config.fit.link_name)
    for r, upper in zip(ranks[-2::-1], ranks[::-1]):
        theta, load = _truncated_start(fits[upper].model, r)
        start_obj = objective_arrays(weights, theta, load, link)[0]
        slack = config.nesting_tol * max(1.0, abs(fits[r].objective))
        if start_obj <= fits[r].objective + slack:
            continue
        refit = fit_from_weights(
            weights, replace(config.fit, rank=r), start=(theta, load)
        )
        if refit.objective > fits[r].objective:
            fits[r] = refit


def _enforce_nesting(weights: SmoothedWeights, config: SelectConfig,
                     fits: dict) -> None:
    """Repair fits that break the nesting monotonicity of L(r).

    A larger rank can represent any smaller-rank surface, so its fitted
    objective should not fall below the smaller rank's beyond optimizer
    tolerance.  When it does, the larger rank is refitted from the
    smaller fit padded with small random extra columns, and the better
    of the two fits is kept.
    """
    ranks = sorted(fits)
    for prev_r, r in zip(ranks, ranks[1:]):
        prev, cur = fits[prev_r], fits[r]
        slack = config.nesting_tol * max(1.0, abs(prev.objective))
        if cur.objective >= prev.objective - slack:
            continue
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=config.retry_seed, spawn_key=(r,))
        )
        start, _ = _padded_start(prev.model, r, config.pad_scale, rng)
        retried = fit_from_weights(weights, replace(config.fit, rank=r), start=start)
        if retried.objective > cur.objective:
            fits[r] = retried
