"""Replicated simulation studies: simulate, fit, score, aggregate.

A study is a list of cells, each naming a truth setting, a dependence
regime, panel dimensions, and a replication count.  Every replication
draws its own truth and panel from substreams of the study seed keyed
by (cell index, replication index), fits the kernel estimator and
optionally the static baseline and rank selection, and reports the
estimation errors.

Replications are independent, so they may run in a process pool.  Each
replication's numerics are pinned to one BLAS thread and the result
rows are assembled in (cell, replication) order, which makes the study
output a pure function of its config regardless of worker count.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from .analyze import estimation_error
from .kernels import KernelSpec
from .optimize import FitConfig, auto_bandwidth, fit
from .selection import PenaltySpec, SelectConfig, select_rank
from .simulate import (
    TruthSpec,
    generate_truth,
    make_blocks,
    power_third_phi,
    simulate_dependent,
    simulate_independent,
)
from .static import fit_static

__all__ = ["StudyCell", "StudyConfig", "run_study", "RESULT_COLUMNS",
           "SUMMARY_COLUMNS"]

RESULT_COLUMNS = [
    "cell", "setting", "case", "regime", "n_units", "n_types", "rep",
    "truth_seed", "sim_seed", "bandwidth", "kernel_error", "baseline_error",
    "selected_rank", "kernel_objective", "kernel_iterations",
    "kernel_converged", "error",
]

SUMMARY_COLUMNS = [
    "cell", "setting", "case", "regime", "n_units", "n_types",
    "replications", "n_failed", "mean_kernel_error", "mean_baseline_error",
    "n_rank_correct", "n_rank_over", "n_rank_under",
]


@dataclass(frozen=True)
class StudyCell:
    """One (setting, case, regime, size) combination to replicate."""

    setting: str
    case: str
    regime: str
    n_units: int
    n_types: int
    replications: int
    rank: int = 3
    baseline: bool = True
    select: bool = False
    candidates: tuple = (1, 2, 3, 4, 5)

    def __post_init__(self):
        if self.regime not in ("independent", "dependent"):
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.replications < 1:
            raise ValueError("replications must be positive")
        object.__setattr__(self, "candidates", tuple(int(c) for c in self.candidates))


@dataclass(frozen=True)
class StudyConfig:
    seed: int
    cells: tuple
    fit: FitConfig = field(default_factory=FitConfig)
    kernel_family: str = "epanechnikov"
    error_points: int = 901

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        if not self.cells:
            raise ValueError("study needs at least one cell")


def _replication_seeds(config: StudyConfig, cell_idx: int, rep: int) -> tuple:
    """Truth and panel seeds for one replication, derived from the study seed."""
    ss = np.random.SeedSequence(entropy=config.seed, spawn_key=(cell_idx, rep))
    truth_seed, sim_seed = (int(v) for v in ss.generate_state(2, dtype=np.uint64))
    return truth_seed, sim_seed


def run_replication(config: StudyConfig, cell_idx: int, rep: int) -> dict:
    """Simulate and score one replication; failures become row errors."""
    cell = config.cells[cell_idx]
    truth_seed, sim_seed = _replication_seeds(config, cell_idx, rep)
    row = {
        "cell": cell_idx,
        "setting": cell.setting,
        "case": cell.case,
        "regime": cell.regime,
        "n_units": cell.n_units,
        "n_types": cell.n_types,
        "rep": rep,
        "truth_seed": truth_seed,
        "sim_seed": sim_seed,
        "bandwidth": "",
        "kernel_error": "",
        "baseline_error": "",
        "selected_rank": "",
        "kernel_objective": "",
        "kernel_iterations": "",
        "kernel_converged": "",
        "error": "",
    }
    try:
        with threadpool_limits(limits=1):
            _run_one(config, cell, truth_seed, sim_seed, row)
    except Exception as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _run_one(config: StudyConfig, cell: StudyCell, truth_seed: int,
             sim_seed: int, row: dict) -> None:
    truth = generate_truth(TruthSpec(
        setting=cell.setting,
        case=cell.case,
        n_units=cell.n_units,
        n_types=cell.n_types,
        rank=cell.rank,
        seed=truth_seed,
    ))
    if cell.regime == "dependent":
        blocks = make_blocks(cell.n_types)
        panel = simulate_dependent(truth, blocks, sim_seed)
        h = auto_bandwidth(cell.n_units, cell.n_types, "dependent",
                           phi=power_third_phi(cell.n_types))
        penalty = PenaltySpec.dependent_default()
    else:
        panel = simulate_independent(truth, sim_seed)
        h = auto_bandwidth(cell.n_units, cell.n_types, "independent")
        penalty = PenaltySpec.independent_default()
    kernel = KernelSpec(bandwidth=h, family=config.kernel_family)
    fit_cfg = replace(config.fit, rank=cell.rank, bandwidth="auto")
    row["bandwidth"] = h
    if cell.select:
        sel = select_rank(panel, kernel, SelectConfig(
            penalty=penalty, candidates=cell.candidates, fit=fit_cfg,
        ))
        row["selected_rank"] = sel.rank
        result = sel.fits[sel.rank]
    else:
        result = fit(panel, kernel, fit_cfg)
    row["kernel_error"] = estimation_error(
        truth, result.model, h, config.error_points
    ).mse_integral
    row["kernel_objective"] = result.objective
    row["kernel_iterations"] = result.iterations
    row["kernel_converged"] = result.converged
    if cell.baseline:
        sfit = fit_static(panel, fit_cfg)
        row["baseline_error"] = estimation_error(
            truth, sfit.as_model((h, 1.0 - h)), h, config.error_points
        ).mse_integral


def run_study(config: StudyConfig, threads: int = 1) -> tuple[list, list]:
    """All replications of all cells; returns (rows, summary rows).

    ``threads`` sets the worker process count; results are identical
    for any value because rows are computed independently with pinned
    numeric threads and assembled in (cell, replication) order.
    """
    tasks = [
        (idx, rep)
        for idx, cell in enumerate(config.cells)
        for rep in range(cell.replications)
    ]
    if threads <= 1:
        rows = [run_replication(config, idx, rep) for idx, rep in tasks]
    else:
        try:
            ctx = multiprocessing.get_context("fork")
        except ValueError:
            ctx = multiprocessing.get_context("spawn")
        with ctx.Pool(processes=threads) as pool:
            rows = pool.starmap(
                _worker, [(config, idx, rep) for idx, rep in tasks], chunksize=1
            )
    return rows, summarize(config, rows)


def _worker(config: StudyConfig, cell_idx: int, rep: int) -> dict:
    return run_replication(config, cell_idx, rep)


def summarize(config: StudyConfig, rows: list) -> list:
    """Per-cell means and rank-selection tallies over clean replications."""
    out = []
    for idx, cell in enumerate(config.cells):
        mine = [r for r in rows if r["cell"] == idx]
        clean = [r for r in mine if not r["error"]]
        kernel_errors = [r["kernel_error"] for r in clean if r["kernel_error"] != ""]
        base_errors = [r["baseline_error"] for r in clean if r["baseline_error"] != ""]
        picked = [r["selected_rank"] for r in clean if r["selected_rank"] != ""]
        out.append({
            "cell": idx,
            "setting": cell.setting,
            "case": cell.case,
            "regime": cell.regime,
            "n_units": cell.n_units,
            "n_types": cell.n_types,
            "replications": len(mine),
            "n_failed": len(mine) - len(clean),
            "mean_kernel_error": (
                float(np.mean(kernel_errors)) if kernel_errors else ""
            ),
            "mean_baseline_error": (
                float(np.mean(base_errors)) if base_errors else ""
            ),
            "n_rank_correct": sum(1 for r in picked if r == cell.rank),
            "n_rank_over": sum(1 for r in picked if r > cell.rank),
            "n_rank_under": sum(1 for r in picked if r < cell.rank),
        })
    return out
