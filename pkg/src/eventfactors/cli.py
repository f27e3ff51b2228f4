"""Command-line pipeline: simulate, fit, select-rank, rotate, evaluate,
analyze, and replicate-study.

Every command reads one JSON config, validates it strictly (unknown keys
are rejected), writes its outputs plus the resolved config into --out,
and is a pure function of (config, input files, --seed, --threads).
Tables are CSV with headers; event files are headerless CSV; models are
JSON.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .analyze import (
    estimation_error,
    factor_regression,
    loading_error,
    variability_quartiles,
)
from .events import EventDataError, load_events, save_events
from .kernels import KernelSpec
from .model import load_model, save_model
from .optimize import FitConfig, FitError, auto_bandwidth, fit
from .rotate import RotationError, rotate_fit
from .selection import PenaltySpec, SelectConfig, select_rank
from .simulate import (
    SimulationError,
    TruthSpec,
    generate_truth,
    make_blocks,
    power_third_phi,
    simulate_dependent,
    simulate_independent,
    truth_from_json,
    truth_to_json,
)
from .static import load_static
from .study import (
    RESULT_COLUMNS,
    SUMMARY_COLUMNS,
    StudyCell,
    StudyConfig,
    run_study,
)

__all__ = ["main"]


class ConfigError(ValueError):
    """Raised for malformed or incomplete command configs."""


# ---------------------------------------------------------------------------
# config plumbing

_KERNEL_KEYS = {"family", "bandwidth", "order", "epsilon"}
_FIT_KEYS = {
    "rank", "grid_size", "bound", "max_iters", "tol", "step0", "shrink",
    "armijo", "max_backtracks", "step_min", "step_max", "init",
    "init_seed", "init_offset", "link",
}
_SELECTION_KEYS = {"candidates", "penalty", "warm_start"}
_BLOCK_KEYS = {"rule", "sizes"}
_CELL_KEYS = {
    "setting", "case", "regime", "n_units", "n_types", "replications",
    "rank", "baseline", "select_rank", "candidates",
}

_SCHEMAS = {
    "simulate": {
        "setting", "case", "n_units", "n_types", "rank", "period", "seed",
        "regime", "blocks",
    },
    "fit": {"events", "n_units", "n_types", "regime", "phi", "kernel", "fit"},
    "select-rank": {
        "events", "n_units", "n_types", "regime", "phi", "kernel", "fit",
        "selection",
    },
    "rotate": {"model", "kaiser"},
    "evaluate": {"truth", "model", "bandwidth", "n_eval"},
    "analyze": {
        "model", "groups", "kaiser", "demographics", "covariates",
        "interactions",
    },
    "replicate-study": {
        "seed", "cells", "fit", "kernel_family", "error_points", "threads",
    },
}

_NESTED_KEYS = {
    "kernel": _KERNEL_KEYS,
    "fit": _FIT_KEYS,
    "selection": _SELECTION_KEYS,
    "blocks": _BLOCK_KEYS,
}


def _load_config(path: str, command: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    _check_keys(cfg, _SCHEMAS[command], "")
    for key, allowed in _NESTED_KEYS.items():
        if key in cfg and isinstance(cfg[key], dict):
            _check_keys(cfg[key], allowed, key + ".")
    if command == "replicate-study":
        for idx, cell in enumerate(cfg.get("cells", [])):
            if not isinstance(cell, dict):
                raise ConfigError(f"cells[{idx}] must be an object")
            _check_keys(cell, _CELL_KEYS, f"cells[{idx}].")
    return cfg


def _check_keys(obj: dict, allowed: set, prefix: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown config key(s): {', '.join(prefix + k for k in unknown)}"
        )


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"config is missing required key {key!r}")
    return cfg[key]


def _fit_config(cfg: dict, bandwidth, seed_override) -> FitConfig:
    section = dict(cfg.get("fit", {}))
    if "link" in section:
        section["link_name"] = section.pop("link")
    if seed_override is not None:
        section["init_seed"] = seed_override
    try:
        return FitConfig(bandwidth=bandwidth, **section)
    except (FitError, TypeError) as exc:
        raise ConfigError(f"bad fit section: {exc}") from None


def _kernel_and_bandwidth(cfg: dict, n_units: int, n_types: int) -> KernelSpec:
    section = dict(cfg.get("kernel", {}))
    bandwidth = section.pop("bandwidth", "auto")
    if bandwidth == "auto":
        regime = cfg.get("regime", "independent")
        if regime == "dependent":
            phi = int(cfg.get("phi", power_third_phi(n_types)))
            bandwidth = auto_bandwidth(n_units, n_types, "dependent", phi=phi)
        elif regime == "independent":
            bandwidth = auto_bandwidth(n_units, n_types, "independent")
        else:
            raise ConfigError(f"unknown regime {regime!r}")
    try:
        return KernelSpec(bandwidth=float(bandwidth), **section)
    except ValueError as exc:
        raise ConfigError(f"bad kernel section: {exc}") from None


def _load_panel(cfg: dict):
    path = _require(cfg, "events")
    if not Path(path).exists():
        raise ConfigError(f"events file not found: {path}")
    return load_events(
        path,
        n_units=cfg.get("n_units"),
        n_types=cfg.get("n_types"),
    )


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _echo_config(out: Path, command: str, cfg: dict, seed, threads) -> None:
    resolved = {"command": command, "config": cfg}
    if seed is not None:
        resolved["seed"] = seed
    if threads is not None:
        resolved["threads"] = threads
    _write_json(out / "resolved_config.json", resolved)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(cfg: dict, out: Path, seed_override, threads: int) -> int:
    seed = seed_override if seed_override is not None else _require(cfg, "seed")
    cfg = {**cfg, "seed": int(seed)}
    ss = np.random.SeedSequence(int(seed))
    truth_seed, sim_seed = (int(v) for v in ss.generate_state(2, dtype=np.uint64))
    spec = TruthSpec(
        setting=_require(cfg, "setting"),
        case=_require(cfg, "case"),
        n_units=int(_require(cfg, "n_units")),
        n_types=int(_require(cfg, "n_types")),
        rank=int(cfg.get("rank", 3)),
        period=float(cfg.get("period", 1.0)),
        seed=truth_seed,
    )
    truth = generate_truth(spec)
    regime = cfg.get("regime", "independent")
    if regime == "dependent":
        section = cfg.get("blocks", {})
        blocks = make_blocks(
            spec.n_types,
            rule=section.get("rule", "power-third"),
            sizes=section.get("sizes"),
        )
        panel = simulate_dependent(truth, blocks, sim_seed)
        _write_csv(
            out / "blocks.csv",
            ["type_id", "block"],
            [(j, k) for k, block in enumerate(blocks.blocks) for j in block],
        )
    elif regime == "independent":
        panel = simulate_independent(truth, sim_seed)
    else:
        raise ConfigError(f"unknown regime {regime!r}")
    save_events(panel, out / "events.csv")
    with open(out / "truth.json", "w", encoding="utf-8") as fh:
        fh.write(truth_to_json(truth))
        fh.write("\n")
    _echo_config(out, "simulate", cfg, seed, None)
    print(f"simulate: {panel.total_count()} events -> {out / 'events.csv'}")
    return 0


def cmd_fit(cfg: dict, out: Path, seed_override, threads: int) -> int:
    panel = _load_panel(cfg)
    kernel = _kernel_and_bandwidth(cfg, panel.n_units, panel.n_types)
    fit_cfg = _fit_config(cfg, kernel.h, seed_override)
    result = fit(panel, kernel, fit_cfg)
    save_model(result.model, out / "model.json")
    trace = result.objective_trace
    report = {
        "rank": fit_cfg.rank,
        "bandwidth": kernel.h,
        "kernel_family": kernel.family,
        "grid_size": fit_cfg.grid_size,
        "objective_first": float(trace[0]),
        "objective_final": float(trace[-1]),
        "iterations": result.iterations,
        "converged": result.converged,
        "stalled": result.stalled,
        "monotone_trace": bool(np.all(np.diff(trace) >= -1e-12)),
        "final_gradient_norm": result.final_gradient_norm,
    }
    _write_json(out / "fit_report.json", report)
    _echo_config(out, "fit", cfg, seed_override, None)
    print(
        f"fit: rank {fit_cfg.rank}, objective {report['objective_final']:.6g}, "
        f"{result.iterations} iterations -> {out / 'model.json'}"
    )
    return 0


def _penalty_from_config(section: dict, regime: str) -> PenaltySpec:
    penalty = section.get(
        "penalty", "dependent" if regime == "dependent" else "independent"
    )
    if penalty == "dependent":
        return PenaltySpec.dependent_default()
    if penalty == "independent":
        return PenaltySpec.independent_default()
    if isinstance(penalty, dict):
        extra = set(penalty) - {"coefficient", "exponent"}
        if extra:
            raise ConfigError(f"unknown penalty key(s): {sorted(extra)}")
        return PenaltySpec(
            coefficient=float(penalty["coefficient"]),
            exponent=float(penalty["exponent"]),
        )
    raise ConfigError(f"bad penalty spec {penalty!r}")


def cmd_select_rank(cfg: dict, out: Path, seed_override, threads: int) -> int:
    panel = _load_panel(cfg)
    kernel = _kernel_and_bandwidth(cfg, panel.n_units, panel.n_types)
    fit_cfg = _fit_config(cfg, kernel.h, seed_override)
    section = cfg.get("selection", {})
    try:
        sel_cfg = SelectConfig(
            penalty=_penalty_from_config(section, cfg.get("regime", "independent")),
            candidates=tuple(section.get("candidates", (1, 2, 3, 4, 5))),
            fit=fit_cfg,
            warm_start=section.get("warm_start", "nested"),
        )
    except ValueError as exc:
        raise ConfigError(f"bad selection section: {exc}") from None
    result = select_rank(panel, kernel, sel_cfg)
    header = ["rank", "log_likelihood", "penalty", "ic", "converged",
              "iterations", "error"]
    rows = [
        [row.get("rank"), row.get("log_likelihood", ""), row.get("penalty", ""),
         row.get("ic", ""), row.get("converged", ""), row.get("iterations", ""),
         row.get("error", "")]
        for row in result.table
    ]
    _write_csv(out / "ic_table.csv", header, rows)
    _write_json(out / "selected.json", {"rank": result.rank})
    save_model(result.fits[result.rank].model, out / "model.json")
    _echo_config(out, "select-rank", cfg, seed_override, None)
    print(f"select-rank: chose rank {result.rank} -> {out / 'ic_table.csv'}")
    return 0


def cmd_rotate(cfg: dict, out: Path, seed_override, threads: int) -> int:
    path = _require(cfg, "model")
    if not Path(path).exists():
        raise ConfigError(f"model file not found: {path}")
    model = load_model(path)
    result = rotate_fit(model, kaiser=bool(cfg.get("kaiser", False)))
    loads = result.rotated_loadings
    shares = loads**2 / np.maximum((loads**2).sum(axis=1, keepdims=True), 1e-300)
    r = loads.shape[1]
    header = (
        ["type_id"]
        + [f"a{k + 1}" for k in range(r)]
        + [f"share{k + 1}" for k in range(r)]
    )
    rows = [
        [j] + [float(v) for v in loads[j]] + [float(v) for v in shares[j]]
        for j in range(loads.shape[0])
    ]
    _write_csv(out / "rotated_loadings.csv", header, rows)
    _write_json(out / "rotation.json", {
        "q_matrix": result.q_matrix.tolist(),
        "varimax_criterion": result.varimax_criterion,
    })
    _echo_config(out, "rotate", cfg, None, None)
    print(f"rotate: criterion {result.varimax_criterion:.6g} -> "
          f"{out / 'rotated_loadings.csv'}")
    return 0


def _load_any_model(path: str):
    """A model JSON as (FactorModel or StaticFit, is_static)."""
    if not Path(path).exists():
        raise ConfigError(f"model file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("static"):
        return load_static(path), True
    return load_model(path), False


def cmd_evaluate(cfg: dict, out: Path, seed_override, threads: int) -> int:
    truth_path = _require(cfg, "truth")
    if not Path(truth_path).exists():
        raise ConfigError(f"truth file not found: {truth_path}")
    with open(truth_path, "r", encoding="utf-8") as fh:
        truth = truth_from_json(fh.read())
    loaded, is_static = _load_any_model(_require(cfg, "model"))
    bandwidth = cfg.get("bandwidth")
    if bandwidth is None:
        if is_static:
            raise ConfigError("static models need an explicit bandwidth")
        bandwidth = float(loaded.grid[0])
    bandwidth = float(bandwidth)
    fitted = (
        loaded.as_model((bandwidth, 1.0 - bandwidth)) if is_static else loaded
    )
    report = estimation_error(truth, fitted, bandwidth,
                              n_eval=int(cfg.get("n_eval", 901)))
    load_err = loading_error(truth.loadings, fitted.loadings)
    _write_json(out / "error.json", {
        "mse_integral": report.mse_integral,
        "n_eval": report.n_eval,
        "bandwidth": bandwidth,
        "loading_error": load_err,
        "static": is_static,
    })
    ts = np.linspace(bandwidth, 1.0 - bandwidth, report.n_eval)
    _write_csv(
        out / "per_point_error.csv",
        ["time", "squared_error"],
        [(float(t), float(e)) for t, e in zip(ts, report.per_point)],
    )
    _echo_config(out, "evaluate", cfg, None, None)
    print(f"evaluate: error {report.mse_integral:.6g} -> {out / 'error.json'}")
    return 0


def _read_groups(path: str) -> dict:
    if not Path(path).exists():
        raise ConfigError(f"groups file not found: {path}")
    groups = {}
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != {
            "type_id", "group"
        }:
            raise ConfigError(f"{path} must have header type_id,group")
        for row in reader:
            groups[int(row["type_id"])] = row["group"]
    if not groups:
        raise ConfigError(f"{path} has no group rows")
    return groups


def _read_demographics(path: str, n_units: int, names) -> dict:
    if not Path(path).exists():
        raise ConfigError(f"demographics file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "unit_id" not in reader.fieldnames:
            raise ConfigError(f"{path} must have a unit_id column")
        if names is None:
            names = [c for c in reader.fieldnames if c != "unit_id"]
        cols = {name: np.full(n_units, np.nan) for name in names}
        for row in reader:
            i = int(row["unit_id"])
            if not 0 <= i < n_units:
                raise ConfigError(f"unit_id {i} outside panel of {n_units}")
            for name in names:
                text = row.get(name, "")
                if text not in ("", None):
                    cols[name][i] = float(text)
    return cols


def cmd_analyze(cfg: dict, out: Path, seed_override, threads: int) -> int:
    path = _require(cfg, "model")
    if not Path(path).exists():
        raise ConfigError(f"model file not found: {path}")
    model = load_model(path)
    groups = _read_groups(_require(cfg, "groups"))
    quartiles = variability_quartiles(model, groups)
    rows = sorted(
        ((label, v["q25"], v["q50"], v["q75"]) for label, v in quartiles.items()),
        key=lambda r: -r[2],
    )
    _write_csv(out / "tv_quartiles.csv", ["group", "q25", "q50", "q75"], rows)
    messages = [f"analyze: {len(rows)} groups -> {out / 'tv_quartiles.csv'}"]
    if "demographics" in cfg:
        rotation = rotate_fit(model, kaiser=bool(cfg.get("kaiser", False)))
        span = model.grid[-1] - model.grid[0]
        scores = np.trapezoid(rotation.rotated_theta, x=model.grid, axis=0) / span
        design = _read_demographics(
            cfg["demographics"], model.n_units, cfg.get("covariates")
        )
        for a, b in cfg.get("interactions", []):
            if a not in design or b not in design:
                raise ConfigError(f"interaction ({a}, {b}) names unknown covariates")
            design[f"{a}_x_{b}"] = design[a] * design[b]
        reg_rows = []
        for k in range(scores.shape[1]):
            res = factor_regression(scores[:, k], design)
            for term in res["coefficients"]:
                reg_rows.append([
                    k + 1,
                    term,
                    res["coefficients"][term],
                    res["std_errors"][term],
                    res["p_values"][term],
                    res["r_squared"],
                    res["n_used"],
                ])
        _write_csv(
            out / "regression.csv",
            ["factor", "term", "coefficient", "std_error", "p_value",
             "r_squared", "n_used"],
            reg_rows,
        )
        messages.append(f"analyze: regression table -> {out / 'regression.csv'}")
    _echo_config(out, "analyze", cfg, None, None)
    for msg in messages:
        print(msg)
    return 0


def cmd_replicate_study(cfg: dict, out: Path, seed_override, threads: int) -> int:
    seed = seed_override if seed_override is not None else _require(cfg, "seed")
    cells = []
    for cell in _require(cfg, "cells"):
        cells.append(StudyCell(
            setting=_require(cell, "setting"),
            case=_require(cell, "case"),
            regime=_require(cell, "regime"),
            n_units=int(_require(cell, "n_units")),
            n_types=int(_require(cell, "n_types")),
            replications=int(_require(cell, "replications")),
            rank=int(cell.get("rank", 3)),
            baseline=bool(cell.get("baseline", True)),
            select=bool(cell.get("select_rank", False)),
            candidates=tuple(cell.get("candidates", (1, 2, 3, 4, 5))),
        ))
    fit_section = dict(cfg.get("fit", {}))
    if "link" in fit_section:
        fit_section["link_name"] = fit_section.pop("link")
    try:
        fit_cfg = FitConfig(**fit_section)
    except (FitError, TypeError) as exc:
        raise ConfigError(f"bad fit section: {exc}") from None
    study_cfg = StudyConfig(
        seed=int(seed),
        cells=tuple(cells),
        fit=fit_cfg,
        kernel_family=cfg.get("kernel_family", "epanechnikov"),
        error_points=int(cfg.get("error_points", 901)),
    )
    threads = int(cfg.get("threads", threads))
    rows, summary = run_study(study_cfg, threads=threads)
    _write_csv(
        out / "results.csv",
        RESULT_COLUMNS,
        [[row[c] for c in RESULT_COLUMNS] for row in rows],
    )
    _write_csv(
        out / "summary.csv",
        SUMMARY_COLUMNS,
        [[row[c] for c in SUMMARY_COLUMNS] for row in summary],
    )
    _echo_config(out, "replicate-study", {**cfg, "seed": int(seed)}, seed, threads)
    n_failed = sum(1 for row in rows if row["error"])
    print(
        f"replicate-study: {len(rows)} replications, {n_failed} failed -> "
        f"{out / 'results.csv'}"
    )
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "select-rank": cmd_select_rank,
    "rotate": cmd_rotate,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
    "replicate-study": cmd_replicate_study,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="eventfactors",
        description="Dynamic factor models for recurrent-event panels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker processes for replicate-study")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config, args.command)
        out = _out_dir(args.out)
        return _COMMANDS[args.command](cfg, out, args.seed, args.threads)
    except (ConfigError, EventDataError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FitError, RotationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
