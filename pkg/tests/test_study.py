"""Tests for replicated study orchestration."""

import numpy as np
import pytest

from eventfactors.optimize import FitConfig
from eventfactors.study import (
    RESULT_COLUMNS,
    SUMMARY_COLUMNS,
    StudyCell,
    StudyConfig,
    run_replication,
    run_study,
    summarize,
)
from eventfactors.study import _replication_seeds


def small_cell(**kwargs):
    base = dict(
        setting="S1",
        case="C1",
        regime="independent",
        n_units=10,
        n_types=6,
        replications=2,
        rank=2,
    )
    base.update(kwargs)
    return StudyCell(**base)


def small_config(cells, seed=501):
    fit = FitConfig(
        rank=2,
        bandwidth="auto",
        grid_size=7,
        max_iters=80,
        tol=1e-5,
    )
    return StudyConfig(seed=seed, cells=cells, fit=fit, error_points=41)


class TestValidation:
    def test_regime_must_be_known(self):
        with pytest.raises(ValueError, match="regime"):
            small_cell(regime="iid")

    def test_replications_positive(self):
        with pytest.raises(ValueError, match="replications"):
            small_cell(replications=0)

    def test_candidates_coerced_to_ints(self):
        cell = small_cell(candidates=[1.0, 2.0, 3.0])
        assert cell.candidates == (1, 2, 3)
        assert all(isinstance(c, int) for c in cell.candidates)

    def test_config_needs_cells(self):
        with pytest.raises(ValueError, match="at least one cell"):
            StudyConfig(seed=1, cells=())

    def test_config_cells_become_tuple(self):
        config = small_config([small_cell()])
        assert isinstance(config.cells, tuple)


class TestReplicationSeeds:
    def test_deterministic(self):
        config = small_config([small_cell()])
        assert _replication_seeds(config, 0, 1) == _replication_seeds(config, 0, 1)

    def test_distinct_across_reps_and_cells(self):
        config = small_config([small_cell(), small_cell(case="C2")])
        seen = {
            _replication_seeds(config, idx, rep)
            for idx in range(2)
            for rep in range(3)
        }
        assert len(seen) == 6

    def test_depends_on_study_seed(self):
        cells = [small_cell()]
        a = _replication_seeds(small_config(cells, seed=1), 0, 0)
        b = _replication_seeds(small_config(cells, seed=2), 0, 0)
        assert a != b


class TestRunReplication:
    def test_row_has_all_columns(self):
        config = small_config([small_cell()])
        row = run_replication(config, 0, 0)
        assert list(row) == RESULT_COLUMNS

    def test_clean_row_fields(self):
        config = small_config([small_cell()])
        row = run_replication(config, 0, 0)
        assert row["error"] == ""
        assert row["kernel_error"] > 0.0
        assert row["baseline_error"] > 0.0
        assert row["bandwidth"] > 0.0
        assert row["kernel_iterations"] >= 1
        assert row["selected_rank"] == ""

    def test_baseline_skipped_when_disabled(self):
        config = small_config([small_cell(baseline=False)])
        row = run_replication(config, 0, 0)
        assert row["error"] == ""
        assert row["baseline_error"] == ""

    def test_selection_fills_selected_rank(self):
        config = small_config([small_cell(select=True, candidates=(1, 2))])
        row = run_replication(config, 0, 0)
        assert row["error"] == ""
        assert row["selected_rank"] in (1, 2)

    def test_dependent_regime_runs(self):
        config = small_config([small_cell(regime="dependent")])
        row = run_replication(config, 0, 0)
        assert row["error"] == ""
        assert row["kernel_error"] > 0.0

    def test_failure_becomes_row_error(self):
        # rank exceeds the type count, so the fit cannot be set up
        config = small_config([small_cell(rank=9)])
        row = run_replication(config, 0, 0)
        assert row["error"] != ""
        assert row["kernel_error"] == ""

    def test_deterministic_rows(self):
        config = small_config([small_cell()])
        assert run_replication(config, 0, 0) == run_replication(config, 0, 0)

    def test_reps_differ(self):
        config = small_config([small_cell()])
        a = run_replication(config, 0, 0)
        b = run_replication(config, 0, 1)
        assert a["kernel_error"] != b["kernel_error"]


class TestRunStudy:
    def test_row_order_is_cell_then_rep(self):
        cells = [small_cell(), small_cell(case="C2")]
        rows, _ = run_study(small_config(cells))
        assert [(r["cell"], r["rep"]) for r in rows] == [
            (0, 0), (0, 1), (1, 0), (1, 1),
        ]

    def test_summary_has_all_columns(self):
        _, summary = run_study(small_config([small_cell()]))
        assert list(summary[0]) == SUMMARY_COLUMNS

    def test_thread_count_does_not_change_results(self):
        config = small_config([small_cell(replications=3)])
        rows_serial, summary_serial = run_study(config, threads=1)
        rows_pool, summary_pool = run_study(config, threads=2)
        assert rows_serial == rows_pool
        assert summary_serial == summary_pool

    def test_rerun_is_identical(self):
        config = small_config([small_cell()])
        assert run_study(config) == run_study(config)


class TestSummarize:
    def base_row(self, **kwargs):
        row = {col: "" for col in RESULT_COLUMNS}
        row.update(cell=0, rep=0, error="")
        row.update(kwargs)
        return row

    def test_tallies_and_means(self):
        config = small_config([small_cell(rank=3, replications=5)])
        rows = [
            self.base_row(rep=0, kernel_error=0.2, baseline_error=0.6,
                          selected_rank=3),
            self.base_row(rep=1, kernel_error=0.4, baseline_error=0.8,
                          selected_rank=4),
            self.base_row(rep=2, kernel_error=0.6, selected_rank=2),
            self.base_row(rep=3, kernel_error=0.8, selected_rank=3),
            self.base_row(rep=4, error="FitError: boom"),
        ]
        summary = summarize(config, rows)[0]
        assert summary["replications"] == 5
        assert summary["n_failed"] == 1
        assert summary["mean_kernel_error"] == pytest.approx(0.5)
        assert summary["mean_baseline_error"] == pytest.approx(0.7)
        assert summary["n_rank_correct"] == 2
        assert summary["n_rank_over"] == 1
        assert summary["n_rank_under"] == 1

    def test_failed_rows_excluded_from_means(self):
        config = small_config([small_cell(rank=3, replications=2)])
        rows = [
            self.base_row(rep=0, kernel_error=0.25, selected_rank=3),
            self.base_row(rep=1, kernel_error=99.0, selected_rank=5,
                          error="ValueError: bad"),
        ]
        summary = summarize(config, rows)[0]
        assert summary["mean_kernel_error"] == pytest.approx(0.25)
        assert summary["n_rank_correct"] == 1
        assert summary["n_rank_over"] == 0

    def test_empty_fields_stay_blank(self):
        config = small_config([small_cell()])
        rows = [self.base_row(error="RuntimeError: nope")]
        summary = summarize(config, rows)[0]
        assert summary["mean_kernel_error"] == ""
        assert summary["mean_baseline_error"] == ""
        assert summary["n_rank_correct"] == 0

    def test_cells_summarized_separately(self):
        config = small_config([small_cell(rank=2), small_cell(rank=2, case="C2")])
        rows = [
            self.base_row(cell=0, kernel_error=0.1, selected_rank=2),
            self.base_row(cell=1, kernel_error=0.3, selected_rank=1),
        ]
        first, second = summarize(config, rows)
        assert first["mean_kernel_error"] == pytest.approx(0.1)
        assert first["n_rank_correct"] == 1
        assert second["mean_kernel_error"] == pytest.approx(0.3)
        assert second["n_rank_under"] == 1
