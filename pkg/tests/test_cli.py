"""End-to-end tests for the command-line interface."""

import csv
import json

import numpy as np
import pytest

from eventfactors.cli import main
from eventfactors.events import load_events
from eventfactors.model import load_model
from eventfactors.optimize import FitConfig
from eventfactors.static import fit_static, save_static


def write_json(path, obj):
    path.write_text(json.dumps(obj) + "\n", encoding="utf-8")


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


SIM_CFG = {
    "setting": "S1",
    "case": "C1",
    "n_units": 8,
    "n_types": 5,
    "rank": 2,
    "seed": 90210,
    "regime": "independent",
}

FIT_SECTION = {
    "rank": 2,
    "grid_size": 7,
    "max_iters": 60,
    "tol": 1e-4,
}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One simulate -> fit chain shared by the downstream command tests."""
    root = tmp_path_factory.mktemp("pipeline")
    sim_cfg = root / "sim.json"
    write_json(sim_cfg, SIM_CFG)
    assert main(["simulate", "--config", str(sim_cfg),
                 "--out", str(root / "sim")]) == 0
    fit_cfg = root / "fit.json"
    write_json(fit_cfg, {
        "events": str(root / "sim" / "events.csv"),
        "n_units": 8,
        "n_types": 5,
        "regime": "independent",
        "fit": FIT_SECTION,
    })
    assert main(["fit", "--config", str(fit_cfg),
                 "--out", str(root / "fit")]) == 0
    return root


class TestSimulate:
    def test_outputs(self, pipeline):
        out = pipeline / "sim"
        panel = load_events(out / "events.csv", n_units=8, n_types=5)
        assert panel.total_count() > 0
        truth = json.loads((out / "truth.json").read_text())
        assert truth["case"] == "C1"
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["command"] == "simulate"
        assert resolved["config"]["seed"] == 90210

    def test_seed_override_matches_config_seed(self, tmp_path):
        cfg_a = tmp_path / "a.json"
        write_json(cfg_a, SIM_CFG)
        cfg_b = tmp_path / "b.json"
        write_json(cfg_b, {**SIM_CFG, "seed": 1})
        assert main(["simulate", "--config", str(cfg_a),
                     "--out", str(tmp_path / "a")]) == 0
        assert main(["simulate", "--config", str(cfg_b), "--seed", "90210",
                     "--out", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "events.csv").read_bytes()
        b = (tmp_path / "b" / "events.csv").read_bytes()
        assert a == b

    def test_dependent_writes_blocks(self, tmp_path):
        cfg = tmp_path / "sim.json"
        write_json(cfg, {**SIM_CFG, "regime": "dependent",
                         "blocks": {"sizes": [2, 2, 1]}})
        assert main(["simulate", "--config", str(cfg),
                     "--out", str(tmp_path / "out")]) == 0
        rows = read_csv(tmp_path / "out" / "blocks.csv")
        assert rows[0] == ["type_id", "block"]
        assert len(rows) == 6

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = tmp_path / "sim.json"
        write_json(cfg, SIM_CFG)
        for name in ("one", "two"):
            assert main(["simulate", "--config", str(cfg),
                         "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "one" / "events.csv").read_bytes() == \
            (tmp_path / "two" / "events.csv").read_bytes()


class TestFit:
    def test_outputs(self, pipeline):
        out = pipeline / "fit"
        model = load_model(out / "model.json")
        assert model.rank == 2
        assert model.n_units == 8
        report = json.loads((out / "fit_report.json").read_text())
        assert report["monotone_trace"] is True
        assert report["objective_final"] >= report["objective_first"]
        assert report["iterations"] >= 1

    def test_explicit_bandwidth_respected(self, pipeline, tmp_path):
        cfg = tmp_path / "fit.json"
        write_json(cfg, {
            "events": str(pipeline / "sim" / "events.csv"),
            "n_units": 8,
            "n_types": 5,
            "kernel": {"bandwidth": 0.2},
            "fit": FIT_SECTION,
        })
        assert main(["fit", "--config", str(cfg),
                     "--out", str(tmp_path / "out")]) == 0
        report = json.loads((tmp_path / "out" / "fit_report.json").read_text())
        assert report["bandwidth"] == 0.2


class TestSelectRank:
    def test_chain(self, pipeline, tmp_path):
        cfg = tmp_path / "sel.json"
        write_json(cfg, {
            "events": str(pipeline / "sim" / "events.csv"),
            "n_units": 8,
            "n_types": 5,
            "regime": "independent",
            "fit": FIT_SECTION,
            "selection": {"candidates": [1, 2]},
        })
        assert main(["select-rank", "--config", str(cfg),
                     "--out", str(tmp_path / "out")]) == 0
        selected = json.loads((tmp_path / "out" / "selected.json").read_text())
        assert selected["rank"] in (1, 2)
        rows = read_csv(tmp_path / "out" / "ic_table.csv")
        assert rows[0] == ["rank", "log_likelihood", "penalty", "ic",
                           "converged", "iterations", "error"]
        assert [r[0] for r in rows[1:]] == ["1", "2"]
        model = load_model(tmp_path / "out" / "model.json")
        assert model.rank == selected["rank"]

    def test_custom_penalty(self, pipeline, tmp_path):
        cfg = tmp_path / "sel.json"
        write_json(cfg, {
            "events": str(pipeline / "sim" / "events.csv"),
            "n_units": 8,
            "n_types": 5,
            "fit": FIT_SECTION,
            "selection": {
                "candidates": [1, 2],
                "penalty": {"coefficient": 1e9, "exponent": 2.0},
            },
        })
        assert main(["select-rank", "--config", str(cfg),
                     "--out", str(tmp_path / "out")]) == 0
        selected = json.loads((tmp_path / "out" / "selected.json").read_text())
        assert selected["rank"] == 1


class TestRotate:
    def test_outputs(self, pipeline, tmp_path):
        cfg = tmp_path / "rot.json"
        write_json(cfg, {"model": str(pipeline / "fit" / "model.json")})
        assert main(["rotate", "--config", str(cfg),
                     "--out", str(tmp_path / "out")]) == 0
        rows = read_csv(tmp_path / "out" / "rotated_loadings.csv")
        assert rows[0] == ["type_id", "a1", "a2", "share1", "share2"]
        assert len(rows) == 6
        shares = [float(rows[j][3]) + float(rows[j][4]) for j in range(1, 6)]
        assert shares == pytest.approx([1.0] * 5)
        rotation = json.loads((tmp_path / "out" / "rotation.json").read_text())
        q = np.array(rotation["q_matrix"])
        assert q.shape == (2, 2)
        np.testing.assert_allclose(q.T @ q, np.eye(2), atol=1e-10)


class TestEvaluate:
    def test_model_error(self, pipeline, tmp_path):
        cfg = tmp_path / "eval.json"
        write_json(cfg, {
            "truth": str(pipeline / "sim" / "truth.json"),
            "model": str(pipeline / "fit" / "model.json"),
            "n_eval": 41,
        })
        assert main(["evaluate", "--config", str(cfg),
                     "--out", str(tmp_path / "out")]) == 0
        report = json.loads((tmp_path / "out" / "error.json").read_text())
        assert report["mse_integral"] > 0.0
        assert report["static"] is False
        rows = read_csv(tmp_path / "out" / "per_point_error.csv")
        assert rows[0] == ["time", "squared_error"]
        assert len(rows) == 42

    def test_static_needs_bandwidth(self, pipeline, tmp_path):
        panel = load_events(pipeline / "sim" / "events.csv",
                            n_units=8, n_types=5)
        sfit = fit_static(panel, FitConfig(rank=2, bandwidth=0.2, max_iters=60,
                                           tol=1e-4))
        save_static(sfit, tmp_path / "static.json")
        cfg = tmp_path / "eval.json"
        write_json(cfg, {
            "truth": str(pipeline / "sim" / "truth.json"),
            "model": str(tmp_path / "static.json"),
            "n_eval": 41,
        })
        assert main(["evaluate", "--config", str(cfg),
                     "--out", str(tmp_path / "out")]) == 2
        write_json(cfg, {
            "truth": str(pipeline / "sim" / "truth.json"),
            "model": str(tmp_path / "static.json"),
            "bandwidth": 0.1,
            "n_eval": 41,
        })
        assert main(["evaluate", "--config", str(cfg),
                     "--out", str(tmp_path / "out")]) == 0
        report = json.loads((tmp_path / "out" / "error.json").read_text())
        assert report["static"] is True


class TestAnalyze:
    def test_quartiles_and_regression(self, pipeline, tmp_path):
        groups = tmp_path / "groups.csv"
        groups.write_text(
            "type_id,group\n0,a\n1,a\n2,b\n3,b\n4,b\n", encoding="utf-8"
        )
        demo = tmp_path / "demo.csv"
        lines = ["unit_id,age,score"]
        rng = np.random.default_rng(7)
        for i in range(8):
            lines.append(f"{i},{40 + i},{rng.normal():.6f}")
        demo.write_text("\n".join(lines) + "\n", encoding="utf-8")
        cfg = tmp_path / "an.json"
        write_json(cfg, {
            "model": str(pipeline / "fit" / "model.json"),
            "groups": str(groups),
            "demographics": str(demo),
            "interactions": [["age", "score"]],
        })
        assert main(["analyze", "--config", str(cfg),
                     "--out", str(tmp_path / "out")]) == 0
        rows = read_csv(tmp_path / "out" / "tv_quartiles.csv")
        assert rows[0] == ["group", "q25", "q50", "q75"]
        assert sorted(r[0] for r in rows[1:]) == ["a", "b"]
        reg = read_csv(tmp_path / "out" / "regression.csv")
        terms = {r[1] for r in reg[1:] if r[0] == "1"}
        assert terms == {"intercept", "age", "score", "age_x_score"}

    def test_unknown_interaction_rejected(self, pipeline, tmp_path):
        groups = tmp_path / "groups.csv"
        groups.write_text("type_id,group\n0,a\n", encoding="utf-8")
        demo = tmp_path / "demo.csv"
        demo.write_text("unit_id,age\n0,41\n", encoding="utf-8")
        cfg = tmp_path / "an.json"
        write_json(cfg, {
            "model": str(pipeline / "fit" / "model.json"),
            "groups": str(groups),
            "demographics": str(demo),
            "interactions": [["age", "height"]],
        })
        assert main(["analyze", "--config", str(cfg),
                     "--out", str(tmp_path / "out")]) == 2


class TestReplicateStudy:
    def cfg(self):
        return {
            "seed": 77,
            "cells": [{
                "setting": "S1",
                "case": "C1",
                "regime": "independent",
                "n_units": 8,
                "n_types": 5,
                "replications": 2,
                "rank": 2,
            }],
            "fit": FIT_SECTION,
            "error_points": 41,
        }

    def test_outputs_and_determinism(self, tmp_path):
        cfg = tmp_path / "study.json"
        write_json(cfg, self.cfg())
        for name in ("one", "two"):
            assert main(["replicate-study", "--config", str(cfg),
                         "--out", str(tmp_path / name)]) == 0
        results = read_csv(tmp_path / "one" / "results.csv")
        assert len(results) == 3
        assert results[0][0] == "cell"
        summary = read_csv(tmp_path / "one" / "summary.csv")
        assert len(summary) == 2
        assert (tmp_path / "one" / "results.csv").read_bytes() == \
            (tmp_path / "two" / "results.csv").read_bytes()
        assert (tmp_path / "one" / "summary.csv").read_bytes() == \
            (tmp_path / "two" / "summary.csv").read_bytes()

    def test_bad_cell_key_rejected(self, tmp_path):
        body = self.cfg()
        body["cells"][0]["flavour"] = "spicy"
        cfg = tmp_path / "study.json"
        write_json(cfg, body)
        assert main(["replicate-study", "--config", str(cfg),
                     "--out", str(tmp_path / "out")]) == 2


class TestConfigRejection:
    def run_expecting_2(self, tmp_path, command, body, capsys):
        cfg = tmp_path / "cfg.json"
        write_json(cfg, body)
        code = main([command, "--config", str(cfg),
                     "--out", str(tmp_path / "out")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_unknown_top_level_key(self, tmp_path, capsys):
        self.run_expecting_2(tmp_path, "simulate",
                             {**SIM_CFG, "bogus": 1}, capsys)

    def test_unknown_nested_key(self, tmp_path, capsys):
        self.run_expecting_2(tmp_path, "fit", {
            "events": "nowhere.csv",
            "fit": {"rank": 2, "momentum": 0.9},
        }, capsys)

    def test_missing_config_file(self, tmp_path, capsys):
        code = main(["fit", "--config", str(tmp_path / "absent.json"),
                     "--out", str(tmp_path / "out")])
        assert code == 2
        assert "not found" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json", encoding="utf-8")
        code = main(["simulate", "--config", str(cfg),
                     "--out", str(tmp_path / "out")])
        assert code == 2
        assert "not valid JSON" in capsys.readouterr().err

    def test_config_must_be_object(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("[1, 2]\n", encoding="utf-8")
        code = main(["simulate", "--config", str(cfg),
                     "--out", str(tmp_path / "out")])
        assert code == 2
        assert "JSON object" in capsys.readouterr().err

    def test_missing_required_key(self, tmp_path, capsys):
        body = {k: v for k, v in SIM_CFG.items() if k != "case"}
        self.run_expecting_2(tmp_path, "simulate", body, capsys)

    def test_missing_events_file(self, tmp_path, capsys):
        self.run_expecting_2(tmp_path, "fit",
                             {"events": str(tmp_path / "none.csv")}, capsys)

    def test_missing_model_file(self, tmp_path, capsys):
        self.run_expecting_2(tmp_path, "rotate",
                             {"model": str(tmp_path / "none.json")}, capsys)

    def test_bad_regime(self, tmp_path, capsys):
        self.run_expecting_2(tmp_path, "simulate",
                             {**SIM_CFG, "regime": "sideways"}, capsys)

    def test_bad_penalty(self, pipeline, tmp_path, capsys):
        self.run_expecting_2(tmp_path, "select-rank", {
            "events": str(pipeline / "sim" / "events.csv"),
            "n_units": 8,
            "n_types": 5,
            "fit": FIT_SECTION,
            "selection": {"penalty": "bayesian"},
        }, capsys)

    def test_bad_fit_value_is_config_error(self, pipeline, tmp_path, capsys):
        self.run_expecting_2(tmp_path, "fit", {
            "events": str(pipeline / "sim" / "events.csv"),
            "n_units": 8,
            "n_types": 5,
            "fit": {**FIT_SECTION, "tol": -1.0},
        }, capsys)

    def test_missing_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as err:
            main([])
        assert err.value.code == 2


class TestJsonOutputs:
    def test_trailing_newlines(self, pipeline):
        for rel in (("sim", "truth.json"), ("sim", "resolved_config.json"),
                    ("fit", "fit_report.json")):
            text = (pipeline / rel[0] / rel[1]).read_text(encoding="utf-8")
            assert text.endswith("\n")
