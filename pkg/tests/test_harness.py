from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from mdpgt import harness
from mdpgt.harness import (
    ConfigError,
    RunConfig,
    final_window_mean,
    main,
    parse_config,
    read_config_file,
    read_records_csv,
    run_one,
    smooth,
    sweep,
    with_override,
)

TINY = {
    "algo": "dpg",
    "agents": "2",
    "env": "lineworld",
    "horizon": "4",
    "episodes": "3",
    "seed": "1",
    "hidden": "4,4",
}


class TestParseConfig:
    def test_defaults_filled(self):
        cfg = parse_config(
            {"algo": "mdpgt", "agents": "5", "env": "lineworld", "episodes": "2000", "seed": "7"}
        )
        assert cfg.algo == "mdpgt"
        assert cfg.agents == 5
        assert cfg.episodes == 2000
        assert cfg.seeds == (7,)
        assert cfg.topology == "full"
        assert cfg.beta == 0.5
        assert cfg.estimator == "pgt"
        assert cfg.world_size == 5

    def test_gridworld_world_size_default(self):
        cfg = parse_config({"algo": "dpg", "env": "gridworld"})
        assert cfg.world_size == 10

    def test_schedule_delegation_populates_eta_beta_batch(self):
        cfg = parse_config(
            {
                "algo": "mdpgt",
                "policy": "linear_gaussian",
                "schedule": "corollary1",
                "episodes": "64",
                "topology": "ring",
                "agents": "4",
            }
        )
        assert cfg.eta > 0 and cfg.beta > 0 and cfg.batch_init >= 1
        manual = parse_config(
            {"algo": "mdpgt", "policy": "linear_gaussian", "episodes": "64", "topology": "ring", "agents": "4"}
        )
        assert cfg.eta != manual.eta

    def test_beta_range_error(self):
        with pytest.raises(ConfigError, match="out of range"):
            parse_config({"algo": "mdpgt", "beta": "1.5"})

    def test_unknown_key_error(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config({"algo": "mdpgt", "learning-rate": "0.1"})

    def test_missing_required_key_error(self):
        with pytest.raises(ConfigError, match="missing required key: algo"):
            parse_config({"beta": "0.5"})

    def test_mlp_schedule_needs_score_bounds(self):
        with pytest.raises(ConfigError, match="cg/ch"):
            parse_config({"algo": "mdpgt", "schedule": "corollary2"})
        cfg = parse_config(
            {"algo": "mdpgt", "schedule": "corollary2", "cg": "1.0", "ch": "1.0", "episodes": "64"}
        )
        assert cfg.eta > 0

    def test_edge_list_topology(self):
        cfg = parse_config({"algo": "dpg", "agents": "3", "topology": "[[0,1],[1,2]]"})
        assert cfg.topology == ((0, 1), (1, 2))

    def test_disconnected_edge_list_rejected(self):
        cfg = parse_config({"algo": "dpg", "agents": "4", "topology": "[[0,1],[2,3]]"})
        with pytest.raises(ConfigError, match="not connected"):
            harness.build_loop_config(cfg)

    def test_linear_gaussian_needs_lineworld(self):
        with pytest.raises(ConfigError, match="lineworld"):
            parse_config({"algo": "dpg", "env": "gridworld", "policy": "linear_gaussian"})

    def test_config_file_grammar_and_cli_precedence(self, tmp_path):
        text = """
        # training setup
        algo = mdpg
        agents = 3          # trailing comment
        eta = 0.01

        beta = 0.4
        """
        path = tmp_path / "run.cfg"
        path.write_text("\n".join(line.strip() for line in text.splitlines()), encoding="utf-8")
        items = read_config_file(path)
        assert items == {"algo": "mdpg", "agents": "3", "eta": "0.01", "beta": "0.4"}
        merged = dict(items)
        merged["beta"] = "0.7"  # CLI flag wins
        cfg = parse_config(merged)
        assert cfg.beta == 0.7
        assert cfg.agents == 3

    def test_malformed_file_line(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("algo mdpgt\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="expected"):
            read_config_file(path)

    def test_sidecar_roundtrip_identical(self, tmp_path):
        cfg = parse_config(TINY)
        run_one(cfg, 1, tmp_path / "out")
        doc = json.loads((tmp_path / "out" / "config.json").read_text())
        reparsed = parse_config({k: v for k, v in doc["config"].items() if v is not None})
        assert reparsed == cfg


class TestEmitRecords:
    def test_row_count_contract(self, tmp_path):
        cfg = parse_config({**TINY, "episodes": "2"})
        run_one(cfg, 1, tmp_path / "r")
        lines = (tmp_path / "r" / "records.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == "k,agent,reward,mean_reward,consensus_err,tracking_resid,u_norm,clamps"
        assert len(lines) == 1 + 2 * cfg.agents

    def test_same_seed_identical_bytes(self, tmp_path):
        cfg = parse_config(TINY)
        run_one(cfg, 1, tmp_path / "a")
        run_one(cfg, 1, tmp_path / "b")
        assert (tmp_path / "a" / "records.csv").read_bytes() == (
            tmp_path / "b" / "records.csv"
        ).read_bytes()

    def test_unwritable_path_faults_before_run(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x", encoding="utf-8")
        cfg = parse_config(TINY)
        with pytest.raises(ConfigError, match="not writable"):
            run_one(cfg, 1, blocker / "nested")

    def test_csv_roundtrip_readback(self, tmp_path):
        cfg = parse_config(TINY)
        result = run_one(cfg, 1, tmp_path / "rb")
        cols = read_records_csv(tmp_path / "rb" / "records.csv")
        assert cols["k"].size == len(result.records) * cfg.agents
        per_iter = cols["mean_reward"].reshape(len(result.records), cfg.agents)[:, 0]
        assert np.array_equal(per_iter, np.array([r.mean_reward for r in result.records]))

    def test_lf_line_endings(self, tmp_path):
        cfg = parse_config(TINY)
        run_one(cfg, 1, tmp_path / "lf")
        raw = (tmp_path / "lf" / "records.csv").read_bytes()
        assert b"\r" not in raw


class TestSweep:
    def test_single_value_sweep_equals_plain_run(self, tmp_path):
        cfg = parse_config(TINY)
        run_one(cfg, 1, tmp_path / "solo")
        sweep(cfg, "beta", ["0.5"], out_dir=tmp_path / "sw")
        solo = (tmp_path / "solo" / "records.csv").read_bytes()
        swept = (tmp_path / "sw" / "beta-0.5" / "seed1" / "records.csv").read_bytes()
        assert solo == swept

    def test_summary_rows(self, tmp_path):
        cfg = parse_config({**TINY, "algo": "mdpgt"})
        rows = sweep(cfg, "beta", ["0.2", "0.9"], out_dir=tmp_path / "sw2")
        assert len(rows) == 2
        summary = (tmp_path / "sw2" / "sweep-summary.csv").read_text(encoding="utf-8").splitlines()
        assert summary[0] == "beta,seed,final_mean,failure"
        assert len(summary) == 3

    def test_override_revalidates(self):
        cfg = parse_config(TINY)
        with pytest.raises(ConfigError):
            with_override(cfg, "beta", "2.0")
        with pytest.raises(ConfigError):
            with_override(cfg, "nonsense", "1")


class TestAnalysisHelpers:
    def test_smooth_window(self):
        x = np.arange(10, dtype=float)
        sm = smooth(x, window=3)
        assert sm.shape == (8,)
        assert sm[0] == pytest.approx(1.0)

    def test_smooth_short_series_passthrough(self):
        x = np.array([1.0, 2.0])
        assert np.array_equal(smooth(x, window=100), x)

    def test_final_window_mean(self):
        x = np.array([0.0, 0.0, 10.0, 20.0])
        assert final_window_mean(x, window=2) == 15.0


class TestCli:
    def test_run_and_exit_codes(self, tmp_path, capsys):
        out = tmp_path / "cli"
        code = main(
            [
                "run", "--algo", "dpg", "--agents", "2", "--horizon", "4",
                "--episodes", "3", "--seed", "2", "--hidden", "4,4",
                "--out", str(out),
            ]
        )
        assert code == 0
        assert (out / "seed2" / "records.csv").exists()
        assert "seed 2" in capsys.readouterr().out

    def test_config_error_exit_code(self, capsys):
        assert main(["run", "--algo", "dpg", "--beta", "7"]) == harness.EXIT_CONFIG
        assert "out of range" in capsys.readouterr().err

    def test_runtime_fault_exit_code(self, tmp_path, capsys):
        code = main(
            [
                "run", "--algo", "dpg", "--agents", "2", "--horizon", "4",
                "--episodes", "6", "--seed", "2", "--hidden", "4,4",
                "--eta", "1e9", "--out", str(tmp_path / "boom"),
            ]
        )
        assert code == harness.EXIT_RUNTIME
        assert "failed" in capsys.readouterr().out

    def test_theory_subcommand_emits_json(self, capsys):
        code = main(
            [
                "theory", "--algo", "mdpgt", "--policy", "linear_gaussian",
                "--agents", "4", "--topology", "ring", "--episodes", "100",
            ]
        )
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert {"problem", "derived", "eta_max", "schedules", "steady_state_error"} <= set(doc)

    def test_sweep_subcommand(self, tmp_path, capsys):
        code = main(
            [
                "sweep", "--algo", "dpg", "--agents", "2", "--horizon", "4",
                "--episodes", "3", "--seed", "1", "--hidden", "4,4",
                "--axis", "eta", "--values", "0.001,0.01",
                "--out", str(tmp_path / "sw"),
            ]
        )
        assert code == 0
        assert (tmp_path / "sw" / "sweep-summary.csv").exists()
