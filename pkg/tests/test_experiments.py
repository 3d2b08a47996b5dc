"""Experiment configuration, report bundles, determinism and the command line."""
import json

import numpy as np
import pytest

from jumpsmp.cli import main
from jumpsmp.experiments import (KINDS, ConfigError, Criterion, ExperimentConfig, ExperimentResult, Table,
                                 run_experiment)


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig("orders")
        assert cfg.benchmark == "lq_jump" and cfg.n_paths == 10_000
        assert ExperimentConfig("lemmas").benchmark == "nonlinear_jump"

    @pytest.mark.parametrize("data", [{"kind": "nope"}, {}, {"kind": "orders", "colour": 1},
                                      {"kind": "orders", "n_paths": 0},
                                      {"kind": "orders", "epsilons": [0.1, 0.2]},
                                      {"kind": "orders", "epsilons": [0.1, -0.01]},
                                      {"kind": "orders", "horizon": float("inf")},
                                      {"kind": "orders", "base_steps": 0}])
    def test_rejects(self, data):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping(data)

    def test_hash_ignores_execution_settings(self):
        a = ExperimentConfig("orders", threads=1, chunk_paths=100, output_dir="x")
        b = ExperimentConfig("orders", threads=8, chunk_paths=7, output_dir="y")
        assert a.hash() == b.hash()
        assert a.hash() != ExperimentConfig("orders", master_seed=2).hash()
        assert a.hash() != ExperimentConfig("orders", options={"v": 2.0}).hash()

    def test_roundtrip(self):
        cfg = ExperimentConfig("duality", epsilons=(0.1, 0.05), options={"n_se": 3})
        again = ExperimentConfig.from_mapping(cfg.to_dict())
        assert again == cfg and again.hash() == cfg.hash()


class TestReport:
    def test_csv_format(self):
        t = Table("t", ["a", "b", "c"], [[0.1, True, 3], [np.float64(1 / 3), np.bool_(False), np.int64(2)]])
        assert t.to_csv() == "a,b,c\n0.10000000000000001,true,3\n0.33333333333333331,false,2\n"
        assert t.column("c") == [3, np.int64(2)]

    def test_criterion_line(self):
        c = Criterion(7, "x", False, {"m": 0.123456}, ">= 0")
        assert c.line() == "[FAIL] 7.x: m=0.1235 (need >= 0)"

    def test_write_bundle(self, tmp_path):
        cfg = ExperimentConfig("orders")
        res = ExperimentResult(cfg, [Criterion(1, "a", True, {}, "")], [Table("m", ["x"], [[1.0]])], {"k": 1})
        res.write(tmp_path)
        s = json.loads((tmp_path / "summary.json").read_text())
        assert s["schema_version"] == 1 and s["config_hash"] == cfg.hash()
        assert s["passed"] and s["tables"] == ["m.csv"]
        assert (tmp_path / "m.csv").read_text() == "x\n1\n"


def small(kind, **kw):
    base = dict(kind=kind, n_paths=60, base_steps=32, chunk_paths=25)
    base.update(kw)
    return ExperimentConfig.from_mapping(base)


def csv_bytes(result):
    return {t.name: t.to_csv() for t in result.tables}


class TestRunners:
    @pytest.mark.parametrize("kind", KINDS)
    def test_every_kind_runs(self, kind):
        opts = {"calculus": {"pathwise_integrands": 20}, "mp-check": {"calibration_paths": 20, "stride": 8},
                "duality": {"calibration_paths": 20}}.get(kind, {})
        res = run_experiment(small(kind, options=opts))
        assert res.criteria and res.tables and res.wall_time > 0
        assert all(isinstance(c.passed, bool) for c in res.criteria)

    @pytest.mark.parametrize("kind", ["orders", "lemmas", "picard"])
    def test_chunk_and_thread_invariance(self, kind):
        a = run_experiment(small(kind, chunk_paths=60, threads=1))
        b = run_experiment(small(kind, chunk_paths=17, threads=3))
        assert csv_bytes(a) == csv_bytes(b)

    def test_seed_changes_results(self):
        a = run_experiment(small("orders", master_seed=1))
        b = run_experiment(small("orders", master_seed=2))
        assert csv_bytes(a) != csv_bytes(b)

    def test_divergence_becomes_failed_criterion(self, monkeypatch):
        from jumpsmp import experiments
        from jumpsmp.forward import DivergenceError

        def boom(cfg):
            raise DivergenceError(7, "test")

        monkeypatch.setitem(experiments.RUNNERS, "orders", boom)
        res = run_experiment(small("orders"))
        assert not res.passed and res.criteria[0].measured == {"step": 7}


class TestCli:
    def test_list(self, capsys):
        assert main(["list"]) == 0
        out = capsys.readouterr().out
        assert "lq_jump" in out and "kinds:" in out

    @pytest.mark.parametrize("argv", [["run"], ["run", "--kind", "nope"], ["run", "--kind", "orders", "--paths", "0"],
                                      ["run", "--kind", "orders", "--benchmark", "nope"], ["bogus"]])
    def test_usage_errors(self, argv, capsys):
        assert main(argv) == 2

    def test_bad_toml(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("kind = \n")
        assert main(["run", "--config", str(p)]) == 2

    def test_run_from_toml(self, tmp_path, capsys):
        p = tmp_path / "c.toml"
        p.write_text('kind = "picard"\nn_paths = 20\nbase_steps = 16\n[options]\nn_iters = 20\n')
        out = tmp_path / "out"
        code = main(["run", "--config", str(p), "--seed", "3", "--out", str(out)])
        lines = capsys.readouterr().out.splitlines()
        assert code == 0 and lines[-1].startswith("PASS picard/lq_jump")
        assert all(l.startswith("[PASS]") for l in lines[:-1])
        s = json.loads((out / "summary.json").read_text())
        assert s["config"]["master_seed"] == 3 and (out / "picard.csv").exists()

    def test_failing_run_exit_code(self, tmp_path):
        # a horizon outside the contraction regime makes the contraction criterion fail
        code = main(["run", "--kind", "picard", "--paths", "10", "--steps", "8", "--out", str(tmp_path)])
        assert code == 0
        p = tmp_path / "c.toml"
        p.write_text('kind = "picard"\nn_paths = 10\nbase_steps = 8\nhorizon = 3.0\n')
        assert main(["run", "--config", str(p), "--out", str(tmp_path / "b")]) == 1
