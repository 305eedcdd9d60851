import json

import numpy as np
import pytest

from stable_es import harness
from stable_es.cli import main
from stable_es.optimizer import init_informative
from stable_es.sim2d import make_task, read_trace

QUICK = ["task.name=Task1", "K=1", "optimizer.max_iters=2"]


def write_cfg(tmp_path, body, name="cfg.json"):
    path = tmp_path / name
    path.write_text(body if isinstance(body, str) else json.dumps(body))
    return path


class TestConfig:
    def test_defaults(self):
        cfg = harness.load_config()
        assert cfg["schema_version"] == harness.SCHEMA_VERSION
        assert harness.env_config(cfg).name == "Task2" and cfg["K"] == 8

    def test_overrides_are_typed(self):
        cfg = harness.load_config(None, ["optimizer.beta=10", "init.kind=informative", "seeds=[3,4]"])
        assert cfg["optimizer"]["beta"] == 10
        assert cfg["init"]["kind"] == "informative"
        assert cfg["seeds"] == [3, 4]

    def test_file_merges_with_defaults(self, tmp_path):
        path = write_cfg(tmp_path, {"schema_version": 1, "task": "Task1", "optimizer": {"Ns": 20}})
        cfg = harness.load_config(path)
        assert harness.env_config(cfg).clearance == 5e-4
        assert cfg["optimizer"] == {"max_iters": 50, "Ns": 20}

    def test_task_field_override(self):
        cfg = harness.load_config(None, ["task.friction_coeff=0.0"])
        assert harness.env_config(cfg).friction_coeff == 0.0

    def test_syntax_error_names_line(self, tmp_path):
        path = write_cfg(tmp_path, '{\n  "schema_version": 1,\n  "K": ,\n}')
        with pytest.raises(harness.ConfigError, match=r"cfg.json:3:"):
            harness.load_config(path)

    @pytest.mark.parametrize(
        "override,field",
        [
            ("optimizer.Nss=3", "optimizer.Nss"),
            ("task.colour=1", "task.colour"),
            ("bogus=1", "bogus"),
            ("init.nu=3", "init.nu"),
        ],
    )
    def test_unknown_field_is_named(self, override, field):
        with pytest.raises(harness.ConfigError, match=field):
            harness.load_config(None, [override])

    @pytest.mark.parametrize(
        "override",
        ["schema_version=2", "K=-1", "optimizer.Ne=15", "init.kind=magic", "seeds=[-1]", "task.name=Task9"],
    )
    def test_invalid_values(self, override):
        with pytest.raises(harness.ConfigError):
            harness.load_config(None, [override])

    def test_inline_environment(self):
        cfg = harness.load_config(None, ['task={"name": "open", "obstacles": [], "goal": [0, 0]}'])
        env = harness.env_config(cfg)
        assert env.name == "open" and env.obstacles == ()

    def test_malformed_override(self):
        with pytest.raises(harness.ConfigError):
            harness.load_config(None, ["no_equals_sign"])

    def test_hash_ignores_seeds_only(self):
        a = harness.load_config(None, ["seeds=[1]"])
        b = harness.load_config(None, ["seeds=[2]"])
        c = harness.load_config(None, ["K=3"])
        assert harness.config_hash(a) == harness.config_hash(b) != harness.config_hash(c)


class TestTrain:
    def test_outputs(self, tmp_path):
        cfg = harness.load_config(None, QUICK)
        path = harness.train(cfg, 0, tmp_path)
        assert path.name.startswith("Task1-") and path.name.endswith("-seed0")
        data = harness.read_iterations(path / "iterations.csv")
        assert list(data["iter"]) == [0, 1]
        assert set(data) == {"iter", "R_b", "R_e", "success_rate"} | {
            f"nu_{n}" for n in ("S0", "D0", "S1", "D1", "l1")
        }
        assert np.all(data["R_e"] >= data["R_b"])
        summary = json.loads((path / "summary.json").read_text())
        assert summary["iterations"] == 2 and summary["max_excursion"] < summary["workspace_limit"]
        policy = harness.load_checkpoint(path / "best_policy.json")
        assert policy.K == 1
        mean = harness.load_checkpoint(path / "final_phi.json")
        assert mean.K == 1
        trace = read_trace(path / "best_trace.csv")
        assert len(trace["t"]) == make_task("Task1").n_steps

    def test_zero_iterations(self, tmp_path):
        cfg = harness.load_config(None, QUICK + ["optimizer.max_iters=0"])
        path = harness.train(cfg, 0, tmp_path)
        lines = (path / "iterations.csv").read_text().splitlines()
        assert lines == [",".join(harness.iteration_header(["S0", "D0", "S1", "D1", "l1"]))]
        assert json.loads((path / "summary.json").read_text())["iterations"] == 0
        assert not (path / "best_policy.json").exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = harness.load_config(None, QUICK)
        a = harness.train(cfg, 7, tmp_path / "a")
        b = harness.train(cfg, 7, tmp_path / "b")
        for name in ("iterations.csv", "best_trace.csv", "final_trace.csv", "summary.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_refuses_to_overwrite(self, tmp_path):
        cfg = harness.load_config(None, QUICK + ["optimizer.max_iters=0"])
        harness.train(cfg, 0, tmp_path)
        with pytest.raises(harness.RunExistsError):
            harness.train(cfg, 0, tmp_path)


class TestEval:
    def test_untrained_informative_mean_is_bounded(self, tmp_path):
        env = make_task("Task2")
        p = init_informative(2, 8, env.mass, env.horizon, env.init_offset).mean_policy()
        rows = harness.evaluate(p, env, 5, tmp_path, seed=1)
        assert len(rows) == 5
        for r in rows:
            assert not r["diverged"] and r["max_V_rise"] <= 1e-9 and r["max_free_dV"] <= 0.0
        assert len(list(tmp_path.glob("trace_*.csv"))) == 5

    def test_zero_initials(self, tmp_path):
        env = make_task("Task2")
        p = init_informative(2, 1, env.mass, env.horizon, env.init_offset).mean_policy()
        assert harness.evaluate(p, env, 0, tmp_path) == []
        assert (tmp_path / "eval_summary.csv").read_text().count("\n") == 1

    def test_initials_clear_obstacles(self):
        env = make_task("Task3")
        pts = harness.eval_initials(env, 50, [[0.0, 0.025], [0.2, 0.2]], np.random.default_rng(0))
        h = env.block_half_width
        for p in pts:
            for r in env.obstacles:
                assert not (p[0] + h > r.x0 and p[0] - h < r.x1 and p[1] + h > r.y0 and p[1] - h < r.y1)


class TestAnalysis:
    def test_entropy_scan_d7(self, tmp_path):
        fit = harness.write_entropy_scan(7, tmp_path / "scan.csv", n_points=30)
        assert fit.r2 >= 0.99
        rows = (tmp_path / "scan.csv").read_text().splitlines()
        assert rows[0] == "nu,ln_nu,H" and len(rows) == 31

    def test_entropy_scan_d1_monotone(self, tmp_path):
        harness.write_entropy_scan(1, tmp_path / "scan.csv")
        data = np.loadtxt(tmp_path / "scan.csv", delimiter=",", skiprows=1)
        assert np.all(np.diff(data[:, 2]) < 0)

    def test_gamma_spread_random_means(self, tmp_path):
        gammas = [harness.write_entropy_scan(7, tmp_path / f"s{i}.csv", seed=i).gamma for i in range(10)]
        assert (max(gammas) - min(gammas)) / np.mean(gammas) < 0.05

    def test_excursion_stats(self, tmp_path):
        cfg = harness.load_config(None, QUICK)
        header, rows = harness.excursion_stats(cfg, 2, tmp_path / "ex.csv")
        assert header[:2] == ["iter", "n"] and len(rows) == 2
        for r in rows:
            q = r[2:]
            assert q == sorted(q) and q[-1] < 2.0
            assert r[1] == 15 * (make_task("Task1").n_steps + 1)

    def test_excursion_stats_zero(self, tmp_path):
        cfg = harness.load_config(None, QUICK)
        _, rows = harness.excursion_stats(cfg, 0, tmp_path / "ex.csv")
        assert rows == [] and (tmp_path / "ex.csv").read_text().count("\n") == 1


class TestCli:
    def test_train_and_eval(self, tmp_path, capsys):
        out = tmp_path / "runs"
        args = ["train", "--out", str(out), "--seed", "1", "--seed", "2"]
        assert main(args + [f"--override={o}" for o in QUICK]) == 0
        runs = sorted(out.iterdir())
        assert [p.name[-5:] for p in runs] == ["seed1", "seed2"]
        ckpt = runs[0] / "best_policy.json"
        code = main(["eval", "--checkpoint", str(ckpt), "--task", "Task1", "--n-initials", "2", "--out", str(tmp_path / "ev")])
        assert code == 0
        assert "2 initials" in capsys.readouterr().out

    def test_exit_codes(self, tmp_path, capsys):
        assert main(["train", "--override", "K=-3"]) == 1
        bad = write_cfg(tmp_path, "{oops")
        assert main(["train", "--config", str(bad)]) == 1
        assert main(["eval", "--checkpoint", str(tmp_path / "missing.json")]) == 1
        argv = ["train", "--out", str(tmp_path), "--override", "optimizer.max_iters=0"]
        assert main(argv) == 0
        assert main(argv) == 2  # run directory exists
        err = capsys.readouterr().err
        assert "config error" in err and "RunExistsError" in err

    def test_gamma_and_scan(self, tmp_path, capsys):
        assert main(["gamma", "--dim", "1", "--dim", "7"]) == 0
        out = capsys.readouterr().out
        assert "D=1  gamma=2.08" in out and "D=7  gamma=0.07" in out
        assert main(["entropy-scan", "--dim", "2", "--points", "10", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "entropy_scan_D2.csv").exists()
        assert main(["entropy-scan", "--dim", "2", "--points", "2", "--out", str(tmp_path)]) == 1

    def test_excursion_cli(self, tmp_path, capsys):
        argv = ["excursion-stats", "--iters", "1", "--out", str(tmp_path)]
        assert main(argv + [f"--override={o}" for o in QUICK]) == 0
        assert "guard 2.0 m" in capsys.readouterr().out

    def test_thread_cap(self, tmp_path, monkeypatch):
        monkeypatch.setenv("STABLE_ES_THREADS", "1")
        from stable_es.optimizer import worker_count

        assert worker_count(8) == 1
