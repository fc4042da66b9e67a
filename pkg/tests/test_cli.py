import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from fracgrad.cli import main
from fracgrad.meta_optimizer import init_net, save_checkpoint


def run_cli(args, env_extra=None):
    env = dict(os.environ)
    env.pop("FRACGRAD_THREADS", None)
    if env_extra:
        env.update(env_extra)
    return subprocess.run([sys.executable, "-m", "fracgrad.cli", *args],
                          capture_output=True, text=True, env=env)


class TestGridfig:
    def test_csv_schema_and_contents(self, tmp_path):
        out = tmp_path / "grid.csv"
        code = main(["gridfig", "--alpha", "1.2", "--grid-min", "0.1",
                     "--grid-max", "1.0", "--grid-n", "4",
                     "--out", str(out)])
        assert code == 0
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["in_x", "in_y", "out_x", "out_y"]
        assert len(rows) == 1 + 16
        # row-major: first axis value fixed over the first block
        assert rows[1][0] == rows[2][0]

    def test_classical_order_matches_matrix_action(self, tmp_path):
        out = tmp_path / "grid.csv"
        main(["gridfig", "--alpha", "1", "--grid-min", "1", "--grid-max", "1",
              "--grid-n", "1", "--out", str(out)])
        with open(out) as fh:
            row = list(csv.reader(fh))[1]
        assert float(row[2]) == pytest.approx(0.0, abs=1e-12)
        assert float(row[3]) == pytest.approx(6.0, abs=1e-12)

    def test_rejects_nonpositive_grid(self, tmp_path):
        code = main(["gridfig", "--alpha", "1.2", "--grid-min", "-0.5",
                     "--grid-max", "1.0", "--grid-n", "4",
                     "--out", str(tmp_path / "x.csv")])
        assert code == 2


class TestFns:
    def test_list_prints_registry(self, capsys):
        assert main(["fns", "list"]) == 0
        out = capsys.readouterr().out
        for name in ("rosenbrock2d", "chaotic1d", "himmelblau"):
            assert name in out


class TestLorenz:
    def test_csv_schema(self, tmp_path):
        out = tmp_path / "lorenz.csv"
        code = main(["lorenz", "--update", "fgf", "--estimator", "tbtt",
                     "--alpha", "0.95", "--lr", "0.006", "--iters", "5",
                     "--seed", "0", "--out", str(out)])
        assert code == 0
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["iter", "loss", "log_sigma", "log_rho"]
        assert len(rows) == 1 + 6
        assert float(rows[1][1]) > 0.0

    def test_es_estimator_runs(self, tmp_path):
        out = tmp_path / "es.csv"
        code = main(["lorenz", "--update", "gd", "--estimator", "es",
                     "--iters", "3", "--seed", "1", "--out", str(out)])
        assert code == 0


class TestLandscape:
    def test_momentum_sweep_csv(self, tmp_path):
        out = tmp_path / "sweep.csv"
        code = main(["landscape", "--method", "momentum",
                     "--axis1", "momentum:0:0.9:3",
                     "--axis2", "lr:-3:0:4:log",
                     "--horizon", "20", "--out", str(out)])
        assert code == 0
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["momentum", "lr", "final_f", "diverged"]
        assert len(rows) == 1 + 12

    def test_bad_axis_spec_is_config_error(self, tmp_path):
        code = main(["landscape", "--method", "fgf", "--axis1", "alpha:0.1",
                     "--axis2", "lr:-3:0:4:log", "--out",
                     str(tmp_path / "x.csv")])
        assert code == 2


class TestBench:
    def test_flag_driven_run(self, tmp_path):
        out = tmp_path / "run"
        code = main(["bench", "--fn", "sphere2d", "--opt", "gd,adam",
                     "--n-starts", "5", "--horizon", "10",
                     "--lr-grid", "0.25,0.001", "--seed", "7",
                     "--out", str(out)])
        assert code == 0
        assert (out / "summary.csv").exists()
        assert (out / "trajectories.csv").exists()
        with open(out / "report.json") as fh:
            doc = json.load(fh)
        assert doc["config"]["n_starts"] == 5

    def test_config_file_run(self, tmp_path):
        cfg = tmp_path / "bench.cfg"
        cfg.write_text(
            "fn = sphere2d\n"
            "optimizers = gd\n"
            "n_starts = 4   # tiny\n"
            "horizon = 5\n"
            "lr_grid = 0.25\n"
            "seed = 3\n"
            f"out = {tmp_path / 'cfgrun'}\n")
        assert main(["bench", "--config", str(cfg)]) == 0
        assert (tmp_path / "cfgrun" / "summary.csv").exists()

    def test_unknown_function_exit_2(self, tmp_path):
        code = main(["bench", "--fn", "nonexistent", "--opt", "gd",
                     "--out", str(tmp_path / "x")])
        assert code == 2

    def test_missing_out_exit_2(self):
        assert main(["bench", "--fn", "sphere2d", "--opt", "gd"]) == 2

    def test_bad_config_value_exit_2(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("fn = sphere2d\nn_starts = many\n"
                       f"out = {tmp_path / 'y'}\n")
        assert main(["bench", "--config", str(cfg)]) == 2

    def test_missing_checkpoint_exit_3(self, tmp_path):
        code = main(["bench", "--fn", "sphere2d",
                     "--opt", f"meta:{tmp_path / 'absent.json'}",
                     "--n-starts", "2", "--horizon", "2",
                     "--out", str(tmp_path / "z")])
        assert code == 3

    def test_malformed_checkpoint_exit_3(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("not json at all")
        code = main(["bench", "--fn", "sphere2d", "--opt", f"meta:{bad}",
                     "--n-starts", "2", "--horizon", "2",
                     "--out", str(tmp_path / "z")])
        assert code == 3

    def test_meta_checkpoint_round_trip_through_cli(self, tmp_path):
        net = init_net(2, np.random.default_rng(0))
        ckpt = tmp_path / "net.json"
        save_checkpoint(net, ckpt)
        out = tmp_path / "meta_run"
        code = main(["bench", "--fn", "sphere2d", "--opt", f"meta:{ckpt}",
                     "--n-starts", "3", "--horizon", "5", "--seed", "1",
                     "--out", str(out)])
        assert code == 0


class TestMetaTrainCommand:
    def test_trains_and_saves_checkpoint(self, tmp_path):
        out = tmp_path / "ckpt.json"
        code = main(["meta-train", "--regime", "with", "--target", "sphere2d",
                     "--seed", "0", "--outer-steps", "3", "--inner-steps", "2",
                     "--batch", "4", "--out", str(out)])
        assert code == 0
        with open(out) as fh:
            doc = json.load(fh)
        assert doc["format_version"] == 1
        assert doc["train_config"]["regime"] == "with_supervision"
        assert doc["train_config"]["pool"] == ["sphere2d"]

    def test_without_regime_excludes_target(self, tmp_path):
        out = tmp_path / "ckpt.json"
        code = main(["meta-train", "--regime", "without",
                     "--target", "rosenbrock2d", "--seed", "0",
                     "--outer-steps", "2", "--inner-steps", "2",
                     "--batch", "4", "--out", str(out)])
        assert code == 0
        with open(out) as fh:
            doc = json.load(fh)
        assert "rosenbrock2d" not in doc["train_config"]["pool"]

    def test_unknown_target_exit_2(self, tmp_path):
        code = main(["meta-train", "--regime", "with", "--target", "zzz",
                     "--out", str(tmp_path / "c.json")])
        assert code == 2


class TestDeterminismAcrossProcessesAndThreads:
    def test_bench_byte_identical_under_thread_env(self, tmp_path):
        args = ["bench", "--fn", "booth", "--opt", "gd,rmsprop",
                "--n-starts", "6", "--horizon", "15",
                "--lr-grid", "0.1,0.01,0.001", "--seed", "5"]
        r1 = run_cli(args + ["--out", str(tmp_path / "t1")],
                     env_extra={"FRACGRAD_THREADS": "1"})
        r2 = run_cli(args + ["--out", str(tmp_path / "t4")],
                     env_extra={"FRACGRAD_THREADS": "4"})
        assert r1.returncode == 0 and r2.returncode == 0, r1.stderr + r2.stderr
        for name in ("summary.csv", "trajectories.csv", "report.json"):
            a = (tmp_path / "t1" / name).read_bytes()
            b = (tmp_path / "t4" / name).read_bytes()
            assert a == b, name

    def test_lorenz_byte_identical_repeat(self, tmp_path):
        args = ["lorenz", "--update", "fgf", "--estimator", "es",
                "--iters", "4", "--seed", "9"]
        main(args + ["--out", str(tmp_path / "a.csv")])
        main(args + ["--out", str(tmp_path / "b.csv")])
        assert (tmp_path / "a.csv").read_bytes() == \
            (tmp_path / "b.csv").read_bytes()
