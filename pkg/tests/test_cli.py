import csv
import hashlib
import re

import numpy as np
import pytest

from dmve.agent import Agent, AgentPolicy
from dmve.cli import main
from dmve.envs import make_env, oracle_value
from dmve.plotting import build_curves, render_svg
from dmve.sweep import SweepSpecError, parse_sweep_spec

TINY_CONFIG = """\
# tiny run for command tests
seed_episodes = 1
collect_interval = 3
batch_size = 2
seq_len = 4
horizon = 3
num_horizons = 2
deter = 6
stoch = 3
hidden = 8
episode_length = 10
total_steps = 30
eval_interval = 10
eval_episodes = 2
save_episodes = false
"""


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("train")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY_CONFIG)
    assert main(["train", "--config", str(cfg), "--out", str(root / "run")]) == 0
    return root


def test_train_writes_artifacts(trained):
    run = trained / "run"
    for name in ("metrics.csv", "eval.csv", "final.ckpt", "config.txt"):
        assert (run / name).exists()


def test_train_rerun_gives_identical_metrics(trained):
    again = trained / "again"
    assert main(["train", "--config", str(trained / "tiny.cfg"), "--out", str(again)]) == 0
    assert digest(again / "metrics.csv") == digest(trained / "run" / "metrics.csv")
    # idempotent over an existing output directory
    assert main(["train", "--config", str(trained / "tiny.cfg"), "--out", str(again)]) == 0
    assert digest(again / "metrics.csv") == digest(trained / "run" / "metrics.csv")


def test_missing_config_exits_2_and_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.cfg"
    assert main(["train", "--config", str(missing), "--out", str(tmp_path / "o")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_config_key_exits_2_and_names_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("horizon = 3\nnum_horizons = 7\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "num_horizons" in capsys.readouterr().err
    cfg.write_text("colour = blue\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "colour" in capsys.readouterr().err


def test_usage_errors_exit_2():
    assert main([]) == 2
    assert main(["train"]) == 2
    assert main(["fly"]) == 2


def eval_output(capsys):
    out = capsys.readouterr().out.strip()
    m = re.fullmatch(r"(-?[\d.]+) ± ([\d.]+)", out)
    assert m, out
    return float(m.group(1)), float(m.group(2))


def test_eval_single_episode_has_zero_std_and_repeats(trained, capsys):
    ckpt = str(trained / "run" / "final.ckpt")
    args = ["eval", "--ckpt", ckpt, "--env", "bouncing_dot", "--episodes", "1", "--seed", "4", "--episode-length", "20"]
    assert main(args) == 0
    first = eval_output(capsys)
    assert first[1] == 0.0
    assert main(args) == 0
    assert eval_output(capsys) == first


def test_eval_appends_csv(trained, tmp_path, capsys):
    ckpt = str(trained / "run" / "final.ckpt")
    out = tmp_path / "evals.csv"
    for seed in ("0", "1"):
        args = ["eval", "--ckpt", ckpt, "--env", "bouncing_dot", "--episodes", "2", "--seed", seed,
                "--episode-length", "10", "--csv", str(out)]
        assert main(args) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0][-2:] == ["return_mean", "return_std"] and len(rows) == 3


def test_eval_errors(trained, tmp_path):
    ckpt = str(trained / "run" / "final.ckpt")
    assert main(["eval", "--ckpt", str(tmp_path / "x.ckpt"), "--env", "bouncing_dot"]) == 2
    assert main(["eval", "--ckpt", ckpt, "--env", "pong"]) == 2
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    assert main(["eval", "--ckpt", str(bad), "--env", "bouncing_dot"]) == 2


def test_eval_mean_matches_monte_carlo_oracle(trained, capsys):
    ckpt = trained / "run" / "final.ckpt"
    args = ["eval", "--ckpt", str(ckpt), "--env", "bouncing_dot", "--episodes", "100", "--seed", "0",
            "--episode-length", "25"]
    assert main(args) == 0
    mean, _ = eval_output(capsys)
    agent = Agent.load(ckpt)
    policy = AgentPolicy(agent, np.random.default_rng(12345), deterministic=True)
    est = oracle_value(make_env("bouncing_dot", 25), policy, 1.0, 100, seed=5000)
    assert abs(mean - est.mean) <= 3 * np.hypot(est.stderr, est.stderr)


# ---------------------------------------------------------------------------
# sweeps


def write_spec(root, values, seeds, extra=""):
    (root / "tiny.cfg").write_text(TINY_CONFIG)
    spec = root / "sweep.spec"
    spec.write_text(f"base_config = tiny.cfg\naxis = K\nvalues = {values}\nseeds = {seeds}\n{extra}")
    return spec


def test_sweep_summary_has_one_row_per_cell(tmp_path):
    spec = write_spec(tmp_path, "1, 2", "0 1", "total_steps = 20\n")
    assert main(["sweep", "--spec", str(spec), "--out", str(tmp_path / "out")]) == 0
    rows = list(csv.DictReader((tmp_path / "out" / "summary.csv").open()))
    assert len(rows) == 4
    assert [(r["value"], r["seed"]) for r in rows] == [("1", "0"), ("1", "1"), ("2", "0"), ("2", "1")]
    assert all(r["status"] == "ok" and r["mean_selected_horizon"] for r in rows)
    assert (tmp_path / "out" / "K2_seed1" / "metrics.csv").exists()


def test_single_cell_sweep_matches_train(tmp_path, trained):
    spec = write_spec(tmp_path, "2", "0")
    assert main(["sweep", "--spec", str(spec), "--out", str(tmp_path / "out")]) == 0
    assert digest(tmp_path / "out" / "K2_seed0" / "metrics.csv") == digest(trained / "run" / "metrics.csv")


def test_parallel_sweep_matches_sequential(tmp_path):
    spec = write_spec(tmp_path, "1 2", "3", "total_steps = 20\n")
    assert main(["sweep", "--spec", str(spec), "--out", str(tmp_path / "seq")]) == 0
    assert main(["sweep", "--spec", str(spec), "--out", str(tmp_path / "par"), "--parallel", "2"]) == 0
    assert digest(tmp_path / "seq" / "summary.csv") == digest(tmp_path / "par" / "summary.csv")


def test_failed_cell_is_recorded_and_sweep_continues(tmp_path):
    spec = write_spec(tmp_path, "1", "0 1", "total_steps = 20\n")
    (tmp_path / "out").mkdir()
    # a plain file where one cell's output directory should go makes that cell fail
    (tmp_path / "out" / "K1_seed1").write_text("blocker")
    assert main(["sweep", "--spec", str(spec), "--out", str(tmp_path / "out")]) == 1
    rows = list(csv.DictReader((tmp_path / "out" / "summary.csv").open()))
    assert [r["status"] for r in rows] == ["ok", "failed"] and rows[1]["error"]


def test_sweep_spec_validation(tmp_path):
    (tmp_path / "tiny.cfg").write_text(TINY_CONFIG)
    with pytest.raises(SweepSpecError, match="values"):
        parse_sweep_spec("base_config = tiny.cfg\naxis = K\nvalues = 1 5\nseeds = 0\n", tmp_path)
    with pytest.raises(SweepSpecError, match="seeds"):
        parse_sweep_spec("axis = H\nvalues = 5\nseeds = 0 0\n")
    with pytest.raises(SweepSpecError, match="axis"):
        parse_sweep_spec("axis = L\nvalues = 5\nseeds = 0\n")
    with pytest.raises(SweepSpecError, match="bogus"):
        parse_sweep_spec("axis = H\nvalues = 5\nseeds = 0\nbogus = 1\n")
    spec = parse_sweep_spec("axis = H\nvalues = 5, 15\nseeds = 0 1 2\nestimator = mve\n")
    assert spec.values == (5, 15) and spec.seeds == (0, 1, 2)
    assert spec.cell_config(15, 2).horizon == 15 and spec.cell_config(15, 2).estimator == "mve"
    assert main(["sweep", "--spec", str(tmp_path / "missing.spec"), "--out", str(tmp_path / "o")]) == 2


# ---------------------------------------------------------------------------
# plots


def metrics_file(path, rows, header=("env_step", "eval_return_mean")):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def test_single_csv_plots_one_line_without_band(tmp_path):
    src = metrics_file(tmp_path / "a" / "metrics.csv", [(0, 1.0), (10, 2.0), (20, 3.0)])
    out = tmp_path / "plot.svg"
    assert main(["plot", "--inputs", str(src), "--out", str(out)]) == 0
    svg = out.read_text()
    assert svg.count('class="mean"') == 1 and 'class="band"' not in svg


def test_empty_csv_exits_2(tmp_path):
    src = metrics_file(tmp_path / "a.csv", [])
    assert main(["plot", "--inputs", str(src), "--out", str(tmp_path / "p.svg")]) == 2
    blank = metrics_file(tmp_path / "b.csv", [(0, ""), (10, "")])
    assert main(["plot", "--inputs", str(blank), "--out", str(tmp_path / "p.svg")]) == 2


def test_band_is_per_step_sample_std(tmp_path):
    data = np.array([[1.0, 4.0, 2.0], [3.0, 5.0, 2.0], [2.0, 9.0, 8.0]])
    paths = [metrics_file(tmp_path / f"s{i}" / "m.csv", [(10 * j, data[i, j]) for j in range(3)]) for i in range(3)]
    (curve,) = build_curves(paths)
    np.testing.assert_array_equal(curve.x, [0, 10, 20])
    np.testing.assert_allclose(curve.mean, data.mean(axis=0), atol=1e-14)
    np.testing.assert_allclose(curve.std, data.std(axis=0, ddof=1), atol=1e-14)
    svg = render_svg([curve])
    assert svg.count('class="band"') == 1


def test_group_by_reads_run_configs(tmp_path):
    paths = []
    for k, seed in [(1, 0), (1, 1), (3, 0)]:
        run = tmp_path / f"K{k}_seed{seed}"
        paths.append(metrics_file(run / "metrics.csv", [(0, float(k + seed))]))
        (run / "config.txt").write_text(f"num_horizons = {k}\nseed = {seed}\n")
    curves = build_curves(paths, group_by="num_horizons")
    assert [(c.label, c.n_files) for c in curves] == [("num_horizons=1", 2), ("num_horizons=3", 1)]
    out = tmp_path / "g.svg"
    assert main(["plot", "--inputs", *map(str, paths), "--out", str(out), "--group-by", "num_horizons"]) == 0
    assert main(["plot", "--inputs", *map(str, paths), "--out", str(out), "--group-by", "colour"]) == 2
