import csv
import logging
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deeprhi.agent import AgentConfig, TrialTrace
from deeprhi.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from deeprhi.config import ConfigError
from deeprhi.harness import (
    CellSummary,
    ExperimentConfig,
    child_seed,
    compute_drift,
    compute_force_proxy,
    emit_plots,
    read_trace_csv,
    report,
    run_experiment,
    smooth,
)
from deeprhi.kinematics import fk_jacobian, forward_kinematics, inverse_kinematics

SHORT = AgentConfig(duration_s=2.4, iterations=120)


def _trace(mu_rows, action_rows, cfg, gamma=0.01):
    n = len(mu_rows)
    tr = TrialTrace("left", "sync", seed=0, dt=0.02)
    tr.t = [(k + 1) * 0.02 for k in range(n)]
    tr.mu = [np.asarray(m, dtype=float) for m in mu_rows]
    tr.action = [np.asarray(a, dtype=float) for a in action_rows]
    tr.gamma = [gamma] * n
    tr.q_true = [cfg.rest_pose.copy() for _ in range(n)]
    tr.initial_mu = cfg.rest_pose.copy()
    return tr


# -- metrics -----------------------------------------------------------------


def test_drift_zero_when_belief_unchanged(env_cfg):
    rest = env_cfg.rest_pose
    assert compute_drift(_trace([rest] * 5, [[0, 0]] * 5, env_cfg), env_cfg) == 0.0


def test_drift_of_manufactured_leftward_move(env_cfg):
    hand = forward_kinematics(env_cfg.rest_pose, env_cfg.geometry)
    target = inverse_kinematics(hand - np.array([0.05, 0.0]), env_cfg.geometry, elbow_sign=1)
    mu = [env_cfg.rest_pose + (target - env_cfg.rest_pose) * s for s in np.linspace(0, 1, 10)]
    tr = _trace(mu, [[0, 0]] * 10, env_cfg)
    assert compute_drift(tr, env_cfg) == pytest.approx(-5.0, abs=1e-9)
    assert -5.0 < compute_drift(tr, env_cfg, "mean") < 0.0


@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=3, max_size=3))
def test_drift_ignores_actions(actions):
    from deeprhi.env import EnvConfig

    cfg = EnvConfig()
    mu = [cfg.rest_pose, cfg.rest_pose + 0.02, cfg.rest_pose + 0.05]
    a = compute_drift(_trace(mu, [[0, 0]] * 3, cfg), cfg)
    b = compute_drift(_trace(mu, actions, cfg), cfg)
    assert a == b


def test_metrics_reject_empty_trace(env_cfg):
    empty = TrialTrace("left", "sync", 0, 0.02)
    with pytest.raises(ValueError):
        compute_drift(empty, env_cfg)
    with pytest.raises(ValueError):
        compute_force_proxy(empty, env_cfg)
    with pytest.raises(ValueError):
        compute_drift(_trace([env_cfg.rest_pose], [[0, 0]], env_cfg), env_cfg, "median")


def test_force_proxy_zero_and_constant(env_cfg):
    rest = env_cfg.rest_pose
    zero = compute_force_proxy(_trace([rest] * 8, [[0, 0]] * 8, env_cfg), env_cfg)
    np.testing.assert_array_equal(zero, np.zeros(8))
    c = 0.37
    const = compute_force_proxy(_trace([rest] * 8, [[c, 0]] * 8, env_cfg), env_cfg, window=3)
    expected = fk_jacobian(rest, env_cfg.geometry)[0, 0] * c
    np.testing.assert_allclose(const, expected, rtol=1e-14)
    # dir(theta) = (-sin, cos): rotating the shoulder positively moves the hand left
    assert expected < 0


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=40))
def test_smoothing_window_one_is_identity(xs):
    np.testing.assert_array_equal(smooth(np.array(xs), 1), np.array(xs))


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=40), st.integers(1, 9))
def test_smoothing_preserves_constants_and_bounds(xs, w):
    x = np.array(xs)
    y = smooth(x, w)
    assert y.shape == x.shape
    assert np.all(y >= x.min() - 1e-9) and np.all(y <= x.max() + 1e-9)
    np.testing.assert_allclose(smooth(np.full(len(xs), 2.5), w), 2.5, rtol=1e-12)


# -- seeds -------------------------------------------------------------------


def test_child_seed_is_pure_and_distinct():
    seeds = {child_seed(0, c, m, t) for c in ("left", "center", "right") for m in ("sync", "async")
             for t in range(5)}
    assert len(seeds) == 30
    assert child_seed(3, "right", "async", 4) == child_seed(3, "right", "async", 4)
    assert child_seed(3, "right", "async", 4) != child_seed(4, "right", "async", 4)


def test_experiment_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(iterations=0).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig().with_overrides({"conditions": "left,up"})
    with pytest.raises(ConfigError):
        ExperimentConfig().with_overrides({"drift_measure": "median"})
    assert ExperimentConfig().with_overrides({"modes": "sync"}).modes == ("sync",)


# -- full runs on the small models -------------------------------------------


@pytest.fixture(scope="module")
def small_run(tiny_decoder, tiny_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    cfg = ExperimentConfig(trials_per_cell=2, duration_s=SHORT.duration_s, iterations=SHORT.iterations,
                           out_dir=str(out), run_id="a")
    return run_experiment(cfg, tiny_decoder, tiny_cfg, SHORT), cfg


def test_run_layout_and_cell_statistics(small_run):
    res, cfg = small_run
    assert len(res.traces) == 12
    assert len(res.cells) == 6
    for c in res.cells:
        assert len(c.drift) == cfg.trials_per_cell and not c.incomplete
    names = {p.name for p in (res.run_dir / "traces").iterdir()}
    assert "left_sync_0.csv" in names and "right_async_1_events.csv" in names
    assert (res.run_dir / "resolved-config.txt").exists()
    rows = list(csv.reader((res.run_dir / "summary.csv").open()))
    assert rows[0] == ["condition", "mode", "trial", "drift_cm", "mean_abs_force_proxy",
                       "gamma_tail_mean", "aborted_flag"]
    assert len(rows) == 1 + 12 + 2 * 6


def test_rerun_is_byte_identical(small_run, tiny_decoder, tiny_cfg, tmp_path):
    res, cfg = small_run
    again = run_experiment(replace(cfg, out_dir=str(tmp_path)), tiny_decoder, tiny_cfg, SHORT)
    assert again.summary_csv == res.summary_csv
    assert (again.run_dir / "plots" / "drift_bars.png").read_bytes() == \
        (res.run_dir / "plots" / "drift_bars.png").read_bytes()


def test_parallel_workers_match_serial(small_run, tiny_decoder, tiny_cfg, tmp_path):
    res, cfg = small_run
    par = run_experiment(replace(cfg, workers=2, conditions=("left",), out_dir=str(tmp_path)),
                         tiny_decoder, tiny_cfg, SHORT, write=False)
    serial = {k: v.to_csv() for k, v in res.traces.items() if k[0] == "left"}
    assert {k: v.to_csv() for k, v in par.traces.items()} == serial


def test_report_recomputes_summary_from_traces(small_run, tmp_path):
    import shutil

    res, _ = small_run
    copy = tmp_path / "copy"
    shutil.copytree(res.run_dir, copy)
    (copy / "summary.csv").unlink()
    again = report(copy)
    old = list(csv.reader(res.summary_csv.splitlines()))
    new = list(csv.reader(again.summary_csv.splitlines()))
    assert [r[:3] for r in old] == [r[:3] for r in new]
    for a, b in zip(old[1:], new[1:]):
        np.testing.assert_allclose([float(v) for v in b[3:]], [float(v) for v in a[3:]], rtol=1e-12, atol=1e-12)


def test_trace_csv_roundtrip(small_run, tiny_cfg):
    res, _ = small_run
    tr = res.traces[("right", "sync", 1)]
    path = res.run_dir / "traces" / "right_sync_1.csv"
    back = read_trace_csv(path, path.with_name("right_sync_1_events.csv"), tiny_cfg)
    np.testing.assert_array_equal(np.asarray(back.mu), np.asarray(tr.mu))
    np.testing.assert_array_equal(np.asarray(back.action), np.asarray(tr.action))
    assert back.events == tr.events


def test_plot_csv_equals_summary(small_run):
    res, _ = small_run
    rows = list(csv.DictReader((res.run_dir / "plots" / "drift_bars.csv").open()))
    by_cell = {(c.condition, c.mode): c for c in res.cells}
    for r in rows:
        c = by_cell[(r["condition"], r["mode"])]
        assert float(r["drift_mean_cm"]) == c.drift_mean
        assert float(r["drift_std_cm"]) == c.drift_std
    force = list(csv.DictReader((res.run_dir / "plots" / "force_left_sync.csv").open()))
    np.testing.assert_array_equal([float(r["force_mean"]) for r in force], by_cell[("left", "sync")].force_mean)


def test_empty_cell_plot_omitted_with_warning(tmp_path, caplog):
    cell = CellSummary("left", "sync", trials=[0], drift=[float("nan")], mean_abs_force=[float("nan")],
                       mean_force=[float("nan")], gamma_tail=[float("nan")], aborted=[True])
    with caplog.at_level(logging.WARNING):
        paths = emit_plots([cell], tmp_path, 0.02)
    assert paths == []
    assert "omitted" in caplog.text
    assert cell.incomplete and np.isnan(cell.drift_mean)


def test_missing_model_is_config_error(tmp_path):
    cfg = ExperimentConfig(model_path=str(tmp_path / "nope.rhiw"), out_dir=str(tmp_path))
    with pytest.raises(ConfigError):
        run_experiment(cfg)


# -- command line --------------------------------------------------------------


@pytest.fixture(scope="module")
def cli_files(tiny_decoder, tiny_cfg, tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    tiny_decoder.save(d / "m.rhiw")
    tiny_cfg.save(d / "env.cfg")
    (d / "exp.cfg").write_text(
        f"model_path = {d / 'm.rhiw'}\nenv_config = {d / 'env.cfg'}\n"
        "iterations = 20\nduration_s = 0.4\ntrials_per_cell = 1\nconditions = left\n"
    )
    return d


def test_cli_run_and_report(cli_files, capsys):
    out = cli_files / "out"
    assert main(["run", "--config", str(cli_files / "exp.cfg"), "--out-dir", str(out), "--run-id", "r"]) == EXIT_OK
    first = (out / "r" / "summary.csv").read_text()
    assert main(["report", str(out / "r")]) == EXIT_OK
    assert (out / "r" / "summary.csv").read_text() == first
    assert "left,sync,mean" in capsys.readouterr().out


def test_cli_exit_codes(cli_files, tmp_path):
    assert main(["run", "--config", str(cli_files / "exp.cfg"), "--set", "iterations=0"]) == EXIT_CONFIG
    assert main(["run", "--config", str(cli_files / "exp.cfg"), "--set", "bogus"]) == EXIT_CONFIG
    assert main(["run", "--model", str(tmp_path / "missing.rhiw")]) == EXIT_CONFIG
    assert main(["render-check", "--env-set", "offset_left=5", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["report", str(tmp_path / "no_such_run")]) == EXIT_IO


def test_cli_gamma_sim(capsys):
    assert main(["gamma-sim", "--seeds", "2"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "seed,mode,tail_mean,tail_min,tail_max"
    assert len(lines) == 1 + 2 * 2


def test_cli_render_check_matches_golden(tmp_path):
    from pathlib import Path

    assert main(["render-check", "--out", str(tmp_path)]) == EXIT_OK
    golden = Path(__file__).parent / "golden"
    for cond in ("left", "center", "right"):
        assert (tmp_path / f"rest_{cond}.pgm").read_bytes() == (golden / f"rest_{cond}.pgm").read_bytes()
