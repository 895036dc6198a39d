import csv
import io

import numpy as np
import pytest

from deeprhi import agent as agent_mod
from deeprhi.agent import (
    TRACE_COLUMNS,
    AgentConfig,
    Precisions,
    action_increment,
    action_step,
    free_energy,
    free_energy_gradient,
    perception_step,
    run_trial,
)
from deeprhi.autodiff import NonFiniteError, finite_diff_jacobian, rel_error
from deeprhi.config import ConfigError
from deeprhi.env import Observation, render

SHORT = AgentConfig(duration_s=3.0, iterations=150)


def _obs(model, cfg, mu_true, s_p=None, offset=0.0):
    s_p = np.asarray(mu_true if s_p is None else s_p, dtype=np.float64)
    return Observation(s_p=s_p, s_v=render(mu_true, offset, cfg))


def _prec(cfg, sp=1.0, sv=1.0):
    return Precisions(sp, sv / cfg.resolution ** 2)


# -- perception --------------------------------------------------------------


def test_no_error_means_no_motion(tiny_decoder, tiny_cfg):
    mu = tiny_cfg.rest_pose
    obs = Observation(s_p=mu.copy(), s_v=np.zeros((16, 16)))
    res = perception_step(mu, obs, tiny_decoder, 1e-6, Precisions(1.0, 0.0), 0.1)
    np.testing.assert_array_equal(res.mu, mu)


def test_proprioceptive_attractor(tiny_decoder, tiny_cfg):
    target = tiny_cfg.rest_pose
    mu = target + np.array([0.2, -0.15])
    obs = Observation(s_p=target, s_v=np.zeros((16, 16)))
    prec = Precisions(1.0, 0.0)
    first = perception_step(mu, obs, tiny_decoder, 0.5, prec, 0.1).mu
    assert np.linalg.norm(first - target) < np.linalg.norm(mu - target)
    for _ in range(400):
        mu = perception_step(mu, obs, tiny_decoder, 0.5, prec, 0.1).mu
    np.testing.assert_allclose(mu, target, atol=1e-12)


def test_visual_step_descends(tiny_vae, tiny_cfg, rng):
    prec = Precisions(0.0, 1.0 / 256)
    for _ in range(5):
        mu_star = rng.uniform(tiny_cfg.lower + 0.1, tiny_cfg.upper - 0.1)
        mu = mu_star + rng.uniform(-0.1, 0.1, 2)
        obs = _obs(tiny_vae, tiny_cfg, mu_star)
        before = free_energy(mu, obs, tiny_vae, prec, 1.0)
        res = perception_step(mu, obs, tiny_vae, 1.0, prec, 0.1)
        assert free_energy(res.mu, obs, tiny_vae, prec, 1.0) <= before


def test_update_direction_is_negative_free_energy_gradient(tiny_vae, tiny_cfg, rng):
    for _ in range(10):
        mu = rng.uniform(tiny_cfg.lower + 0.05, tiny_cfg.upper - 0.05)
        obs = _obs(tiny_vae, tiny_cfg, tiny_cfg.rest_pose, s_p=tiny_cfg.rest_pose + 0.03, offset=-0.15)
        gamma = float(rng.uniform(0.01, 1.0))
        prec = _prec(tiny_cfg, 1.0, 50.0)
        mu_dot, F, _, _ = free_energy_gradient(mu, obs, tiny_vae, prec, gamma)
        fd = finite_diff_jacobian(lambda m: np.array([free_energy(m, obs, tiny_vae, prec, gamma)]), mu, 1e-6)[0]
        assert F == pytest.approx(free_energy(mu, obs, tiny_vae, prec, gamma), rel=1e-12)
        assert rel_error(mu_dot, -fd) < 1e-3


def test_perfect_prediction_has_zero_free_energy(tiny_decoder, tiny_cfg):
    mu = tiny_cfg.rest_pose
    obs = Observation(s_p=mu.copy(), s_v=tiny_decoder.predict(mu))
    assert free_energy(mu, obs, tiny_decoder, _prec(tiny_cfg), 1.0) == 0.0


def test_free_energy_non_negative(tiny_decoder, tiny_cfg, rng):
    obs = _obs(tiny_decoder, tiny_cfg, tiny_cfg.rest_pose, offset=0.15)
    for _ in range(25):
        mu = tiny_cfg.rest_pose + rng.uniform(-0.3, 0.3, 2)
        assert free_energy(mu, obs, tiny_decoder, _prec(tiny_cfg), float(rng.uniform(1e-6, 1))) >= 0.0


def test_visual_term_linear_in_gamma(tiny_decoder, tiny_cfg):
    mu = tiny_cfg.rest_pose + 0.05
    obs = _obs(tiny_decoder, tiny_cfg, tiny_cfg.rest_pose, offset=0.15)
    prec = _prec(tiny_cfg)
    base = perception_step(mu, obs, tiny_decoder, 0.2, prec, 0.1).visual_term
    for g in (0.01, 0.5, 1.0):
        v = perception_step(mu, obs, tiny_decoder, g, prec, 0.1).visual_term
        np.testing.assert_allclose(v, base * (g / 0.2), rtol=1e-12)


def test_belief_clamped_to_limits_with_margin(tiny_decoder, tiny_cfg):
    bounds = (tiny_cfg.lower - 0.1, tiny_cfg.upper + 0.1)
    obs = Observation(s_p=tiny_cfg.upper + 5.0, s_v=np.zeros((16, 16)))
    res = perception_step(tiny_cfg.upper, obs, tiny_decoder, 1e-6, Precisions(1.0, 0.0), 1.0, bounds)
    np.testing.assert_array_equal(res.mu, bounds[1])
    assert res.out_of_range


def test_gamma_must_be_positive(tiny_decoder, tiny_cfg):
    obs = Observation(s_p=tiny_cfg.rest_pose, s_v=np.zeros((16, 16)))
    with pytest.raises(ValueError):
        perception_step(tiny_cfg.rest_pose, obs, tiny_decoder, 0.0, _prec(tiny_cfg), 0.1)


# -- action ------------------------------------------------------------------


def test_action_increment_example():
    prec = Precisions(1.0, 0.0)
    inc = action_increment([0.0, 0.0], [0.1, 0.0], prec, 0.02)
    np.testing.assert_allclose(inc, [-0.002, 0.0], atol=1e-18)
    np.testing.assert_allclose(action_increment([0, 0], [0.1, 0], Precisions(2.0, 0.0), 0.02), 2 * inc)
    np.testing.assert_array_equal(action_increment([0.3, 1.0], [0.3, 1.0], prec, 0.02), [0.0, 0.0])
    with pytest.raises(ValueError):
        action_increment([0, 0], [0, 0], prec, 0.0)


def test_action_is_clamped():
    a = action_step([0.9, -0.9], [0.0, 0.0], [-100.0, 100.0], Precisions(1.0, 0.0), 0.02, 1.0, 1.0)
    np.testing.assert_array_equal(a, [1.0, -1.0])


# -- config ------------------------------------------------------------------


def test_agent_config_defaults_and_validation():
    cfg = AgentConfig()
    assert cfg.dt == pytest.approx(0.02)
    assert cfg.gamma0 == 0.01
    with pytest.raises(ConfigError):
        cfg.with_overrides({"gamma0": "0"})
    with pytest.raises(ConfigError):
        cfg.with_overrides({"decay_time_unit": "weeks"})
    assert cfg.precisions(64 * 64).sigma_v_inv == pytest.approx(1.0 / 4096)


# -- trials ------------------------------------------------------------------


def test_trial_shape_and_columns(tiny_decoder, tiny_cfg):
    tr = run_trial(tiny_cfg, tiny_decoder, SHORT, "left", "sync", seed=5)
    assert len(tr) == 150 and not tr.aborted
    assert tr.t[0] == pytest.approx(0.02) and tr.t[-1] == pytest.approx(3.0)
    rows = list(csv.reader(io.StringIO(tr.to_csv())))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) == 151
    assert [e.t_v for e in tr.events] == [2.0]


def test_trial_is_deterministic(tiny_decoder, tiny_cfg):
    a = run_trial(tiny_cfg, tiny_decoder, SHORT, "right", "async", seed=9)
    b = run_trial(tiny_cfg, tiny_decoder, SHORT, "right", "async", seed=9)
    assert a.to_csv() == b.to_csv()
    c = run_trial(tiny_cfg, tiny_decoder, SHORT, "right", "async", seed=10)
    assert a.to_csv() != c.to_csv()


def test_trial_keeps_the_arm_clamped(tiny_decoder, tiny_cfg):
    tr = run_trial(tiny_cfg, tiny_decoder, SHORT, "left", "sync", seed=1)
    q = np.array(tr.q_true)
    assert np.all(q == tiny_cfg.rest_pose)
    np.testing.assert_array_equal(tr.initial_mu, tiny_cfg.rest_pose)


def test_gamma_in_trace_follows_schedule(tiny_decoder, tiny_cfg):
    tr = run_trial(tiny_cfg, tiny_decoder, SHORT, "center", "sync", seed=2)
    g = np.array(tr.gamma)
    ev = tr.events[0]
    k = int(np.argmax(np.array(tr.t) >= ev.t_t - 1e-12))
    assert np.all(g[:k] == 0.01)
    assert g[k] > 0.01


def test_action_disabled_leaves_action_zero(tiny_decoder, tiny_cfg):
    cfg = SHORT.with_overrides({"action_enabled": "false"})
    tr = run_trial(tiny_cfg, tiny_decoder, cfg, "left", "sync", seed=1)
    assert not np.any(np.array(tr.action))


def test_non_finite_update_aborts_with_partial_trace(tiny_decoder, tiny_cfg, monkeypatch):
    real = agent_mod.perception_step
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] > 7:
            raise NonFiniteError("belief update became non-finite")
        return real(*args, **kwargs)

    monkeypatch.setattr(agent_mod, "perception_step", flaky)
    tr = run_trial(tiny_cfg, tiny_decoder, SHORT, "left", "sync", seed=1)
    assert tr.aborted and len(tr) == 7
    assert "iteration 7" in tr.error
