"""Active-inference agent for the rubber-hand protocol.

The belief mu (two joint angles) descends the free energy

    F = 1/2 Sp |s_p - mu|^2 + 1/2 gamma Sv |s_v - g_v(mu)|^2

where g_p(mu) = mu, g_v is the learned decoder, Sp and Sv are precisions and
gamma is the causal belief gating vision. The internal dynamics term is zero
(no prior motion of the body state), so the corresponding precision only
multiplies a vanishing error and is carried for completeness. Action is a
joint-velocity command that integrates the proprioceptive error scaled by dt.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError
from .causal import CausalBelief, CausalParams, decay_update, event_update
from .config import ConfigError, KVConfig
from .env import ArmEnv, EnvConfig, Observation, StimulationEvent
from .kinematics import fk_jacobian, forward_kinematics
from .models.visual import VisualModel

log = logging.getLogger(__name__)

TRACE_COLUMNS = (
    "iter", "t_s", "mu_shoulder_rad", "mu_elbow_rad", "sp_shoulder_rad", "sp_elbow_rad",
    "a_shoulder_rads", "a_elbow_rads", "gamma", "free_energy", "ee_mu_x_m", "ee_mu_y_m",
    "ee_accel_x_ms2", "oob_flag",
)


@dataclass(frozen=True)
class AgentConfig(KVConfig):
    sigma_p_inv: float = 1.0
    # per normalized pixel^2, divided by the pixel count at run time
    sigma_v_inv: float = 1.0
    sigma_mu_inv: float = 0.0
    lr: float = 0.1
    lr_a: float = 1.0
    action_clamp: float = 1.0
    mu_margin: float = 0.1
    action_enabled: bool = True
    gamma0: float = 0.01
    sigma_c: float = 0.15
    uniform_density: float = 0.5
    r_decay: float = 0.1
    decay_time_unit: str = "multiply"
    duration_s: float = 30.0
    iterations: int = 1500

    def validate(self) -> None:
        if min(self.sigma_p_inv, self.sigma_v_inv, self.sigma_mu_inv) < 0:
            raise ConfigError("precisions must be non-negative")
        if self.lr <= 0 or self.lr_a < 0 or self.action_clamp <= 0 or self.mu_margin < 0:
            raise ConfigError("invalid step sizes or clamps")
        if not 0 < self.gamma0 <= 1:
            raise ConfigError("gamma0 must lie in (0, 1]")
        if self.duration_s <= 0 or self.iterations < 1:
            raise ConfigError("need duration_s > 0 and iterations >= 1")
        self.causal_params()

    @property
    def dt(self) -> float:
        return self.duration_s / self.iterations

    def causal_params(self) -> CausalParams:
        try:
            return CausalParams(
                self.sigma_c, self.uniform_density, self.r_decay, self.dt, self.decay_time_unit
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def precisions(self, n_pixels: int) -> "Precisions":
        return Precisions(self.sigma_p_inv, self.sigma_v_inv / n_pixels, self.sigma_mu_inv)


@dataclass(frozen=True)
class Precisions:
    sigma_p_inv: float
    sigma_v_inv: float  # per pixel
    sigma_mu_inv: float = 0.0

    def __post_init__(self):
        if min(self.sigma_p_inv, self.sigma_v_inv, self.sigma_mu_inv) < 0:
            raise ValueError("precisions must be non-negative")


@dataclass
class PerceptionResult:
    mu: np.ndarray
    mu_dot: np.ndarray
    free_energy: float
    out_of_range: bool
    visual_term: np.ndarray


def free_energy(mu, obs: Observation, model: VisualModel, prec: Precisions, gamma: float) -> float:
    e_p = obs.s_p - np.asarray(mu)
    e_v = obs.s_v - model.predict(mu)
    return 0.5 * prec.sigma_p_inv * float(e_p @ e_p) + 0.5 * gamma * prec.sigma_v_inv * float(np.sum(e_v * e_v))


def free_energy_gradient(mu, obs: Observation, model: VisualModel, prec: Precisions, gamma: float):
    """(mu_dot, F, oob, visual part) at ``mu``; mu_dot = -dF/dmu."""
    mu = np.asarray(mu, dtype=np.float64)
    e_p = obs.s_p - mu
    pred = model.evaluate(mu, lambda img: gamma * prec.sigma_v_inv * (obs.s_v - img))
    e_v = obs.s_v - pred.image
    visual = pred.adjoint
    mu_dot = prec.sigma_p_inv * e_p + visual
    F = 0.5 * prec.sigma_p_inv * float(e_p @ e_p) + 0.5 * gamma * prec.sigma_v_inv * float(np.sum(e_v * e_v))
    return mu_dot, F, pred.out_of_range, visual


def perception_step(
    mu,
    obs: Observation,
    model: VisualModel,
    gamma: float,
    prec: Precisions,
    lr: float,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
) -> PerceptionResult:
    """One Euler step of the belief along -dF/dmu, then clamp to ``bounds``."""
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma={gamma} outside (0, 1]")
    mu_dot, F, oob, visual = free_energy_gradient(mu, obs, model, prec, gamma)
    new = np.asarray(mu, dtype=np.float64) + lr * mu_dot
    if not np.all(np.isfinite(new)):
        raise NonFiniteError("belief update became non-finite")
    if bounds is not None:
        clipped = np.clip(new, bounds[0], bounds[1])
        oob = oob or bool(np.any(clipped != new))
        new = clipped
    return PerceptionResult(new, mu_dot, F, oob, visual)


def action_increment(mu, s_p, prec: Precisions, dt: float) -> np.ndarray:
    """da/dt = -dt * Sp * (s_p - mu): the sensor moves dt per unit joint velocity."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return -dt * prec.sigma_p_inv * (np.asarray(s_p) - np.asarray(mu))


def action_step(a, mu, s_p, prec: Precisions, dt: float, lr_a: float, clamp: float) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64) + lr_a * action_increment(mu, s_p, prec, dt)
    return np.clip(a, -clamp, clamp)


@dataclass
class TrialTrace:
    condition: str
    mode: str
    seed: int
    dt: float
    t: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    s_p: list = field(default_factory=list)
    action: list = field(default_factory=list)
    gamma: list = field(default_factory=list)
    free_energy: list = field(default_factory=list)
    ee_mu: list = field(default_factory=list)
    ee_accel_x: list = field(default_factory=list)
    oob: list = field(default_factory=list)
    q_true: list = field(default_factory=list)
    events: list[StimulationEvent] = field(default_factory=list)
    initial_mu: np.ndarray | None = None
    aborted: bool = False
    error: str = ""

    def __len__(self) -> int:
        return len(self.t)

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "t": np.asarray(self.t),
            "mu": np.asarray(self.mu).reshape(-1, 2),
            "s_p": np.asarray(self.s_p).reshape(-1, 2),
            "action": np.asarray(self.action).reshape(-1, 2),
            "gamma": np.asarray(self.gamma),
            "free_energy": np.asarray(self.free_energy),
            "ee_mu": np.asarray(self.ee_mu).reshape(-1, 2),
            "ee_accel_x": np.asarray(self.ee_accel_x),
            "oob": np.asarray(self.oob, dtype=int),
        }

    def rows(self):
        for k in range(len(self)):
            yield (
                k, self.t[k], self.mu[k][0], self.mu[k][1], self.s_p[k][0], self.s_p[k][1],
                self.action[k][0], self.action[k][1], self.gamma[k], self.free_energy[k],
                self.ee_mu[k][0], self.ee_mu[k][1], self.ee_accel_x[k], int(self.oob[k]),
            )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in self.rows():
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        return buf.getvalue()


def run_trial(
    env_cfg: EnvConfig,
    model: VisualModel,
    agent_cfg: AgentConfig,
    condition: str,
    mode: str,
    seed: int,
) -> TrialTrace:
    """One stimulation trial with the arm held at its resting pose.

    Per iteration: observe, update gamma (event or decay), perceive, act,
    step the clamped environment, record. Non-finite state stops the trial
    and returns the partial trace flagged as aborted.
    """
    dt = agent_cfg.dt
    rng = np.random.default_rng(seed)
    env = ArmEnv(env_cfg, condition, mode, agent_cfg.duration_s, rng, clamped=True)
    prec = agent_cfg.precisions(env_cfg.resolution ** 2)
    cparams = agent_cfg.causal_params()
    bounds = (env_cfg.lower - agent_cfg.mu_margin, env_cfg.upper + agent_cfg.mu_margin)
    geom = env_cfg.geometry

    mu = env.state.q.copy()
    a = np.zeros(2)
    belief = CausalBelief(agent_cfg.gamma0)
    trace = TrialTrace(condition, mode, seed, dt, events=list(env.schedule), initial_mu=mu.copy())

    for k in range(agent_cfg.iterations):
        t = (k + 1) * dt
        try:
            obs = env.observe(t)
            if obs.event is not None:
                belief = event_update(belief, obs.event, cparams)
            else:
                belief = decay_update(belief, t, cparams)
            res = perception_step(mu, obs, model, belief.gamma, prec, agent_cfg.lr, bounds)
            mu = res.mu
            if agent_cfg.action_enabled:
                a = action_step(a, mu, obs.s_p, prec, dt, agent_cfg.lr_a, agent_cfg.action_clamp)
            q_true = env.state.q.copy()
            env.step(a, dt)
        except (NonFiniteError, FloatingPointError) as exc:
            trace.aborted = True
            trace.error = f"iteration {k}: {exc}"
            log.warning("trial %s/%s seed %d aborted: %s", condition, mode, seed, trace.error)
            break
        trace.t.append(t)
        trace.mu.append(mu.copy())
        trace.s_p.append(obs.s_p.copy())
        trace.action.append(a.copy())
        trace.gamma.append(belief.gamma)
        trace.free_energy.append(res.free_energy)
        trace.ee_mu.append(forward_kinematics(mu, geom))
        trace.ee_accel_x.append(float((fk_jacobian(q_true, geom) @ a)[0]))
        trace.oob.append(res.out_of_range)
        trace.q_true.append(q_true)
    return trace
