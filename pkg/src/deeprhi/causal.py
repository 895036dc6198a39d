"""Posterior belief that a visual and a tactile event share one cause.

Under the common-cause hypothesis the visuo-tactile delay is zero-mean
Gaussian; under separate causes it is flat. gamma is updated by Bayes' rule
whenever a tactile event completes a pair and decays between events.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env import StimulationEvent, stimulation_schedule

GAMMA_FLOOR = 1e-6


@dataclass(frozen=True)
class CausalParams:
    sigma_c: float = 0.15
    uniform_density: float = 0.5
    r_decay: float = 0.1
    dt: float = 0.02
    # "multiply": exponent = elapsed^2 * dt * r_decay
    # "divide":   exponent = elapsed^2 / dt * r_decay
    decay_time_unit: str = "multiply"
    gamma_floor: float = GAMMA_FLOOR

    def __post_init__(self):
        if self.sigma_c <= 0 or self.uniform_density <= 0:
            raise ValueError("sigma_c and uniform_density must be positive")
        if self.r_decay < 0 or self.dt <= 0:
            raise ValueError("need r_decay >= 0 and dt > 0")
        if self.decay_time_unit not in ("multiply", "divide"):
            raise ValueError(f"unknown decay_time_unit {self.decay_time_unit!r}")
        if not 0 < self.gamma_floor < 1:
            raise ValueError("gamma_floor must lie in (0, 1)")


@dataclass(frozen=True)
class CausalBelief:
    gamma: float = 0.01
    last_event_time: float | None = None

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma={self.gamma} outside (0, 1]")


def common_cause_likelihood(delay: float, sigma_c: float) -> float:
    return math.exp(-0.5 * (delay / sigma_c) ** 2) / (sigma_c * math.sqrt(2.0 * math.pi))


def _clamp(gamma: float, floor: float) -> float:
    return min(1.0, max(floor, gamma))


def event_update(belief: CausalBelief, ev: StimulationEvent, params: CausalParams) -> CausalBelief:
    if ev.t_t < ev.t_v:
        raise ValueError("tactile event precedes visual event")
    l1 = common_cause_likelihood(ev.t_v - ev.t_t, params.sigma_c)
    l2 = params.uniform_density
    g = belief.gamma
    post = l1 * g / (l1 * g + l2 * (1.0 - g))
    return CausalBelief(_clamp(post, params.gamma_floor), max(ev.t_v, ev.t_t))


def decay_update(belief: CausalBelief, t: float, params: CausalParams) -> CausalBelief:
    if belief.last_event_time is None:
        return belief
    elapsed = t - belief.last_event_time
    if elapsed < 0:
        raise ValueError(f"time {t} precedes the last event at {belief.last_event_time}")
    if params.decay_time_unit == "multiply":
        exponent = elapsed * elapsed * params.dt * params.r_decay
    else:
        exponent = elapsed * elapsed / params.dt * params.r_decay
    gamma = _clamp(belief.gamma * math.exp(-exponent), params.gamma_floor)
    return CausalBelief(gamma, belief.last_event_time)


def gamma_trajectory(
    events: list[StimulationEvent],
    params: CausalParams,
    n_iter: int,
    gamma0: float = 0.01,
) -> np.ndarray:
    """gamma after each iteration t_k = (k + 1) * dt, updating on the
    iteration where a tactile event arrives and decaying otherwise."""
    pending = sorted(events, key=lambda e: e.t_t)
    belief = CausalBelief(gamma0)
    out = np.empty(n_iter)
    for k in range(n_iter):
        t = (k + 1) * params.dt
        if pending and pending[0].t_t <= t:
            belief = event_update(belief, pending.pop(0), params)
        else:
            belief = decay_update(belief, t, params)
        out[k] = belief.gamma
    return out


@dataclass
class GammaStats:
    mean: float
    min: float
    max: float
    trajectory: np.ndarray = field(repr=False)


def steady_state_gamma(
    mode: str,
    params: CausalParams,
    n_events: int,
    rng: np.random.Generator,
    interval: float = 2.0,
    max_delay: float | None = None,
    tail_fraction: float = 0.5,
    gamma0: float = 0.01,
) -> GammaStats:
    """Simulate ``n_events`` stimulation pairs and summarize the trajectory tail."""
    if n_events < 1:
        raise ValueError("n_events must be >= 1")
    duration = (n_events + 1) * interval
    events = stimulation_schedule(mode, duration, rng, interval, max_delay)
    n_iter = int(round(duration / params.dt))
    traj = gamma_trajectory(events, params, n_iter, gamma0)
    tail = traj[int(n_iter * (1.0 - tail_fraction)):]
    return GammaStats(float(tail.mean()), float(tail.min()), float(tail.max()), traj)
