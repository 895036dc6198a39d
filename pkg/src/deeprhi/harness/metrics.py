from __future__ import annotations

import numpy as np

from ..agent import TrialTrace
from ..env import EnvConfig
from ..kinematics import fk_jacobian, forward_kinematics


def compute_drift(trace: TrialTrace, env_cfg: EnvConfig, measure: str = "final") -> float:
    """Lateral displacement (cm) of the believed hand from where the trial began.

    ``measure="final"`` uses the last belief, ``"mean"`` the time-averaged
    believed hand position. Positive is rightward.
    """
    if len(trace) == 0:
        raise ValueError("empty trace")
    mu0 = trace.initial_mu if trace.initial_mu is not None else env_cfg.rest_pose
    x0 = forward_kinematics(mu0, env_cfg.geometry)[0]
    mu = np.asarray(trace.mu).reshape(-1, 2)
    if measure == "final":
        x = forward_kinematics(mu[-1], env_cfg.geometry)[0]
    elif measure == "mean":
        x = np.mean([forward_kinematics(m, env_cfg.geometry)[0] for m in mu])
    else:
        raise ValueError(f"unknown drift measure {measure!r}")
    return 100.0 * float(x - x0)


def smooth(series: np.ndarray, window: int) -> np.ndarray:
    """Centred moving average; the window shrinks at the ends."""
    if window < 1:
        raise ValueError("window must be >= 1")
    series = np.asarray(series, dtype=np.float64)
    if window == 1:
        return series.copy()
    half = window // 2
    csum = np.concatenate(([0.0], np.cumsum(series)))
    n = len(series)
    lo = np.clip(np.arange(n) - half, 0, n)
    hi = np.clip(np.arange(n) - half + window, 0, n)
    return (csum[hi] - csum[lo]) / (hi - lo)


def compute_force_proxy(trace: TrialTrace, env_cfg: EnvConfig, window: int = 1) -> np.ndarray:
    """Horizontal end-effector component of J(q_true) @ a at each iteration."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    a = np.asarray(trace.action).reshape(-1, 2)
    q = np.asarray(trace.q_true).reshape(-1, 2) if trace.q_true else np.tile(env_cfg.rest_pose, (len(a), 1))
    fx = np.array([fk_jacobian(qk, env_cfg.geometry)[0] @ ak for qk, ak in zip(q, a)])
    return smooth(fx, window)


def gamma_tail_mean(trace: TrialTrace, tail_fraction: float = 0.5) -> float:
    g = np.asarray(trace.gamma)
    return float(g[int(len(g) * (1.0 - tail_fraction)):].mean())
