"""Pilot measurements behind the frozen test thresholds.

Loads (or trains) the default decoder and VAE, then prints the quantities
that the model and acceptance tests compare against:

* per-pixel training MSE and the grid / held-out MSE ratios,
* Spearman correlation between VAE latent means and joint angles,
* the largest single-step free-energy increase for a sweep of belief
  step sizes (stability margin of the default lr),
* jacobian_image peak statistics over a 10x10 belief grid.

Usage: python scripts/pilot_thresholds.py [--out notes/pilot.txt]
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from deeprhi.agent import AgentConfig, Observation, free_energy, perception_step
from deeprhi.env import CONDITIONS, EnvConfig, render
from deeprhi.models import TrainConfig, ensure_model, generate_dataset, held_out_dataset, jacobian_image

ROOT = Path(__file__).resolve().parent.parent


def model_fit(models, ds, held, emit):
    idx = np.random.default_rng(0).choice(len(ds), 50, replace=False)
    for kind, m in models.items():
        train = float(m.meta["final_mse"])
        grid = float(np.mean((m.decode_batch(ds.states[idx]) - ds.images[idx]) ** 2))
        out = float(np.mean((m.decode_batch(held.states) - held.images) ** 2))
        emit(f"{kind}: train mse {train:.3e}, grid/train {grid / train:.2f}, held-out/train {out / train:.2f}")


def latent_alignment(vae, ds, emit):
    mean, _ = vae.encode(ds.images)
    rho = np.array([[spearmanr(mean[:, i], ds.states[:, j])[0] for j in range(2)] for i in range(2)])
    emit(f"vae latent/state Spearman matrix {np.round(rho, 4).tolist()}")


def descent_margin(models, env_cfg, emit, lrs=(0.05, 0.1, 0.2, 0.5, 1.0)):
    agent = AgentConfig()
    prec = agent.precisions(env_cfg.resolution ** 2)
    bounds = (env_cfg.lower - agent.mu_margin, env_cfg.upper + agent.mu_margin)
    for lr in lrs:
        rng = np.random.default_rng(2)
        worst = -np.inf
        for m in models.values():
            for cond in CONDITIONS:
                obs = Observation(env_cfg.rest_pose.copy(), render(env_cfg.rest_pose, env_cfg.offset(cond), env_cfg))
                for _ in range(5):
                    mu = rng.uniform(env_cfg.lower, env_cfg.upper)
                    prev = free_energy(mu, obs, m, prec, 1.0)
                    for _ in range(100):
                        mu = perception_step(mu, obs, m, 1.0, prec, lr, bounds).mu
                        F = free_energy(mu, obs, m, prec, 1.0)
                        worst = max(worst, F - prev)
                        prev = F
        emit(f"lr {lr}: largest per-step change of F at gamma=1 {worst:+.3e}")


def jacobian_stats(models, env_cfg, emit):
    s = np.linspace(env_cfg.shoulder_min, env_cfg.shoulder_max, 10)
    e = np.linspace(env_cfg.elbow_min, env_cfg.elbow_max, 10)
    for kind, m in models.items():
        t0 = time.perf_counter()
        peaks = np.array([np.abs(jacobian_image(m, [a, b])).max() for a in s for b in e])
        emit(f"{kind}: max|J| mean {peaks.mean():.4g} median {np.median(peaks):.4g} peak {peaks.max():.4g} "
             f"({time.perf_counter() - t0:.1f} s)")


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", help="also write the report here")
    args = p.parse_args(argv)
    lines = []

    def emit(line):
        print(line, flush=True)
        lines.append(line)

    env_cfg = EnvConfig()
    ds = generate_dataset((50, 50), env_cfg)
    held = held_out_dataset((50, 50), env_cfg)
    models = {
        kind: ensure_model(kind, ROOT / "models" / f"{kind}.rhiw", ds, TrainConfig(), env_cfg.lower, env_cfg.upper)
        for kind in ("decoder", "vae")
    }
    model_fit(models, ds, held, emit)
    latent_alignment(models["vae"], ds, emit)
    descent_margin(models, env_cfg, emit)
    jacobian_stats(models, env_cfg, emit)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text("\n".join(lines) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
