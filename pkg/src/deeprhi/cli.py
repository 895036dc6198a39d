"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 divergence (training or a
trial), 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .agent import AgentConfig
from .causal import steady_state_gamma
from .config import ConfigError
from .env import CONDITIONS, EnvConfig, RenderError, render, write_pgm
from .harness.experiment import ExperimentConfig, report, run_experiment
from .models import Dataset, TrainConfig, TrainingDiverged, generate_dataset, train_decoder, train_vae

log = logging.getLogger("deeprhi")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3


def _overrides(pairs: list[str] | None) -> dict[str, str]:
    out = {}
    for p in pairs or []:
        if "=" not in p:
            raise ConfigError(f"--set expects key=value, got {p!r}")
        k, _, v = p.partition("=")
        out[k.strip()] = v.strip()
    return out


def _env(args) -> EnvConfig:
    cfg = EnvConfig.from_file(args.env_config) if args.env_config else EnvConfig()
    return cfg.with_overrides(_overrides(getattr(args, "env_set", None)))


def _grid(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError as exc:
        raise ConfigError(f"grid must look like 50x50, got {text!r}") from exc


def cmd_dataset_gen(args) -> int:
    cfg = _env(args)
    ds = generate_dataset(_grid(args.grid), cfg)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    ds.save(args.out)
    print(f"{len(ds)} samples -> {args.out} (sha256 {ds.content_hash[:16]})")
    return EXIT_OK


def cmd_train(args) -> int:
    env_cfg = _env(args)
    tcfg = TrainConfig.from_file(args.train_config) if args.train_config else TrainConfig()
    tcfg = tcfg.with_overrides(_overrides(args.set))
    if args.dataset and Path(args.dataset).exists():
        ds = Dataset.load(args.dataset)
    else:
        ds = generate_dataset(_grid(args.grid), env_cfg)

    def progress(epoch, loss):
        if epoch % 10 == 0 or epoch == tcfg.epochs - 1:
            log.info("epoch %d loss %.5g", epoch, loss)

    trainer = train_decoder if args.model == "decoder" else train_vae
    model = trainer(ds, tcfg, env_cfg.lower, env_cfg.upper, on_epoch=progress)
    out = args.out or f"models/{args.model}.rhiw"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    print(f"{args.model}: per-pixel MSE {float(model.meta['final_mse']):.3g} -> {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    ov = _overrides(args.set)
    for flag, key in (("model", "model_path"), ("seed", "master_seed"), ("out_dir", "out_dir"),
                      ("trials", "trials_per_cell"), ("workers", "workers"), ("run_id", "run_id")):
        value = getattr(args, flag)
        if value is not None:
            ov[key] = str(value)
    cfg = cfg.with_overrides(ov)
    res = run_experiment(cfg)
    print(res.summary_csv, end="")
    print(f"run directory: {res.run_dir}")
    return EXIT_DIVERGED if any(c.incomplete for c in res.cells) else EXIT_OK


def cmd_report(args) -> int:
    res = report(args.run_dir)
    print(res.summary_csv, end="")
    return EXIT_DIVERGED if any(c.incomplete for c in res.cells) else EXIT_OK


def cmd_render_check(args) -> int:
    cfg = _env(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mx, _ = cfg.meters_per_pixel
    for cond in CONDITIONS:
        img = render(cfg.rest_pose, cfg.offset(cond), cfg)
        write_pgm(out / f"rest_{cond}.pgm", img)
        cols = np.arange(img.shape[1])
        cx = float((img.sum(axis=0) * cols).sum() / img.sum())
        print(f"{cond:>6}: lit mass {img.sum():.2f}, centroid column {cx:.2f}, offset {cfg.offset(cond) / mx:+.2f} px")
    return EXIT_OK


def cmd_gamma_sim(args) -> int:
    acfg = AgentConfig.from_file(args.agent_config) if args.agent_config else AgentConfig()
    acfg = acfg.with_overrides(_overrides(args.set))
    params = acfg.causal_params()
    env_cfg = EnvConfig()
    print("seed,mode,tail_mean,tail_min,tail_max")
    for seed in range(args.seeds):
        for mode in args.modes.split(","):
            stats = steady_state_gamma(
                mode, params, args.n_events, np.random.default_rng(seed),
                env_cfg.event_interval, env_cfg.max_delay(mode), gamma0=acfg.gamma0,
            )
            print(f"{seed},{mode},{stats.mean!r},{stats.min!r},{stats.max!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deeprhi", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def env_flags(sp):
        sp.add_argument("--env-config", help="environment config file")
        sp.add_argument("--env-set", action="append", metavar="KEY=VALUE", help="override an env key")

    ds = sub.add_parser("dataset", help="training-set utilities")
    ds_sub = ds.add_subparsers(dest="action", required=True)
    gen = ds_sub.add_parser("gen", help="render the training grid")
    env_flags(gen)
    gen.add_argument("--grid", default="50x50")
    gen.add_argument("--out", default="data/dataset.npz")
    gen.set_defaults(func=cmd_dataset_gen)

    tr = sub.add_parser("train", help="train a visual generative model")
    env_flags(tr)
    tr.add_argument("--model", choices=("decoder", "vae"), required=True)
    tr.add_argument("--dataset", help="dataset .npz (generated on the fly if absent)")
    tr.add_argument("--grid", default="50x50")
    tr.add_argument("--train-config")
    tr.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a training key")
    tr.add_argument("--out")
    tr.set_defaults(func=cmd_train)

    run = sub.add_parser("run", help="run the stimulation protocol")
    run.add_argument("--config", help="experiment config file")
    run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override an experiment key")
    run.add_argument("--model", help="model_path")
    run.add_argument("--seed", type=int, help="master_seed")
    run.add_argument("--out-dir", help="out_dir")
    run.add_argument("--run-id", help="run_id")
    run.add_argument("--trials", type=int, help="trials_per_cell")
    run.add_argument("--workers", type=int, help="workers")
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="rebuild summary and plots from trace CSVs")
    rep.add_argument("run_dir")
    rep.set_defaults(func=cmd_report)

    rc = sub.add_parser("render-check", help="dump resting-pose images as PGM")
    env_flags(rc)
    rc.add_argument("--out", default="golden")
    rc.set_defaults(func=cmd_render_check)

    gs = sub.add_parser("gamma-sim", help="causal-belief trajectories for random schedules")
    gs.add_argument("--agent-config")
    gs.add_argument("--set", action="append", metavar="KEY=VALUE")
    gs.add_argument("--modes", default="sync,async")
    gs.add_argument("--n-events", type=int, default=14)
    gs.add_argument("--seeds", type=int, default=10)
    gs.set_defaults(func=cmd_gamma_sim)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except RenderError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
