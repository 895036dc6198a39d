"""Left/Center/Right x sync/async protocol runner and its on-disk layout.

    out/<run-id>/
        traces/<condition>_<mode>_<trial>.csv          per-iteration trace
        traces/<condition>_<mode>_<trial>_events.csv   stimulation schedule
        summary.csv
        cells.csv
        plots/
        resolved-config.txt
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..agent import TRACE_COLUMNS, AgentConfig, TrialTrace, run_trial
from ..config import ConfigError, KVConfig, parse_kv
from ..env import CONDITIONS, MODES, EnvConfig, StimulationEvent
from ..models.visual import VisualModel
from .metrics import compute_drift, compute_force_proxy, gamma_tail_mean
from .plots import emit_plots

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = (
    "condition", "mode", "trial", "drift_cm", "mean_abs_force_proxy", "gamma_tail_mean", "aborted_flag",
)


@dataclass(frozen=True)
class ExperimentConfig(KVConfig):
    conditions: tuple[str, ...] = CONDITIONS
    modes: tuple[str, ...] = MODES
    trials_per_cell: int = 5
    duration_s: float = 30.0
    iterations: int = 1500
    model_path: str = "models/vae.rhiw"
    env_config: str = ""
    agent_config: str = ""
    master_seed: int = 0
    out_dir: str = "out"
    run_id: str = ""
    drift_measure: str = "final"
    smoothing_window: int = 1
    workers: int = 1

    def validate(self) -> None:
        if self.iterations < 1 or self.duration_s <= 0 or self.trials_per_cell < 1:
            raise ConfigError("need iterations >= 1, duration_s > 0, trials_per_cell >= 1")
        bad = set(self.conditions) - set(CONDITIONS) | set(self.modes) - set(MODES)
        if bad or not self.conditions or not self.modes:
            raise ConfigError(f"invalid conditions/modes: {sorted(bad)}")
        if self.drift_measure not in ("final", "mean"):
            raise ConfigError("drift_measure must be 'final' or 'mean'")
        if self.smoothing_window < 1 or self.workers < 1:
            raise ConfigError("smoothing_window and workers must be >= 1")

    def resolved_run_id(self) -> str:
        return self.run_id or f"{Path(self.model_path).stem}-seed{self.master_seed}"


def child_seed(master: int, condition: str, mode: str, trial: int) -> int:
    """Independent per-trial seed; a pure function of its arguments."""
    ss = np.random.SeedSequence([master, CONDITIONS.index(condition), MODES.index(mode), trial])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class CellSummary:
    condition: str
    mode: str
    trials: list[int] = field(default_factory=list)
    drift: list[float] = field(default_factory=list)
    mean_abs_force: list[float] = field(default_factory=list)
    mean_force: list[float] = field(default_factory=list)
    gamma_tail: list[float] = field(default_factory=list)
    aborted: list[bool] = field(default_factory=list)
    force_mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    force_lo: np.ndarray = field(default_factory=lambda: np.zeros(0))
    force_hi: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def _ok(self, values):
        return [v for v, a in zip(values, self.aborted) if not a]

    @property
    def n_complete(self) -> int:
        return sum(not a for a in self.aborted)

    @property
    def incomplete(self) -> bool:
        return any(self.aborted)

    @staticmethod
    def _mean(v):
        return float(np.mean(v)) if v else float("nan")

    @staticmethod
    def _std(v):
        return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0

    @property
    def drift_mean(self) -> float:
        return self._mean(self._ok(self.drift))

    @property
    def drift_std(self) -> float:
        return self._std(self._ok(self.drift))

    @property
    def mean_abs_force_mean(self) -> float:
        return self._mean(self._ok(self.mean_abs_force))

    @property
    def mean_force_mean(self) -> float:
        return self._mean(self._ok(self.mean_force))

    @property
    def gamma_tail_mean(self) -> float:
        return self._mean(self._ok(self.gamma_tail))


@dataclass
class ExperimentResult:
    cells: list[CellSummary]
    traces: dict[tuple[str, str, int], TrialTrace]
    run_dir: Path | None
    summary_csv: str


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def summarize(
    traces: dict[tuple[str, str, int], TrialTrace],
    env_cfg: EnvConfig,
    cfg: ExperimentConfig,
) -> list[CellSummary]:
    cells = []
    for cond in cfg.conditions:
        for mode in cfg.modes:
            cell = CellSummary(cond, mode)
            series = []
            for trial in range(cfg.trials_per_cell):
                tr = traces[(cond, mode, trial)]
                cell.trials.append(trial)
                cell.aborted.append(bool(tr.aborted))
                if len(tr) == 0:
                    for lst in (cell.drift, cell.mean_abs_force, cell.mean_force, cell.gamma_tail):
                        lst.append(float("nan"))
                    continue
                force = compute_force_proxy(tr, env_cfg, cfg.smoothing_window)
                cell.drift.append(compute_drift(tr, env_cfg, cfg.drift_measure))
                cell.mean_abs_force.append(float(np.mean(np.abs(force))))
                cell.mean_force.append(float(np.mean(force)))
                cell.gamma_tail.append(gamma_tail_mean(tr))
                if not tr.aborted:
                    series.append(force)
            if series:
                stack = np.stack(series)
                cell.force_mean = stack.mean(axis=0)
                cell.force_lo = stack.min(axis=0)
                cell.force_hi = stack.max(axis=0)
            cells.append(cell)
    return cells


def summary_csv(cells: list[CellSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for c in cells:
        for i, trial in enumerate(c.trials):
            w.writerow([_fmt(v) for v in (
                c.condition, c.mode, trial, c.drift[i], c.mean_abs_force[i], c.gamma_tail[i], c.aborted[i],
            )])
    for c in cells:
        ok = c._ok
        w.writerow([_fmt(v) for v in (
            c.condition, c.mode, "mean", c.drift_mean, c.mean_abs_force_mean, c.gamma_tail_mean, c.incomplete,
        )])
        w.writerow([_fmt(v) for v in (
            c.condition, c.mode, "std", c.drift_std, c._std(ok(c.mean_abs_force)),
            c._std(ok(c.gamma_tail)), c.incomplete,
        )])
    return buf.getvalue()


def cells_csv(cells: list[CellSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("condition", "mode", "n_complete", "drift_mean_cm", "drift_std_cm",
                "mean_force_proxy", "mean_abs_force_proxy", "gamma_tail_mean", "incomplete"))
    for c in cells:
        w.writerow([_fmt(v) for v in (
            c.condition, c.mode, c.n_complete, c.drift_mean, c.drift_std, c.mean_force_mean,
            c.mean_abs_force_mean, c.gamma_tail_mean, c.incomplete,
        )])
    return buf.getvalue()


def events_csv(events: list[StimulationEvent]) -> str:
    lines = ["t_v_s,t_t_s,delay_s"]
    lines += [f"{e.t_v!r},{e.t_t!r},{e.delay!r}" for e in events]
    return "\n".join(lines) + "\n"


def read_trace_csv(path, events_path=None, env_cfg: EnvConfig | None = None) -> TrialTrace:
    """Rebuild a trace from its CSV (the true posture is the clamped rest pose)."""
    path = Path(path)
    cond, mode, _ = path.stem.rsplit("_", 2)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if tuple(rows[0]) != TRACE_COLUMNS:
        raise ValueError(f"{path}: unexpected header")
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(TRACE_COLUMNS))
    dt = float(data[0, 1]) if len(data) else 0.0
    tr = TrialTrace(cond, mode, seed=-1, dt=dt)
    tr.t = list(data[:, 1])
    tr.mu = list(data[:, 2:4])
    tr.s_p = list(data[:, 4:6])
    tr.action = list(data[:, 6:8])
    tr.gamma = list(data[:, 8])
    tr.free_energy = list(data[:, 9])
    tr.ee_mu = list(data[:, 10:12])
    tr.ee_accel_x = list(data[:, 12])
    tr.oob = [bool(v) for v in data[:, 13]]
    if env_cfg is not None:
        tr.initial_mu = env_cfg.rest_pose.copy()
        tr.q_true = [env_cfg.rest_pose.copy() for _ in tr.t]
    if events_path is not None and Path(events_path).exists():
        with open(events_path, newline="") as f:
            erows = list(csv.reader(f))[1:]
        tr.events = [StimulationEvent(float(r[0]), float(r[1])) for r in erows]
    return tr


def load_configs(cfg: ExperimentConfig) -> tuple[EnvConfig, AgentConfig]:
    env_cfg = EnvConfig.from_file(cfg.env_config) if cfg.env_config else EnvConfig()
    agent_cfg = AgentConfig.from_file(cfg.agent_config) if cfg.agent_config else AgentConfig()
    agent_cfg = agent_cfg.with_overrides(
        {"duration_s": repr(cfg.duration_s), "iterations": str(cfg.iterations)}
    )
    return env_cfg, agent_cfg


def _run_one(args):
    env_cfg, model, agent_cfg, cond, mode, trial, seed = args
    return (cond, mode, trial), run_trial(env_cfg, model, agent_cfg, cond, mode, seed)


def run_experiment(
    cfg: ExperimentConfig,
    model: VisualModel | None = None,
    env_cfg: EnvConfig | None = None,
    agent_cfg: AgentConfig | None = None,
    write: bool = True,
) -> ExperimentResult:
    """Run every (condition, mode, trial) cell and write the run directory."""
    if env_cfg is None or agent_cfg is None:
        e, a = load_configs(cfg)
        env_cfg = env_cfg or e
        agent_cfg = agent_cfg or a
    if model is None:
        if not Path(cfg.model_path).exists():
            raise ConfigError(f"model file {cfg.model_path} not found")
        model = VisualModel.load(cfg.model_path)
    if model.resolution != env_cfg.resolution:
        raise ConfigError(f"model resolution {model.resolution} != env resolution {env_cfg.resolution}")

    jobs = [
        (env_cfg, model, agent_cfg, cond, mode, trial, child_seed(cfg.master_seed, cond, mode, trial))
        for cond in cfg.conditions
        for mode in cfg.modes
        for trial in range(cfg.trials_per_cell)
    ]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    traces = dict(sorted(results, key=lambda kv: (
        cfg.conditions.index(kv[0][0]), cfg.modes.index(kv[0][1]), kv[0][2])))

    cells = summarize(traces, env_cfg, cfg)
    text = summary_csv(cells)
    run_dir = None
    if write:
        run_dir = write_run(cfg, env_cfg, agent_cfg, traces, cells, text)
    return ExperimentResult(cells, traces, run_dir, text)


def write_run(cfg, env_cfg, agent_cfg, traces, cells, text) -> Path:
    run_dir = Path(cfg.out_dir) / cfg.resolved_run_id()
    tdir = run_dir / "traces"
    tdir.mkdir(parents=True, exist_ok=True)
    for (cond, mode, trial), tr in traces.items():
        stem = f"{cond}_{mode}_{trial}"
        (tdir / f"{stem}.csv").write_text(tr.to_csv())
        (tdir / f"{stem}_events.csv").write_text(events_csv(tr.events))
    (run_dir / "summary.csv").write_text(text)
    (run_dir / "cells.csv").write_text(cells_csv(cells))
    emit_plots(cells, run_dir / "plots", agent_cfg.dt)
    resolved = (
        "# experiment\n" + cfg.to_text()
        + "# env\n" + "".join(f"env.{line}\n" for line in env_cfg.to_text().splitlines())
        + "# agent\n" + "".join(f"agent.{line}\n" for line in agent_cfg.to_text().splitlines())
    )
    (run_dir / "resolved-config.txt").write_text(resolved)
    return run_dir


def split_resolved(text: str) -> tuple[ExperimentConfig, EnvConfig, AgentConfig]:
    kv = parse_kv(text)
    exp = {k: v for k, v in kv.items() if "." not in k}
    env = {k[4:]: v for k, v in kv.items() if k.startswith("env.")}
    agent = {k[6:]: v for k, v in kv.items() if k.startswith("agent.")}
    return ExperimentConfig.from_dict(exp), EnvConfig.from_dict(env), AgentConfig.from_dict(agent)


def report(run_dir) -> ExperimentResult:
    """Recompute summary, cells and plots from the trace CSVs of a finished run."""
    run_dir = Path(run_dir)
    cfg, env_cfg, agent_cfg = split_resolved((run_dir / "resolved-config.txt").read_text())
    traces = {}
    for cond in cfg.conditions:
        for mode in cfg.modes:
            for trial in range(cfg.trials_per_cell):
                stem = f"{cond}_{mode}_{trial}"
                traces[(cond, mode, trial)] = read_trace_csv(
                    run_dir / "traces" / f"{stem}.csv", run_dir / "traces" / f"{stem}_events.csv", env_cfg
                )
                if len(traces[(cond, mode, trial)]) < agent_cfg.iterations:
                    traces[(cond, mode, trial)].aborted = True
    cells = summarize(traces, env_cfg, cfg)
    text = summary_csv(cells)
    (run_dir / "summary.csv").write_text(text)
    (run_dir / "cells.csv").write_text(cells_csv(cells))
    emit_plots(cells, run_dir / "plots", agent_cfg.dt)
    return ExperimentResult(cells, traces, run_dir, text)
