from .experiment import (
    CellSummary,
    ExperimentConfig,
    ExperimentResult,
    child_seed,
    read_trace_csv,
    report,
    run_experiment,
    summarize,
)
from .metrics import compute_drift, compute_force_proxy, gamma_tail_mean, smooth
from .plots import emit_plots

__all__ = [
    "CellSummary",
    "ExperimentConfig",
    "ExperimentResult",
    "child_seed",
    "compute_drift",
    "compute_force_proxy",
    "emit_plots",
    "gamma_tail_mean",
    "read_trace_csv",
    "report",
    "run_experiment",
    "smooth",
    "summarize",
]
