"""Shared fixtures.

Small 16x16 models train in seconds and serve the unit tests. The default
64x64 models are loaded from ``models/`` when their recorded training
fingerprint matches the default configuration and retrained otherwise
(about half an hour on one core).
"""

from pathlib import Path

import numpy as np
import pytest

from deeprhi.env import EnvConfig
from deeprhi.models import TrainConfig, ensure_model, generate_dataset, train_decoder, train_vae

ROOT = Path(__file__).resolve().parent.parent
MODEL_DIR = ROOT / "models"
DEFAULT_GRID = (50, 50)
_ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the summary."""
    return _ACCEPTANCE_LINES


@pytest.fixture(scope="session")
def env_cfg():
    return EnvConfig()


@pytest.fixture(scope="session")
def tiny_cfg():
    return EnvConfig(resolution=16)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_cfg):
    return generate_dataset((6, 6), tiny_cfg)


@pytest.fixture(scope="session")
def tiny_train_cfg():
    return TrainConfig(epochs=40, batch_size=8, lr=3e-3, seed=1)


@pytest.fixture(scope="session")
def tiny_decoder(tiny_dataset, tiny_cfg, tiny_train_cfg):
    return train_decoder(tiny_dataset, tiny_train_cfg, tiny_cfg.lower, tiny_cfg.upper)


@pytest.fixture(scope="session")
def tiny_vae(tiny_dataset, tiny_cfg, tiny_train_cfg):
    return train_vae(tiny_dataset, tiny_train_cfg, tiny_cfg.lower, tiny_cfg.upper)


@pytest.fixture(scope="session")
def default_dataset(env_cfg):
    return generate_dataset(DEFAULT_GRID, env_cfg)


@pytest.fixture(scope="session")
def default_models(default_dataset, env_cfg):
    cfg = TrainConfig()
    return {
        kind: ensure_model(kind, MODEL_DIR / f"{kind}.rhiw", default_dataset, cfg, env_cfg.lower, env_cfg.upper)
        for kind in ("decoder", "vae")
    }


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
