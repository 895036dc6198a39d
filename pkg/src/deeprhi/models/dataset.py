from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..env import EnvConfig, render


def normalize(q, lower, upper) -> np.ndarray:
    """Affine map of joint angles from [lower, upper] to [-1, 1]."""
    return 2.0 * (np.asarray(q) - lower) / (upper - lower) - 1.0


def denormalize(z, lower, upper) -> np.ndarray:
    return lower + (np.asarray(z) + 1.0) * 0.5 * (upper - lower)


@dataclass
class Dataset:
    states: np.ndarray  # (N, 2) normalized joint angles
    images: np.ndarray  # (N, H, W)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.states, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.images, dtype="<f8").tobytes())
        return h.hexdigest()

    def save(self, path) -> None:
        meta = {k: str(v) for k, v in self.meta.items()}
        meta["content_hash"] = self.content_hash
        np.savez(path, states=self.states, images=self.images, meta_keys=list(meta), meta_vals=list(meta.values()))

    @classmethod
    def load(cls, path) -> "Dataset":
        with np.load(path) as f:
            meta = dict(zip(f["meta_keys"].tolist(), f["meta_vals"].tolist()))
            ds = cls(states=f["states"].copy(), images=f["images"].copy(), meta=meta)
        stored = meta.pop("content_hash", None)
        if stored is not None and stored != ds.content_hash:
            raise ValueError(f"{path}: content hash mismatch")
        return ds


def generate_dataset(grid: tuple[int, int], cfg: EnvConfig) -> Dataset:
    """Render the centred arm on a uniform grid spanning the joint limits."""
    n_s, n_e = grid
    if n_s < 2 or n_e < 2:
        raise ValueError("need at least 2 samples per joint")
    shoulders = np.linspace(cfg.shoulder_min, cfg.shoulder_max, n_s)
    elbows = np.linspace(cfg.elbow_min, cfg.elbow_max, n_e)
    qs = np.array([(s, e) for s in shoulders for e in elbows])
    images = np.stack([render(q, 0.0, cfg) for q in qs])
    states = normalize(qs, cfg.lower, cfg.upper)
    meta = {"grid": f"{n_s}x{n_e}", "offset": 0.0, "resolution": cfg.resolution}
    return Dataset(states=states, images=images, meta=meta)


def held_out_dataset(grid: tuple[int, int], cfg: EnvConfig) -> Dataset:
    """Grid shifted by half a cell in both joints (interior points only)."""
    n_s, n_e = grid
    ds_ = (cfg.shoulder_max - cfg.shoulder_min) / (n_s - 1)
    de_ = (cfg.elbow_max - cfg.elbow_min) / (n_e - 1)
    shoulders = cfg.shoulder_min + ds_ * (np.arange(n_s - 1) + 0.5)
    elbows = cfg.elbow_min + de_ * (np.arange(n_e - 1) + 0.5)
    qs = np.array([(s, e) for s in shoulders for e in elbows])
    images = np.stack([render(q, 0.0, cfg) for q in qs])
    return Dataset(normalize(qs, cfg.lower, cfg.upper), images, {"grid": "held-out"})


def load_or_generate(path: Path | None, grid, cfg: EnvConfig) -> Dataset:
    if path is not None and Path(path).exists():
        return Dataset.load(path)
    ds = generate_dataset(grid, cfg)
    if path is not None:
        ds.save(path)
    return ds
