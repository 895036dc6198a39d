"""Mini-batch training (Adam or SGD with momentum) for the decoder and the VAE."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..autodiff import Graph, NonFiniteError
from ..config import ConfigError, KVConfig
from . import networks
from .dataset import Dataset
from .visual import VisualModel

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig(KVConfig):
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    momentum: float = 0.9
    # step schedule: multiply lr by lr_step_gamma every lr_step_epochs (0 = fixed)
    lr_step_epochs: int = 0
    lr_step_gamma: float = 0.5
    optimizer: str = "adam"
    seed: int = 0
    beta: float = 1.0
    align_weight: float = 100.0
    # hidden-layer nonlinearity of the decoder; tanh keeps g_v smooth in mu
    activation: str = "tanh"

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ConfigError("need lr > 0 and 0 <= momentum < 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.beta < 0 or self.align_weight < 0:
            raise ConfigError("beta and align_weight must be non-negative")
        if self.activation not in networks.ACTIVATIONS:
            raise ConfigError(f"activation must be one of {networks.ACTIVATIONS}")


class SGDMomentum:
    def __init__(self, params: dict[str, np.ndarray], lr: float, momentum: float):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        # sorted for a fixed update order
        for name in sorted(self.params):
            v = self.velocity[name]
            v *= self.momentum
            v += grads[name]
            self.params[name] -= self.lr * v


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in sorted(self.params):
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            self.params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _lr_at(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_step_epochs <= 0:
        return cfg.lr
    return cfg.lr * cfg.lr_step_gamma ** (epoch // cfg.lr_step_epochs)


def _run_epochs(graph: Graph, feed, n: int, cfg: TrainConfig, rng, sample_rng=None, on_epoch=None):
    if cfg.optimizer == "adam":
        opt = Adam(graph.params, cfg.lr, beta1=cfg.momentum)
    else:
        opt = SGDMomentum(graph.params, cfg.lr, cfg.momentum)
    history = []
    for epoch in range(cfg.epochs):
        opt.lr = _lr_at(cfg, epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                out = graph.forward_eval(feed(idx), rng=sample_rng)
                grads = graph.backward_grad({"loss": np.array(1.0)})
            except NonFiniteError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}") from exc
            loss = float(out["loss"])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"epoch {epoch}: loss became {loss}")
            total += loss * len(idx)
            opt.step(grads.params)
        history.append(total / n)
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
        log.debug("epoch %d loss %.6g", epoch, history[-1])
    return history


def _recon_mse(model: VisualModel, ds: Dataset) -> float:
    """Per-pixel MSE of the decoder on the dataset's own states."""
    pred = model.decode_batch(ds.states)
    return float(np.mean((pred - ds.images) ** 2))


def train_decoder(ds: Dataset, cfg: TrainConfig, lower, upper, on_epoch=None) -> VisualModel:
    """Regress images on normalized joint angles."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    res = ds.images.shape[1]
    rng = np.random.default_rng(cfg.seed)
    graph = networks.decoder_training_graph(res, rng, cfg.activation)

    def feed(idx):
        return {"z": ds.states[idx], "target": ds.images[idx]}

    history = _run_epochs(graph, feed, len(ds), cfg, rng, on_epoch=on_epoch)
    model = VisualModel(
        kind="decoder",
        decoder=networks.subset(graph.params, "dec"),
        encoder=None,
        resolution=res,
        lower=np.asarray(lower, dtype=np.float64),
        upper=np.asarray(upper, dtype=np.float64),
    )
    model.meta.update(_meta(cfg, ds, history))
    model.meta["final_mse"] = repr(_recon_mse(model, ds))
    return model


def train_vae(ds: Dataset, cfg: TrainConfig, lower, upper, on_epoch=None) -> VisualModel:
    """Encoder/decoder trained on reconstruction + beta * KL (+ latent alignment)."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    res = ds.images.shape[1]
    rng = np.random.default_rng(cfg.seed)
    graph = networks.vae_training_graph(res, cfg.beta, cfg.align_weight, rng, cfg.activation)
    # a separate stream for reparameterization noise keeps batch order independent of it
    sample_rng = np.random.default_rng([cfg.seed, 1])

    def feed(idx):
        return {"image": ds.images[idx], "state": ds.states[idx]}

    history = _run_epochs(graph, feed, len(ds), cfg, rng, sample_rng, on_epoch=on_epoch)
    model = VisualModel(
        kind="vae",
        decoder=networks.subset(graph.params, "dec"),
        encoder=networks.subset(graph.params, "enc"),
        resolution=res,
        lower=np.asarray(lower, dtype=np.float64),
        upper=np.asarray(upper, dtype=np.float64),
    )
    model.meta.update(_meta(cfg, ds, history))
    model.meta["beta"] = repr(cfg.beta)
    model.meta["align_weight"] = repr(cfg.align_weight)
    model.meta["final_mse"] = repr(_recon_mse(model, ds))
    return model


def _meta(cfg: TrainConfig, ds: Dataset, history) -> dict[str, str]:
    return {
        "epochs": str(cfg.epochs),
        "seed": str(cfg.seed),
        "final_loss": repr(history[-1]),
        "dataset_hash": ds.content_hash,
        "lr": repr(cfg.lr),
        "batch_size": str(cfg.batch_size),
        "optimizer": cfg.optimizer,
        "momentum": repr(cfg.momentum),
        "lr_step_epochs": str(cfg.lr_step_epochs),
        "lr_step_gamma": repr(cfg.lr_step_gamma),
        "activation": cfg.activation,
    }


def _fingerprint(kind: str, cfg: TrainConfig, ds: Dataset) -> dict[str, str]:
    fp = {k: v for k, v in _meta(cfg, ds, [float("nan")]).items() if k != "final_loss"}
    if kind == "vae":
        fp["beta"] = repr(cfg.beta)
        fp["align_weight"] = repr(cfg.align_weight)
    return fp


def ensure_model(kind: str, path, ds: Dataset, cfg: TrainConfig, lower, upper, on_epoch=None) -> VisualModel:
    """Load ``path`` if it was trained by ``cfg`` on ``ds``; otherwise train and save it."""
    path = Path(path)
    if path.exists():
        model = VisualModel.load(path)
        want = _fingerprint(kind, cfg, ds)
        if model.kind == kind and all(model.meta.get(k) == v for k, v in want.items()):
            return model
        log.info("%s does not match the requested training run, retraining", path)
    trainer = train_decoder if kind == "decoder" else train_vae
    model = trainer(ds, cfg, lower, upper, on_epoch=on_epoch)
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path)
    return model
