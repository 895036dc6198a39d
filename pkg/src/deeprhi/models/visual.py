"""Trained visual generative model g_v(mu) and its vector-Jacobian product."""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import Graph, load_weights, save_weights
from . import networks
from .dataset import normalize


@dataclass
class VisualEval:
    image: np.ndarray
    adjoint: np.ndarray | None
    out_of_range: bool


@dataclass
class VisualModel:
    """Decoder weights plus the joint-angle normalization that feeds them.

    Immutable after training. Each thread evaluates through its own graph
    instance, so one model can serve parallel trials.
    """

    kind: str
    decoder: dict[str, np.ndarray]
    encoder: dict[str, np.ndarray] | None
    resolution: int
    lower: np.ndarray
    upper: np.ndarray
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("decoder", "vae"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        self._local = threading.local()

    def __getstate__(self):
        state = dict(self.__dict__)
        state.pop("_local", None)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._local = threading.local()

    # -- graphs -----------------------------------------------------------

    @property
    def activation(self) -> str:
        # files written before the activation was recorded used ReLU
        return self.meta.get("activation", "relu")

    def _decoder(self) -> Graph:
        g = getattr(self._local, "decoder", None)
        if g is None:
            g = networks.decoder_graph(self.resolution, activation=self.activation)
            g.load_params(self.decoder)
            self._local.decoder = g
        return g

    def _encoder(self) -> Graph:
        if self.encoder is None:
            raise ValueError("decoder-only model has no encoder")
        g = getattr(self._local, "encoder", None)
        if g is None:
            g = Graph()
            img = g.input("image", (self.resolution, self.resolution))
            mean, logvar = networks.add_encoder(g, img, self.resolution)
            g.output("mean", mean)
            g.output("logvar", logvar)
            g.load_params(self.encoder)
            self._local.encoder = g
        return g

    # -- normalization ----------------------------------------------------

    @property
    def chain(self) -> np.ndarray:
        """d(normalized state)/d(mu), constant per joint."""
        return 2.0 / (self.upper - self.lower)

    def to_latent(self, mu) -> tuple[np.ndarray, bool]:
        mu = np.asarray(mu, dtype=np.float64)
        clipped = np.clip(mu, self.lower, self.upper)
        return normalize(clipped, self.lower, self.upper), bool(np.any(clipped != mu))

    # -- evaluation -------------------------------------------------------

    def decode_batch(self, z: np.ndarray, chunk: int = 256) -> np.ndarray:
        g = self._decoder()
        return np.concatenate(
            [g.forward_eval({"z": z[i:i + chunk]})["image"] for i in range(0, len(z), chunk)]
        )

    def evaluate(self, mu, weighted_error=None) -> VisualEval:
        """Prediction at ``mu`` and, if given an error image, the pulled-back
        gradient d g_v/d mu^T . weighted_error.

        ``mu`` outside the joint limits is clamped; the prediction and the
        Jacobian are those of the clamped point and the flag is raised.
        ``weighted_error`` may be a callable mapping the prediction to the
        error image, which saves a second forward pass.
        """
        z, oob = self.to_latent(mu)
        g = self._decoder()
        img = g.forward_eval({"z": z[None]})["image"][0]
        adj = None
        if weighted_error is not None:
            if callable(weighted_error):
                weighted_error = weighted_error(img)
            we = np.asarray(weighted_error, dtype=np.float64)
            if we.shape != img.shape:
                raise ValueError(f"error image shape {we.shape} != prediction {img.shape}")
            gz = g.backward_grad(we[None], params=False).inputs["z"][0]
            adj = gz * self.chain
        return VisualEval(image=img, adjoint=adj, out_of_range=oob)

    def predict(self, mu) -> np.ndarray:
        return self.evaluate(mu).image

    def adjoint(self, mu, weighted_error) -> np.ndarray:
        return self.evaluate(mu, weighted_error).adjoint

    def jacobian_image(self, mu) -> np.ndarray:
        """Full Jacobian d g_v/d mu as (2, H, W), one column per joint from
        a single batched forward-tangent pass."""
        z, _ = self.to_latent(mu)
        g = self._decoder()
        g.forward_eval({"z": z[None]})
        out = g.forward_tangent({"z": np.diag(self.chain)})
        return next(iter(out.values())).reshape(2, self.resolution, self.resolution)

    def encode(self, images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = self._encoder().forward_eval({"image": np.asarray(images)})
        return out["mean"], out["logvar"]

    # -- persistence ------------------------------------------------------

    def all_params(self) -> dict[str, np.ndarray]:
        params = dict(self.decoder)
        if self.encoder is not None:
            params.update(self.encoder)
        return params

    def save(self, path) -> None:
        meta = dict(self.meta)
        meta.update(
            kind=self.kind,
            resolution=str(self.resolution),
            norm_lower=",".join(repr(float(v)) for v in self.lower),
            norm_upper=",".join(repr(float(v)) for v in self.upper),
        )
        save_weights(path, self.all_params(), meta)

    @classmethod
    def load(cls, path) -> "VisualModel":
        params, meta = load_weights(Path(path))
        kind = meta.pop("kind")
        res = int(meta.pop("resolution"))
        lower = np.array([float(v) for v in meta.pop("norm_lower").split(",")])
        upper = np.array([float(v) for v in meta.pop("norm_upper").split(",")])
        dec = networks.subset(params, "dec")
        enc = networks.subset(params, "enc") or None
        return cls(kind, dec, enc, res, lower, upper, meta)

    def weights_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.all_params()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.all_params()[name], dtype="<f8").tobytes())
        return h.hexdigest()


def predict_visual(model: VisualModel, mu) -> np.ndarray:
    return model.predict(mu)


def visual_adjoint(model: VisualModel, mu, weighted_error) -> np.ndarray:
    return model.adjoint(mu, weighted_error)


def jacobian_image(model: VisualModel, mu) -> np.ndarray:
    return model.jacobian_image(mu)
