"""Decoder and encoder graph builders.

The decoder maps a normalized 2-D body state to an image:
dense 2->256, ReLU, dense 256->(r/8)^2*32, ReLU, reshape, three stride-2
transposed convolutions (32->16->8->1, kernel 4), sigmoid. The VAE encoder
mirrors it with stride-2 convolutions and two dense heads for the latent
mean and log-variance.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import Graph

LATENT_DIM = 2
BASE_CHANNELS = 32
HIDDEN = 256


def _base(resolution: int) -> int:
    if resolution % 8:
        raise ValueError(f"resolution must be a multiple of 8, got {resolution}")
    return resolution // 8


ACTIVATIONS = ("tanh", "relu")


def _act(g: Graph, x: int, activation: str) -> int:
    if activation == "tanh":
        return g.tanh(x)
    if activation == "relu":
        return g.relu(x)
    raise ValueError(f"unknown activation {activation!r}")


def add_decoder(g: Graph, z: int, resolution: int, rng=None, prefix: str = "dec", activation: str = "tanh") -> int:
    b = _base(resolution)
    h = _act(g, g.dense(z, f"{prefix}.fc1", LATENT_DIM, HIDDEN, rng), activation)
    h = _act(g, g.dense(h, f"{prefix}.fc2", HIDDEN, b * b * BASE_CHANNELS, rng), activation)
    h = g.reshape(h, (b, b, BASE_CHANNELS))
    h = _act(g, g.conv_transpose2d(h, f"{prefix}.up1", 32, 16, 4, stride=2, pad=1, rng=rng), activation)
    h = _act(g, g.conv_transpose2d(h, f"{prefix}.up2", 16, 8, 4, stride=2, pad=1, rng=rng), activation)
    h = g.conv_transpose2d(h, f"{prefix}.up3", 8, 1, 4, stride=2, pad=1, rng=rng)
    return g.reshape(g.sigmoid(h), (resolution, resolution))


def add_encoder(g: Graph, img: int, resolution: int, rng=None, prefix: str = "enc") -> tuple[int, int]:
    b = _base(resolution)
    h = g.reshape(img, (resolution, resolution, 1))
    h = g.relu(g.conv2d(h, f"{prefix}.down1", 1, 8, 4, stride=2, pad=1, rng=rng))
    h = g.relu(g.conv2d(h, f"{prefix}.down2", 8, 16, 4, stride=2, pad=1, rng=rng))
    h = g.relu(g.conv2d(h, f"{prefix}.down3", 16, 32, 4, stride=2, pad=1, rng=rng))
    h = g.reshape(h, (b * b * BASE_CHANNELS,))
    h = g.relu(g.dense(h, f"{prefix}.fc1", b * b * BASE_CHANNELS, HIDDEN, rng))
    mean = g.dense(h, f"{prefix}.mean", HIDDEN, LATENT_DIM, rng)
    logvar = g.dense(h, f"{prefix}.logvar", HIDDEN, LATENT_DIM, rng)
    return mean, logvar


def decoder_graph(resolution: int, rng=None, activation: str = "tanh") -> Graph:
    """Stand-alone decoder: input ``z`` (2,), output ``image``."""
    g = Graph()
    z = g.input("z", (LATENT_DIM,))
    g.output("image", add_decoder(g, z, resolution, rng, activation=activation))
    return g


def decoder_training_graph(resolution: int, rng=None, activation: str = "tanh") -> Graph:
    """Decoder plus summed squared-error loss against ``target``."""
    g = Graph()
    z = g.input("z", (LATENT_DIM,))
    target = g.input("target", (resolution, resolution))
    recon = add_decoder(g, z, resolution, rng, activation=activation)
    g.output("recon", recon)
    g.output("loss", g.mse(recon, target, reduction="sum"))
    return g


def vae_training_graph(
    resolution: int, beta: float, align_weight: float, rng=None, activation: str = "tanh"
) -> Graph:
    """Encoder -> reparameterized sample -> decoder.

    Loss = summed squared reconstruction error + beta * KL to N(0, I)
    + align_weight * |latent mean - target state|^2 (batch-averaged sums).
    The alignment term ties the latent axes to the normalized joint angles
    so the decoder can be driven directly by the body-state belief.
    """
    g = Graph()
    img = g.input("image", (resolution, resolution))
    state = g.input("state", (LATENT_DIM,))
    mean, logvar = add_encoder(g, img, resolution, rng)
    z = g.reparam(mean, logvar)
    recon = add_decoder(g, z, resolution, rng, activation=activation)
    g.output("recon", recon)
    g.output("mean", mean)
    g.output("logvar", logvar)
    rec = g.mse(recon, img, reduction="sum")
    kl = g.gaussian_kl(mean, logvar)
    g.output("recon_loss", rec)
    g.output("kl", kl)
    loss = g.add(rec, g.scale(kl, beta))
    if align_weight:
        align = g.mse(mean, state, reduction="sum")
        g.output("align", align)
        loss = g.add(loss, g.scale(align, align_weight))
    g.output("loss", loss)
    return g


def subset(params: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {k: v for k, v in params.items() if k.startswith(prefix + ".")}
