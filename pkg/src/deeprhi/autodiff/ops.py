"""Primitive node kinds for the reverse-mode graph.

Every op implements ``forward(xs, ps, ctx)``, ``backward(g, ctx)`` and
``tangent(ts, ctx)``. ``xs`` are the values of the input nodes, ``ps`` the
parameter arrays bound to the node, ``ctx`` a per-node dict that holds
whatever the later passes need. ``backward`` returns
``(input_grads, param_grads)``. ``tangent`` applies the op's linearization
at the cached point to input tangents (``None`` stands for zero) and returns
the output tangent.

Image tensors use the NHWC layout.
"""

from __future__ import annotations

import numpy as np


def _mm(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    # contract the last axis of ``a`` with the first of ``w`` through one BLAS call
    lead = a.shape[:-1]
    return (a.reshape(-1, a.shape[-1]) @ w).reshape(*lead, w.shape[-1])


def _outer_sum(a: np.ndarray, g: np.ndarray) -> np.ndarray:
    # sum over all leading axes of a[..., i] * g[..., j]
    return a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Op:
    kind = "op"
    n_inputs = 1

    def forward(self, xs, ps, ctx):
        raise NotImplementedError

    def backward(self, g, ctx):
        raise NotImplementedError

    def tangent(self, ts, ctx):
        raise NotImplementedError(f"{type(self).__name__} has no tangent rule")

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class Identity(Op):
    kind = "identity"

    def forward(self, xs, ps, ctx):
        return xs[0]

    def backward(self, g, ctx):
        return [g], []

    def tangent(self, ts, ctx):
        return ts[0]


class Dense(Op):
    """Affine map ``x @ W + b`` over the last axis. Params: (W, b)."""

    kind = "dense"

    def forward(self, xs, ps, ctx):
        x = xs[0]
        w, b = ps
        ctx["x"] = x
        return _mm(x, w) + b

    def backward(self, g, ctx):
        x = ctx["x"]
        w = ctx["params"][0]
        gx = _mm(g, w.T)
        if ctx.get("skip_params"):
            return [gx], [None, None]
        if x.shape[:-1] != g.shape[:-1]:
            x = np.broadcast_to(x, g.shape[:-1] + x.shape[-1:])
        gw = _outer_sum(x, g)
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return [gx], [gw, gb]

    def tangent(self, ts, ctx):
        return _mm(ts[0], ctx["params"][0])


def im2col(xp: np.ndarray, k: int, s: int, ho: int, wo: int) -> np.ndarray:
    """Patches of a padded NHWC array as (N, ho, wo, k, k, C), copied contiguous."""
    sn, sh, sw, sc = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(xp.shape[0], ho, wo, k, k, xp.shape[3]),
        strides=(sn, s * sh, s * sw, sh, sw, sc),
        writeable=False,
    )
    return np.ascontiguousarray(view)


def col2im(cols: np.ndarray, out: np.ndarray, s: int) -> np.ndarray:
    """Scatter-add (N, h, w, k, k, C) patches into ``out`` (the padded image)."""
    _, h, w, k, _, _ = cols.shape
    for i in range(k):
        for j in range(k):
            out[:, i:i + s * h:s, j:j + s * w:s, :] += cols[:, :, :, i, j, :]
    return out


class Conv2d(Op):
    """Strided 2-D convolution, NHWC input, kernel (k, k, C_in, C_out)."""

    kind = "conv2d"

    def __init__(self, stride: int = 1, pad: int = 0):
        self.stride = stride
        self.pad = pad

    def forward(self, xs, ps, ctx):
        x = xs[0]
        w, b = ps
        k = w.shape[0]
        s, p = self.stride, self.pad
        n, h, wd, c = x.shape
        ho, wo = (h + 2 * p - k) // s + 1, (wd + 2 * p - k) // s + 1
        if ho < 1 or wo < 1:
            raise ValueError(f"conv2d: input {x.shape} too small for kernel {k}")
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        cols = im2col(xp, k, s, ho, wo).reshape(n * ho * wo, k * k * c)
        ctx["cols"] = cols
        ctx["x_shape"] = x.shape
        out = cols @ w.reshape(k * k * c, -1) + b
        return out.reshape(n, ho, wo, w.shape[3])

    def backward(self, g, ctx):
        w = ctx["params"][0]
        k, _, c, o = w.shape
        s, p = self.stride, self.pad
        n, ho, wo, _ = g.shape
        _, h, wd, _ = ctx["x_shape"]
        g2 = g.reshape(-1, o)
        gcols = (g2 @ w.reshape(k * k * c, o).T).reshape(n, ho, wo, k, k, c)
        gxp = col2im(gcols, np.zeros((n, h + 2 * p, wd + 2 * p, c)), s)
        gx = gxp[:, p:p + h, p:p + wd, :]
        if ctx.get("skip_params"):
            return [gx], [None, None]
        cols = ctx["cols"]
        if cols.shape[0] != g2.shape[0]:
            cols = np.tile(cols, (n, 1))
        gw = (cols.T @ g2).reshape(w.shape)
        return [gx], [gw, g2.sum(axis=0)]

    def tangent(self, ts, ctx):
        w = ctx["params"][0]
        return self.forward([ts[0]], (w, 0.0), {})


class ConvTranspose2d(Op):
    """Transposed (fractionally strided) convolution; the adjoint of Conv2d.

    Kernel shape is (k, k, C_in, C_out). Output size is
    ``(n - 1) * stride - 2 * pad + k``.
    """

    kind = "conv_transpose2d"

    def __init__(self, stride: int = 1, pad: int = 0):
        self.stride = stride
        self.pad = pad

    @staticmethod
    def _wmat(w):
        k, _, ci, co = w.shape
        return w.transpose(2, 0, 1, 3).reshape(ci, k * k * co)

    def forward(self, xs, ps, ctx):
        x = xs[0]
        w, b = ps
        k, _, ci, co = w.shape
        s, p = self.stride, self.pad
        n, h, wd, _ = x.shape
        full_h, full_w = (h - 1) * s + k, (wd - 1) * s + k
        cols = (x.reshape(-1, ci) @ self._wmat(w)).reshape(n, h, wd, k, k, co)
        outp = col2im(cols, np.zeros((n, full_h, full_w, co)), s)
        ctx["x"] = x
        return outp[:, p:full_h - p, p:full_w - p, :] + b

    def backward(self, g, ctx):
        x = ctx["x"]
        w = ctx["params"][0]
        k, _, ci, co = w.shape
        s, p = self.stride, self.pad
        _, h, wd, _ = x.shape
        n = g.shape[0]
        gp = np.pad(g, ((0, 0), (p, p), (p, p), (0, 0))) if p else g
        gcols = im2col(gp, k, s, h, wd).reshape(n * h * wd, k * k * co)
        wm = self._wmat(w)
        gx = (gcols @ wm.T).reshape(n, h, wd, ci)
        if ctx.get("skip_params"):
            return [gx], [None, None]
        x2 = x.reshape(-1, ci)
        if x2.shape[0] != gcols.shape[0]:
            x2 = np.tile(x2, (n, 1))
        gw = (x2.T @ gcols).reshape(ci, k, k, co).transpose(1, 2, 0, 3)
        return [gx], [gw, g.reshape(-1, co).sum(axis=0)]

    def tangent(self, ts, ctx):
        w = ctx["params"][0]
        return self.forward([ts[0]], (w, 0.0), {})


class ReLU(Op):
    kind = "relu"

    def forward(self, xs, ps, ctx):
        mask = xs[0] > 0
        ctx["mask"] = mask
        return xs[0] * mask

    def backward(self, g, ctx):
        return [g * ctx["mask"]], []

    def tangent(self, ts, ctx):
        return ts[0] * ctx["mask"]


class Sigmoid(Op):
    kind = "sigmoid"

    def forward(self, xs, ps, ctx):
        x = xs[0]
        # split by sign so neither branch overflows
        e = np.exp(-np.abs(x))
        y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        ctx["y"] = y
        return y

    def backward(self, g, ctx):
        y = ctx["y"]
        return [g * y * (1.0 - y)], []

    def tangent(self, ts, ctx):
        y = ctx["y"]
        return ts[0] * y * (1.0 - y)


class Tanh(Op):
    kind = "tanh"

    def forward(self, xs, ps, ctx):
        y = np.tanh(xs[0])
        ctx["y"] = y
        return y

    def backward(self, g, ctx):
        return [g * (1.0 - ctx["y"] ** 2)], []

    def tangent(self, ts, ctx):
        return ts[0] * (1.0 - ctx["y"] ** 2)


class Add(Op):
    kind = "add"
    n_inputs = 2

    def forward(self, xs, ps, ctx):
        ctx["shapes"] = (xs[0].shape, xs[1].shape)
        return xs[0] + xs[1]

    def backward(self, g, ctx):
        sa, sb = ctx["shapes"]
        return [_unbroadcast(g, sa), _unbroadcast(g, sb)], []

    def tangent(self, ts, ctx):
        ta, tb = ts
        if ta is None:
            return tb
        return ta if tb is None else ta + tb


class Mul(Op):
    kind = "mul"
    n_inputs = 2

    def forward(self, xs, ps, ctx):
        ctx["a"], ctx["b"] = xs
        return xs[0] * xs[1]

    def backward(self, g, ctx):
        a, b = ctx["a"], ctx["b"]
        return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)], []

    def tangent(self, ts, ctx):
        ta, tb = ts
        parts = [t * other for t, other in ((ta, ctx["b"]), (tb, ctx["a"])) if t is not None]
        return parts[0] if len(parts) == 1 else parts[0] + parts[1]


class Scale(Op):
    """Multiply by a fixed constant."""

    kind = "scale"

    def __init__(self, factor: float):
        self.factor = float(factor)

    def forward(self, xs, ps, ctx):
        return xs[0] * self.factor

    def backward(self, g, ctx):
        return [g * self.factor], []

    def tangent(self, ts, ctx):
        return ts[0] * self.factor


class Reshape(Op):
    """Reshape the per-sample part, keeping the leading batch axis."""

    kind = "reshape"

    def __init__(self, shape: tuple):
        self.shape = tuple(shape)

    def forward(self, xs, ps, ctx):
        x = xs[0]
        ctx["in_shape"] = x.shape[1:]
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, g, ctx):
        return [g.reshape((g.shape[0],) + ctx["in_shape"])], []

    def tangent(self, ts, ctx):
        t = ts[0]
        return t.reshape((t.shape[0],) + self.shape)


class MSELoss(Op):
    """Squared-error loss between prediction and target (target gets no gradient).

    ``reduction="mean"`` averages over every element. ``reduction="sum"``
    sums over the per-sample elements and averages over the batch, which is
    the scale a Gaussian log-likelihood would give.
    """

    kind = "mse"
    n_inputs = 2

    def __init__(self, reduction: str = "mean"):
        if reduction not in ("mean", "sum"):
            raise ValueError(f"unknown reduction {reduction!r}")
        self.reduction = reduction

    def _norm(self, diff: np.ndarray) -> float:
        if self.reduction == "mean":
            return float(diff.size)
        return float(diff.shape[0])

    def forward(self, xs, ps, ctx):
        diff = xs[0] - xs[1]
        ctx["diff"] = diff
        return np.array(np.sum(diff * diff) / self._norm(diff))

    def backward(self, g, ctx):
        diff = ctx["diff"]
        gp = (2.0 * g / self._norm(diff)) * diff
        return [gp, np.zeros_like(diff)], []

    def tangent(self, ts, ctx):
        # the target is treated as a constant, matching backward
        diff = ctx["diff"]
        if ts[0] is None:
            return np.array(0.0)
        return np.array(2.0 * np.sum(diff * ts[0]) / self._norm(diff))


class GaussianKL(Op):
    """KL(N(mean, exp(logvar)) || N(0, 1)) summed over latent dims, batch-averaged."""

    kind = "gaussian_kl"
    n_inputs = 2

    def forward(self, xs, ps, ctx):
        m, lv = xs
        ev = np.exp(lv)
        ctx["m"], ctx["ev"] = m, ev
        return np.array(0.5 * np.sum(m * m + ev - 1.0 - lv) / m.shape[0])

    def backward(self, g, ctx):
        m, ev = ctx["m"], ctx["ev"]
        n = m.shape[0]
        return [g * m / n, g * 0.5 * (ev - 1.0) / n], []

    def tangent(self, ts, ctx):
        m, ev = ctx["m"], ctx["ev"]
        tm, tl = ts
        total = 0.0
        if tm is not None:
            total += np.sum(m * tm)
        if tl is not None:
            total += 0.5 * np.sum((ev - 1.0) * tl)
        return np.array(total / m.shape[0])


class ReparamSample(Op):
    """``z = mean + exp(logvar / 2) * eps`` with eps ~ N(0, 1).

    eps is drawn from the generator passed to ``Graph.forward_eval(rng=...)``.
    Without a generator the node returns the mean (evaluation mode).
    """

    kind = "reparam"
    n_inputs = 2

    def forward(self, xs, ps, ctx):
        m, lv = xs
        rng = ctx.get("rng")
        if rng is None:
            eps = np.zeros_like(m)
        else:
            eps = rng.standard_normal(m.shape)
        std = np.exp(0.5 * lv)
        ctx["eps"], ctx["std"] = eps, std
        return m + std * eps

    def backward(self, g, ctx):
        return [g, g * 0.5 * ctx["std"] * ctx["eps"]], []

    def tangent(self, ts, ctx):
        tm, tl = ts
        out = 0.0 if tm is None else tm
        if tl is not None:
            out = out + tl * 0.5 * ctx["std"] * ctx["eps"]
        return out
