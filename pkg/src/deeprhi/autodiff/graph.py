"""Static computation graph with a cached forward pass and reverse-mode backward."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops as O


class GraphError(RuntimeError):
    """Misuse of a graph: wrong inputs, backward before forward, bad seeds."""


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced NaN or Inf."""


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")
    return arr


@dataclass
class Node:
    op: O.Op
    args: tuple[int, ...]
    params: tuple[str, ...] = ()
    name: str | None = None


@dataclass
class Gradients:
    inputs: dict[str, np.ndarray] = field(default_factory=dict)
    params: dict[str, np.ndarray] = field(default_factory=dict)


class Graph:
    """A DAG of primitive ops over named inputs and named parameters.

    Nodes are appended in construction order, which is already topological
    because a node can only reference nodes that exist. Inputs are declared
    with their per-sample shape and fed with a leading batch axis.

    >>> g = Graph()
    >>> x = g.input("x", (1,))
    >>> y = g.dense(x, "fc", 1, 1)
    >>> g.output("y", y)
    >>> g.params["fc.W"][:] = 2.0; g.params["fc.b"][:] = 1.0
    >>> float(g.forward_eval({"x": np.array([[3.0]])})["y"][0, 0])
    7.0
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.input_shapes: dict[str, tuple[int, ...]] = {}
        self._input_nodes: dict[str, int] = {}
        self.outputs: dict[str, int] = {}
        self._values: list[np.ndarray | None] | None = None
        self._ctx: list[dict] = []

    # -- construction -----------------------------------------------------

    def _append(self, op: O.Op, args=(), params=(), name=None) -> int:
        for a in args:
            if not 0 <= a < len(self.nodes):
                raise GraphError(f"node reference {a} does not exist")
        for p in params:
            if p not in self.params:
                raise GraphError(f"unknown parameter {p!r}")
        self.nodes.append(Node(op, tuple(args), tuple(params), name))
        self._values = None
        return len(self.nodes) - 1

    def input(self, name: str, shape: tuple[int, ...]) -> int:
        if name in self._input_nodes:
            raise GraphError(f"duplicate input {name!r}")
        idx = self._append(O.Identity(), name=name)
        self._input_nodes[name] = idx
        self.input_shapes[name] = tuple(int(s) for s in shape)
        return idx

    def add_param(self, name: str, value: np.ndarray) -> str:
        if name in self.params:
            raise GraphError(f"duplicate parameter {name!r}")
        arr = np.array(value, dtype=np.float64)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return name

    def output(self, name: str, node: int) -> None:
        self.outputs[name] = node

    @staticmethod
    def _he(rng, shape, fan_in):
        if rng is None:
            return np.zeros(shape)
        return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

    def dense(self, x: int, name: str, n_in: int, n_out: int, rng=None) -> int:
        w = self.add_param(f"{name}.W", self._he(rng, (n_in, n_out), n_in))
        b = self.add_param(f"{name}.b", np.zeros(n_out))
        return self._append(O.Dense(), (x,), (w, b))

    def conv2d(self, x, name, c_in, c_out, k, stride=1, pad=0, rng=None) -> int:
        w = self.add_param(f"{name}.W", self._he(rng, (k, k, c_in, c_out), k * k * c_in))
        b = self.add_param(f"{name}.b", np.zeros(c_out))
        return self._append(O.Conv2d(stride, pad), (x,), (w, b))

    def conv_transpose2d(self, x, name, c_in, c_out, k, stride=1, pad=0, rng=None) -> int:
        # fan-in of a stride-s transposed conv is roughly k*k*c_in / s^2
        fan_in = max(1, k * k * c_in // (stride * stride))
        w = self.add_param(f"{name}.W", self._he(rng, (k, k, c_in, c_out), fan_in))
        b = self.add_param(f"{name}.b", np.zeros(c_out))
        return self._append(O.ConvTranspose2d(stride, pad), (x,), (w, b))

    def relu(self, x: int) -> int:
        return self._append(O.ReLU(), (x,))

    def sigmoid(self, x: int) -> int:
        return self._append(O.Sigmoid(), (x,))

    def tanh(self, x: int) -> int:
        return self._append(O.Tanh(), (x,))

    def add(self, a: int, b: int) -> int:
        return self._append(O.Add(), (a, b))

    def mul(self, a: int, b: int) -> int:
        return self._append(O.Mul(), (a, b))

    def scale(self, x: int, factor: float) -> int:
        return self._append(O.Scale(factor), (x,))

    def reshape(self, x: int, shape: tuple[int, ...]) -> int:
        return self._append(O.Reshape(shape), (x,))

    def mse(self, pred: int, target: int, reduction: str = "mean") -> int:
        return self._append(O.MSELoss(reduction), (pred, target))

    def gaussian_kl(self, mean: int, logvar: int) -> int:
        return self._append(O.GaussianKL(), (mean, logvar))

    def reparam(self, mean: int, logvar: int) -> int:
        return self._append(O.ReparamSample(), (mean, logvar))

    # -- evaluation -------------------------------------------------------

    def forward_eval(self, inputs: dict[str, np.ndarray], rng=None) -> dict[str, np.ndarray]:
        """Run the graph on a batch and cache intermediates for ``backward_grad``.

        ``rng`` feeds the reparameterized sampling nodes; without it they
        pass their mean through.
        """
        if set(inputs) != set(self._input_nodes):
            raise GraphError(
                f"expected inputs {sorted(self._input_nodes)}, got {sorted(inputs)}"
            )
        values: list[np.ndarray | None] = [None] * len(self.nodes)
        ctxs: list[dict] = [dict() for _ in self.nodes]
        for name, idx in self._input_nodes.items():
            arr = np.asarray(inputs[name], dtype=np.float64)
            want = self.input_shapes[name]
            if arr.ndim != len(want) + 1 or arr.shape[1:] != want:
                raise GraphError(
                    f"input {name!r}: expected (batch, *{want}), got {arr.shape}"
                )
            values[idx] = check_finite(arr, f"input {name!r}")
        for idx, node in enumerate(self.nodes):
            if idx in self._input_nodes.values():
                continue
            ctx = ctxs[idx]
            ctx["params"] = [self.params[p] for p in node.params]
            if isinstance(node.op, O.ReparamSample):
                ctx["rng"] = rng
            values[idx] = node.op.forward([values[a] for a in node.args], ctx["params"], ctx)
        out = {}
        for name, idx in self.outputs.items():
            out[name] = check_finite(values[idx], f"output {name!r}")
        self._values = values
        self._ctx = ctxs
        return out

    def backward_grad(self, seeds, params: bool = True) -> Gradients:
        """Pull ``seeds`` (one array per output, or a bare array for a
        single-output graph) back to every input and parameter.

        With ``params=False`` the parameter gradients are skipped, which is
        all a vector-Jacobian product with respect to the inputs needs. The
        layer ops accept a seed whose batch is larger than the cached one
        when the cached batch is 1; the cached activations broadcast.
        """
        if self._values is None:
            raise GraphError("backward_grad called before forward_eval")
        if not isinstance(seeds, dict):
            if len(self.outputs) != 1:
                raise GraphError("a bare seed needs a single-output graph")
            seeds = {next(iter(self.outputs)): seeds}
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        for name, seed in seeds.items():
            if name not in self.outputs:
                raise GraphError(f"unknown output {name!r}")
            idx = self.outputs[name]
            seed = np.asarray(seed, dtype=np.float64)
            val = self._values[idx]
            batched = (
                val.ndim >= 1 and val.shape[0] == 1 and seed.ndim == val.ndim
                and seed.shape[1:] == val.shape[1:]
            )
            if seed.shape != val.shape and not batched:
                raise GraphError(f"seed for {name!r} has shape {seed.shape}, output {val.shape}")
            grads[idx] = seed if grads[idx] is None else grads[idx] + seed

        pgrads = {p: np.zeros_like(v) for p, v in self.params.items()} if params else {}
        input_ids = set(self._input_nodes.values())
        for idx in range(len(self.nodes) - 1, -1, -1):
            g = grads[idx]
            if g is None or idx in input_ids:
                continue
            node = self.nodes[idx]
            ctx = self._ctx[idx]
            ctx["skip_params"] = not params
            in_grads, p_grads = node.op.backward(g, ctx)
            for a, ga in zip(node.args, in_grads):
                grads[a] = ga if grads[a] is None else grads[a] + ga
            if params:
                for p, gp in zip(node.params, p_grads):
                    pgrads[p] += gp

        result = Gradients()
        for name, idx in self._input_nodes.items():
            g = grads[idx]
            if g is None:
                g = np.zeros_like(self._values[idx])
            result.inputs[name] = check_finite(g, f"gradient of input {name!r}")
        if params:
            for p, gp in pgrads.items():
                check_finite(gp, f"gradient of parameter {p!r}")
            self.grads = pgrads
            result.params = pgrads
        return result

    def forward_tangent(self, tangents: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Push input tangents through the linearization at the last forward
        point (a Jacobian-vector product); returns one tangent per output.

        Inputs left out of ``tangents`` have zero tangent. As with batched
        seeds, a tangent batch may exceed a cached batch of 1, so the columns
        of a Jacobian come out of one pass.
        """
        if self._values is None:
            raise GraphError("forward_tangent called before forward_eval")
        ts: list[np.ndarray | None] = [None] * len(self.nodes)
        for name, t in tangents.items():
            if name not in self._input_nodes:
                raise GraphError(f"unknown input {name!r}")
            idx = self._input_nodes[name]
            t = np.asarray(t, dtype=np.float64)
            if t.shape[1:] != self._values[idx].shape[1:]:
                raise GraphError(f"tangent for {name!r} has shape {t.shape}, input {self._values[idx].shape}")
            ts[idx] = t
        input_ids = set(self._input_nodes.values())
        for idx, node in enumerate(self.nodes):
            if idx in input_ids:
                continue
            args = [ts[a] for a in node.args]
            if all(t is None for t in args):
                continue
            ts[idx] = node.op.tangent(args, self._ctx[idx])
        out = {}
        for name, idx in self.outputs.items():
            t = ts[idx]
            out[name] = np.zeros_like(self._values[idx]) if t is None else check_finite(t, f"tangent of {name!r}")
        return out

    # -- weights ----------------------------------------------------------

    def load_params(self, params: dict[str, np.ndarray], strict: bool = True) -> None:
        for name, value in params.items():
            if name not in self.params:
                if strict:
                    raise GraphError(f"unknown parameter {name!r}")
                continue
            if self.params[name].shape != value.shape:
                raise GraphError(
                    f"parameter {name!r}: shape {value.shape} != {self.params[name].shape}"
                )
            self.params[name][...] = value
