"""Residual tanh networks used as trial functions.

A network is a chain of blocks; each block is two fully connected layers of
width ``neurons`` with activation ``tanh(a_l * z)`` and a skip connection that
adds the block input to its output. The 2-D input is zero-padded to the block
width, and a final affine map produces the scalar output.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ExprGraph, NodeId


@dataclass(frozen=True)
class NetworkConfig:
    blocks: int
    neurons: int
    adaptive_activations: bool = True
    input_dim: int = 2
    output_dim: int = 1
    # fixed (non-trainable) input normalisation: x -> (x - input_shift) * input_scale
    input_shift: tuple[float, float] = (0.0, 0.0)
    input_scale: float = 1.0

    def __post_init__(self):
        if self.blocks < 1:
            raise ValueError("blocks must be >= 1")
        if self.neurons < self.input_dim:
            raise ValueError("neurons must be >= input_dim (input is zero-padded)")
        if self.output_dim != 1:
            raise ValueError("only scalar outputs are supported")

    @property
    def hidden_layers(self) -> int:
        return 2 * self.blocks


def count_parameters(config: NetworkConfig) -> int:
    n, L = config.neurons, config.hidden_layers
    slopes = L if config.adaptive_activations else 0
    return L * (n * n + n) + (n + 1) + slopes


@dataclass
class ParamSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    slopes: np.ndarray | None
    out_weight: np.ndarray
    out_bias: float

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order (the flat-vector layout)."""
        arrs = []
        for W, b in zip(self.weights, self.biases):
            arrs += [W, b]
        if self.slopes is not None:
            arrs.append(self.slopes)
        arrs += [self.out_weight, np.array([self.out_bias])]
        return arrs

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_vector(cls, vec, config: NetworkConfig) -> "ParamSet":
        vec = np.asarray(vec, dtype=float)
        if vec.size != count_parameters(config):
            raise ValueError(
                f"expected {count_parameters(config)} parameters, got {vec.size}"
            )
        n, pos = config.neurons, 0

        def take(shape):
            nonlocal pos
            size = int(np.prod(shape))
            out = vec[pos:pos + size].reshape(shape).copy()
            pos += size
            return out

        weights, biases = [], []
        for _ in range(config.hidden_layers):
            weights.append(take((n, n)))
            biases.append(take((n,)))
        slopes = take((config.hidden_layers,)) if config.adaptive_activations else None
        out_weight = take((n,))
        out_bias = float(take((1,))[0])
        return cls(weights, biases, slopes, out_weight, out_bias)

    def copy(self) -> "ParamSet":
        return ParamSet(
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            None if self.slopes is None else self.slopes.copy(),
            self.out_weight.copy(),
            self.out_bias,
        )


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_xavier(config: NetworkConfig, seed: int | np.random.Generator) -> ParamSet:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = config.neurons
    bound = xavier_bound(n, n)
    weights = [rng.uniform(-bound, bound, size=(n, n)) for _ in range(config.hidden_layers)]
    biases = [np.zeros(n) for _ in range(config.hidden_layers)]
    slopes = np.ones(config.hidden_layers) if config.adaptive_activations else None
    out_bound = xavier_bound(n, 1)
    out_weight = rng.uniform(-out_bound, out_bound, size=n)
    return ParamSet(weights, biases, slopes, out_weight, 0.0)


@dataclass
class GraphNetwork:
    """A network whose parameters live as variable nodes on a graph."""

    config: NetworkConfig
    graph: ExprGraph
    weights: list[NodeId] = field(default_factory=list)
    biases: list[NodeId] = field(default_factory=list)
    slopes: list[NodeId] = field(default_factory=list)
    out_weight: NodeId = -1
    out_bias: NodeId = -1

    @classmethod
    def bind(cls, params: ParamSet, config: NetworkConfig, graph: ExprGraph) -> "GraphNetwork":
        net = cls(config, graph)
        net.weights = [graph.var(W) for W in params.weights]
        net.biases = [graph.var(b) for b in params.biases]
        if params.slopes is not None:
            net.slopes = [graph.var(a) for a in params.slopes]
        net.out_weight = graph.var(params.out_weight.reshape(-1, 1))
        net.out_bias = graph.var(params.out_bias)
        return net

    def param_nodes(self) -> list[NodeId]:
        """Variable nodes in the same order as :meth:`ParamSet.arrays`."""
        nodes = []
        for W, b in zip(self.weights, self.biases):
            nodes += [W, b]
        nodes += self.slopes
        nodes += [self.out_weight, self.out_bias]
        return nodes

    def load(self, params: ParamSet) -> None:
        g = self.graph
        for node, W in zip(self.weights, params.weights):
            g.set_value(node, W)
        for node, b in zip(self.biases, params.biases):
            g.set_value(node, b)
        if params.slopes is not None:
            for node, a in zip(self.slopes, params.slopes):
                g.set_value(node, a)
        g.set_value(self.out_weight, params.out_weight.reshape(-1, 1))
        g.set_value(self.out_bias, params.out_bias)

    def gradient_to_params(self, grads: list[np.ndarray]) -> np.ndarray:
        """Flatten per-node gradients into the :meth:`ParamSet.to_vector` layout."""
        return np.concatenate([np.ravel(g) for g in grads])

    def forward(self, x: NodeId) -> NodeId:
        """u(x) for a batch of points ``x`` of shape (M, 2); returns an (M,) node."""
        g, cfg = self.graph, self.config
        n = cfg.neurons
        embed = np.zeros((cfg.input_dim, n))
        embed[np.arange(cfg.input_dim), np.arange(cfg.input_dim)] = cfg.input_scale
        shift = np.asarray(cfg.input_shift, dtype=float)
        z = g.build("matmul", [x, g.const(embed)])
        if np.any(shift):
            z = g.build("sub", [z, g.const(np.pad(shift * cfg.input_scale, (0, n - cfg.input_dim)))])
        layer = 0
        for _ in range(cfg.blocks):
            h = z
            for _ in range(2):
                h = g.build("matmul", [h, self.weights[layer]])
                h = g.build("add", [h, self.biases[layer]])
                if self.slopes:
                    h = g.build("mul", [self.slopes[layer], h])
                h = g.build("tanh", [h])
                layer += 1
            z = g.build("add", [h, z])
        u = g.build("matmul", [z, self.out_weight])
        u = g.build("add", [u, self.out_bias])
        return g.build("reshape", [u], shape=(g.value(u).shape[0],))

    def evaluate(self, points: np.ndarray, need_grad: bool = True):
        """Evaluate u (and its spatial gradient) on a fixed point batch.

        Returns ``(u, ux, uy)`` node ids; the gradient entries are ``None``
        when ``need_grad`` is false.
        """
        g = self.graph
        x = g.var(np.asarray(points, dtype=float).reshape(-1, 2))
        u = self.forward(x)
        if not need_grad:
            return u, None, None
        ux, uy = spatial_gradient(self, x, u)
        return u, ux, uy


def spatial_gradient(net: GraphNetwork, x: NodeId, u: NodeId) -> tuple[NodeId, NodeId]:
    """(du/dx, du/dy) as nodes, via tangent propagation along e1 and e2."""
    g = net.graph
    m = g.value(x).shape[0]
    e1 = np.zeros((m, 2))
    e1[:, 0] = 1.0
    e2 = np.zeros((m, 2))
    e2[:, 1] = 1.0
    (ux,) = g.jvp_nodes([u], [x], [g.const(e1)])
    (uy,) = g.jvp_nodes([u], [x], [g.const(e2)])
    return ux, uy


def forward(params: ParamSet, config: NetworkConfig, x: np.ndarray, graph: ExprGraph | None = None):
    """Convenience: evaluate u_theta at points ``x`` on a (new) graph; returns node and graph."""
    graph = graph if graph is not None else ExprGraph()
    net = GraphNetwork.bind(params, config, graph)
    u, _, _ = net.evaluate(x, need_grad=False)
    return u, graph


def predict(params: ParamSet, config: NetworkConfig, x: np.ndarray, need_grad: bool = False):
    """Plain numpy evaluation (no tape): u and optionally (ux, uy)."""
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    n = config.neurons
    z = np.zeros((x.shape[0], n))
    z[:, :2] = (x - np.asarray(config.input_shift)) * config.input_scale
    dz = None
    if need_grad:
        dz = np.zeros((2, x.shape[0], n))
        dz[0, :, 0] = config.input_scale
        dz[1, :, 1] = config.input_scale
    layer = 0
    for _ in range(config.blocks):
        h, dh = z, dz
        for _ in range(2):
            a = 1.0 if params.slopes is None else params.slopes[layer]
            pre = h @ params.weights[layer] + params.biases[layer]
            h = np.tanh(a * pre)
            if need_grad:
                dh = (1.0 - h**2) * a * (dh @ params.weights[layer])
            layer += 1
        z = h + z
        if need_grad:
            dz = dh + dz
    u = z @ params.out_weight + params.out_bias
    if not need_grad:
        return u
    return u, dz[0] @ params.out_weight, dz[1] @ params.out_weight


def save_params(path, params: ParamSet, config: NetworkConfig, **meta) -> None:
    doc = {"config": asdict(config), "meta": meta, "params": params.to_vector().tolist()}
    Path(path).write_text(json.dumps(doc))


def params_to_json(params: ParamSet, config: NetworkConfig) -> dict:
    return {"config": asdict(config), "params": params.to_vector().tolist()}


def params_from_json(doc: dict) -> tuple[ParamSet, NetworkConfig]:
    cfg = dict(doc["config"])
    cfg["input_shift"] = tuple(cfg.get("input_shift", (0.0, 0.0)))
    config = NetworkConfig(**cfg)
    return ParamSet.from_vector(doc["params"], config), config


def load_params(path) -> tuple[ParamSet, NetworkConfig]:
    return params_from_json(json.loads(Path(path).read_text()))
