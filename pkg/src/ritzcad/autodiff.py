"""Append-only expression tape with reverse- and forward-mode differentiation.

Every node holds a float64 array (0-d for scalars, or one entry per sample for
fields evaluated on a point batch). Derivatives can be requested in two ways:

* :meth:`ExprGraph.grad_nodes` and :meth:`ExprGraph.jvp_nodes` emit the
  derivative computation as *new nodes*, so the result can be differentiated
  again (higher order, gradient-of-gradient, parameter gradients of spatial
  derivatives).
* :meth:`ExprGraph.gradients` runs a purely numeric reverse sweep; this is the
  hot path used once per training epoch.

Both modes share a single set of per-operation rules, written against a small
"algebra" facade that either computes arrays or appends nodes.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

NodeId = int

OP_KINDS = (
    "const", "var", "add", "sub", "mul", "div", "neg", "tanh", "square",
    "sqrt", "dot", "scale", "matmul", "sum", "sum_to", "broadcast_to",
    "rows", "embed_rows", "reshape",
)


class GraphError(ValueError):
    """Structural problem: unknown operand, malformed operation."""


class GraphUsageError(ValueError):
    """Derivative requested in a way the tape cannot honour."""


def _sum_to(x: np.ndarray, shape: tuple) -> np.ndarray:
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(shape) if n == 1 and x.shape[lead + i] != 1
    )
    out = x.sum(axis=axes, keepdims=True) if axes else x
    return out.reshape(shape)


def _mm(a, b, ta, tb):
    return (a.T if ta else a) @ (b.T if tb else b)


def _embed_rows(x, start, stop, n):
    out = np.zeros((n,) + x.shape[1:])
    out[start:stop] = x
    return out


_FORWARD: dict[str, Callable] = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "neg": lambda a: -a,
    "tanh": np.tanh,
    "square": np.square,
    "sqrt": np.sqrt,
    "dot": lambda a, b: np.asarray(np.sum(a * b)),
    "scale": lambda a, c: a * c,
    "matmul": lambda a, b, ta=False, tb=False: _mm(a, b, ta, tb),
    "sum": lambda a: np.asarray(a.sum()),
    "sum_to": lambda a, shape: _sum_to(a, shape),
    "broadcast_to": lambda a, shape: np.broadcast_to(a, shape).copy(),
    "rows": lambda a, start, stop: a[start:stop],
    "embed_rows": lambda a, start, stop, n: _embed_rows(a, start, stop, n),
    "reshape": lambda a, shape: a.reshape(shape),
}


class _Numeric:
    """Rule algebra over plain arrays."""

    shape = staticmethod(np.shape)
    add = staticmethod(np.add)
    sub = staticmethod(np.subtract)
    mul = staticmethod(np.multiply)
    div = staticmethod(np.divide)
    neg = staticmethod(np.negative)
    square = staticmethod(np.square)

    @staticmethod
    def const(v):
        return np.asarray(v, dtype=float)

    @staticmethod
    def scale(a, c):
        return a * c

    @staticmethod
    def matmul(a, b, ta=False, tb=False):
        return _mm(a, b, ta, tb)

    @staticmethod
    def sum_to(a, shape):
        return _sum_to(np.asarray(a), tuple(shape))

    @staticmethod
    def broadcast_to(a, shape):
        return np.broadcast_to(a, shape)

    @staticmethod
    def rows(a, start, stop):
        return a[start:stop]

    @staticmethod
    def embed_rows(a, start, stop, n):
        return _embed_rows(a, start, stop, n)

    @staticmethod
    def reshape(a, shape):
        return np.reshape(a, shape)


class _Symbolic:
    """Rule algebra that appends nodes to a graph."""

    def __init__(self, graph: "ExprGraph"):
        self.g = graph

    def shape(self, a):
        return self.g.value(a).shape

    def const(self, v):
        return self.g.const(v)

    def add(self, a, b):
        return self.g.build("add", [a, b])

    def sub(self, a, b):
        return self.g.build("sub", [a, b])

    def mul(self, a, b):
        return self.g.build("mul", [a, b])

    def div(self, a, b):
        return self.g.build("div", [a, b])

    def neg(self, a):
        return self.g.build("neg", [a])

    def square(self, a):
        return self.g.build("square", [a])

    def scale(self, a, c):
        return self.g.build("scale", [a], c=float(c))

    def matmul(self, a, b, ta=False, tb=False):
        return self.g.build("matmul", [a, b], ta=ta, tb=tb)

    def sum_to(self, a, shape):
        if self.shape(a) == tuple(shape):
            return a
        return self.g.build("sum_to", [a], shape=tuple(shape))

    def broadcast_to(self, a, shape):
        if self.shape(a) == tuple(shape):
            return a
        return self.g.build("broadcast_to", [a], shape=tuple(shape))

    def rows(self, a, start, stop):
        return self.g.build("rows", [a], start=start, stop=stop)

    def embed_rows(self, a, start, stop, n):
        return self.g.build("embed_rows", [a], start=start, stop=stop, n=n)

    def reshape(self, a, shape):
        return self.g.build("reshape", [a], shape=tuple(shape))


# Reverse rules: (F, adjoint, operands, output, attrs, operand shapes) -> operand adjoints.
def _vjp_add(F, g, ins, out, at, shp):
    return [F.sum_to(g, shp[0]), F.sum_to(g, shp[1])]


def _vjp_sub(F, g, ins, out, at, shp):
    return [F.sum_to(g, shp[0]), F.sum_to(F.neg(g), shp[1])]


def _vjp_mul(F, g, ins, out, at, shp):
    a, b = ins
    return [F.sum_to(F.mul(g, b), shp[0]), F.sum_to(F.mul(g, a), shp[1])]


def _vjp_div(F, g, ins, out, at, shp):
    a, b = ins
    ga = F.div(g, b)
    return [F.sum_to(ga, shp[0]), F.sum_to(F.neg(F.mul(ga, out)), shp[1])]


def _vjp_matmul(F, g, ins, out, at, shp):
    a, b = ins
    ta, tb = at.get("ta", False), at.get("tb", False)
    ga = F.matmul(b, g, tb, True) if ta else F.matmul(g, b, False, not tb)
    gb = F.matmul(g, a, True, ta) if tb else F.matmul(a, g, not ta, False)
    return [ga, gb]


_VJP: dict[str, Callable] = {
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "div": _vjp_div,
    "neg": lambda F, g, ins, out, at, shp: [F.neg(g)],
    "tanh": lambda F, g, ins, out, at, shp: [
        F.mul(g, F.sub(F.const(1.0), F.square(out)))
    ],
    "square": lambda F, g, ins, out, at, shp: [F.scale(F.mul(g, ins[0]), 2.0)],
    "sqrt": lambda F, g, ins, out, at, shp: [F.div(F.scale(g, 0.5), out)],
    "dot": lambda F, g, ins, out, at, shp: [
        F.sum_to(F.mul(g, ins[1]), shp[0]), F.sum_to(F.mul(g, ins[0]), shp[1])
    ],
    "scale": lambda F, g, ins, out, at, shp: [F.scale(g, at["c"])],
    "matmul": _vjp_matmul,
    "sum": lambda F, g, ins, out, at, shp: [F.broadcast_to(g, shp[0])],
    "sum_to": lambda F, g, ins, out, at, shp: [F.broadcast_to(g, shp[0])],
    "broadcast_to": lambda F, g, ins, out, at, shp: [F.sum_to(g, shp[0])],
    "rows": lambda F, g, ins, out, at, shp: [
        F.embed_rows(g, at["start"], at["stop"], shp[0][0])
    ],
    "embed_rows": lambda F, g, ins, out, at, shp: [F.rows(g, at["start"], at["stop"])],
    "reshape": lambda F, g, ins, out, at, shp: [F.reshape(g, shp[0])],
}


def _lin(F, op, t, at):
    # apply a linear unary op to a tangent
    if op == "neg":
        return F.neg(t)
    if op == "scale":
        return F.scale(t, at["c"])
    if op == "sum":
        return F.g.build("sum", [t])
    if op == "sum_to":
        return F.sum_to(t, at["shape"])
    if op == "broadcast_to":
        return F.broadcast_to(t, at["shape"])
    if op == "rows":
        return F.rows(t, at["start"], at["stop"])
    if op == "embed_rows":
        return F.embed_rows(t, at["start"], at["stop"], at["n"])
    if op == "reshape":
        return F.reshape(t, at["shape"])
    raise GraphError(op)


def _jvp(F, op, ts, ins, out, at):
    """Tangent of ``out`` given operand tangents ``ts`` (None = zero)."""
    ta, tb = (ts + [None])[:2]
    if op in ("add", "sub"):
        if tb is None:
            return F.broadcast_to(ta, F.shape(out))
        tb2 = tb if op == "add" else F.neg(tb)
        if ta is None:
            return F.broadcast_to(tb2, F.shape(out))
        return F.add(ta, tb2)
    if op in ("mul", "dot"):
        a, b = ins
        parts = []
        if ta is not None:
            parts.append(F.mul(ta, b))
        if tb is not None:
            parts.append(F.mul(a, tb))
        t = parts[0] if len(parts) == 1 else F.add(*parts)
        if op == "dot":
            return F.g.build("sum", [t])
        return F.broadcast_to(t, F.shape(out))
    if op == "div":
        a, b = ins
        parts = []
        if ta is not None:
            parts.append(F.div(ta, b))
        if tb is not None:
            parts.append(F.neg(F.div(F.mul(out, tb), b)))
        t = parts[0] if len(parts) == 1 else F.add(*parts)
        return F.broadcast_to(t, F.shape(out))
    if op == "matmul":
        a, b = ins
        tA, tB = at.get("ta", False), at.get("tb", False)
        parts = []
        if ta is not None:
            parts.append(F.matmul(ta, b, tA, tB))
        if tb is not None:
            parts.append(F.matmul(a, tb, tA, tB))
        return parts[0] if len(parts) == 1 else F.add(*parts)
    if op == "tanh":
        return F.mul(ta, F.sub(F.const(1.0), F.square(out)))
    if op == "square":
        return F.scale(F.mul(ta, ins[0]), 2.0)
    if op == "sqrt":
        return F.div(F.scale(ta, 0.5), out)
    return _lin(F, op, ta, at)


class ExprGraph:
    """Append-only computation tape.

    Nodes are created eagerly: :meth:`build` computes and caches the value
    immediately. Variables may later be rebound with :meth:`set_value`;
    :meth:`recompute` then refreshes every dependent node in tape order.
    """

    def __init__(self):
        self._op: list[str] = []
        self._args: list[tuple[int, ...]] = []
        self._attrs: list[dict] = []
        self._val: list[np.ndarray] = []
        self.variables: set[int] = set()
        self._plan_cache: dict = {}

    def __len__(self):
        return len(self._op)

    # -- construction -------------------------------------------------
    def _append(self, op, args, attrs, value) -> NodeId:
        self._op.append(op)
        self._args.append(tuple(args))
        self._attrs.append(attrs)
        self._val.append(value)
        self._plan_cache.clear()
        return len(self._op) - 1

    def const(self, value) -> NodeId:
        return self._append("const", (), {}, np.array(value, dtype=float))

    def var(self, value) -> NodeId:
        nid = self._append("var", (), {}, np.array(value, dtype=float))
        self.variables.add(nid)
        return nid

    def build(self, op: str, operands: Sequence[NodeId] = (), **attrs) -> NodeId:
        """Append an operation node and return its id.

        ``const`` and ``var`` take their value through ``attrs['value']``.
        """
        if op in ("const", "var"):
            if "value" not in attrs:
                raise GraphError(f"{op} node needs a value")
            return self.const(attrs["value"]) if op == "const" else self.var(attrs["value"])
        if op not in _FORWARD:
            raise GraphError(f"unknown operation {op!r}")
        n = len(self._op)
        for a in operands:
            if not isinstance(a, (int, np.integer)) or not 0 <= a < n:
                raise GraphError(f"invalid operand id {a!r}")
        args = tuple(int(a) for a in operands)
        value = _FORWARD[op](*(self._val[a] for a in args), **attrs)
        return self._append(op, args, attrs, np.asarray(value, dtype=float))

    # -- values -------------------------------------------------------
    def value(self, node: NodeId) -> np.ndarray:
        return self._val[node]

    def op(self, node: NodeId) -> str:
        return self._op[node]

    def set_value(self, node: NodeId, value) -> None:
        if node not in self.variables:
            raise GraphUsageError(f"node {node} is not a variable")
        value = np.asarray(value, dtype=float)
        if value.shape != self._val[node].shape:
            raise GraphUsageError(
                f"shape {value.shape} does not match variable shape {self._val[node].shape}"
            )
        self._val[node] = value.copy()

    def _dependents(self, sources: frozenset) -> list[int]:
        key = ("dep", sources)
        if key not in self._plan_cache:
            dirty = np.zeros(len(self._op), dtype=bool)
            for s in sources:
                dirty[s] = True
            order = []
            for i in range(len(self._op)):
                if self._args[i] and any(dirty[a] for a in self._args[i]):
                    dirty[i] = True
                    order.append(i)
            self._plan_cache[key] = order
        return self._plan_cache[key]

    def recompute(self, changed: Iterable[NodeId] | None = None) -> None:
        """Re-evaluate nodes downstream of ``changed`` (default: all variables)."""
        sources = frozenset(self.variables if changed is None else changed)
        val, args, attrs, ops = self._val, self._args, self._attrs, self._op
        for i in self._dependents(sources):
            val[i] = np.asarray(
                _FORWARD[ops[i]](*(val[a] for a in args[i]), **attrs[i]), dtype=float
            )

    # -- reverse mode -------------------------------------------------
    def _check_wrt(self, wrt):
        for w in wrt:
            if w not in self.variables:
                raise GraphUsageError(f"node {w} is not a variable")

    def _reverse_order(self, output: NodeId, wrt: frozenset) -> list[int]:
        """Nodes on some path wrt -> output, in reverse tape order."""
        key = ("rev", output, wrt)
        if key not in self._plan_cache:
            n = output + 1
            fwd = np.zeros(n, dtype=bool)
            for w in wrt:
                if w < n:
                    fwd[w] = True
            for i in range(n):
                if not fwd[i] and self._args[i] and any(fwd[a] for a in self._args[i]):
                    fwd[i] = True
            back = np.zeros(n, dtype=bool)
            back[output] = True
            for i in range(output, -1, -1):
                if back[i]:
                    for a in self._args[i]:
                        back[a] = True
            self._plan_cache[key] = [i for i in range(output, -1, -1) if fwd[i] and back[i]]
        return self._plan_cache[key]

    def _reverse(self, F, output, wrt, seed):
        wrt_set = frozenset(wrt)
        order = self._reverse_order(output, wrt_set)
        on_path = set(order)
        adj = {output: seed}
        for i in order:
            g = adj.pop(i, None) if i not in wrt_set else adj.get(i)
            if g is None or not self._args[i]:
                continue
            args = self._args[i]
            ins = [self._val[a] for a in args] if F is _Numeric else list(args)
            out = self._val[i] if F is _Numeric else i
            shp = [self._val[a].shape for a in args]
            grads = _VJP[self._op[i]](F, g, ins, out, self._attrs[i], shp)
            for a, ga in zip(args, grads):
                if a not in on_path:
                    continue
                adj[a] = ga if a not in adj else F.add(adj[a], ga)
        return adj

    def gradients(self, output: NodeId, wrt: Sequence[NodeId]) -> list[np.ndarray]:
        """Numeric d(output)/d(wrt) for a scalar output node."""
        self._check_wrt(wrt)
        if self._val[output].size != 1:
            raise GraphUsageError("gradients() needs a scalar output")
        seed = np.ones_like(self._val[output])
        adj = self._reverse(_Numeric, output, wrt, seed)
        return [
            np.array(adj[w], dtype=float).reshape(self._val[w].shape)
            if w in adj else np.zeros_like(self._val[w])
            for w in wrt
        ]

    def grad_nodes(self, scalar: NodeId, wrt: Sequence[NodeId]) -> list[NodeId]:
        """Emit nodes for d(scalar)/d(wrt_i); the results are differentiable again."""
        self._check_wrt(wrt)
        if self._val[scalar].size != 1:
            raise GraphUsageError("grad_nodes() needs a scalar output")
        F = _Symbolic(self)
        seed = self.const(np.ones_like(self._val[scalar]))
        adj = self._reverse(F, scalar, wrt, seed)
        out = []
        for w in wrt:
            if w in adj:
                out.append(F.reshape(adj[w], self._val[w].shape)
                           if self._val[adj[w]].shape != self._val[w].shape else adj[w])
            else:
                out.append(self.const(np.zeros_like(self._val[w])))
        return out

    # -- forward mode -------------------------------------------------
    def jvp_nodes(
        self,
        outputs: Sequence[NodeId],
        inputs: Sequence[NodeId],
        direction: Sequence[NodeId],
    ) -> list[NodeId]:
        """Directional derivatives of ``outputs`` along ``direction``, as nodes."""
        if len(inputs) != len(direction):
            raise GraphUsageError("inputs and direction differ in length")
        self._check_wrt(inputs)
        for x, d in zip(inputs, direction):
            if self._val[d].shape != self._val[x].shape:
                raise GraphUsageError("direction shape does not match input shape")
        F = _Symbolic(self)
        tan: dict[int, int] = dict(zip(inputs, direction))
        last = max(outputs) if outputs else -1
        start = min(inputs) if inputs else 0
        for i in range(start, last + 1):
            args = self._args[i]
            if not args or i in tan:
                continue
            ts = [tan.get(a) for a in args]
            if all(t is None for t in ts):
                continue
            tan[i] = _jvp(F, self._op[i], ts, list(args), i, self._attrs[i])
        return [tan[o] if o in tan else self.const(np.zeros_like(self._val[o]))
                for o in outputs]
