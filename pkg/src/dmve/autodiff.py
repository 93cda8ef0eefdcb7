"""Minimal tape-based reverse-mode automatic differentiation over numpy arrays.

Every differentiable function in this module is polymorphic: called on plain
numpy arrays it evaluates eagerly with no bookkeeping, called on a
:class:`Node` it records an operation on the node's :class:`Graph`.  Both
paths run the exact same numpy forward code, so a no-grad evaluation and a
recorded evaluation of the same inputs agree bit for bit.

The recorded graph can be replayed with :func:`evaluate` (new leaf values,
same structure) and differentiated with :func:`backprop`.  Python-level
decisions taken while the graph was being built (for example a horizon
selection computed from node values) are frozen into the recording.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from typing import Any, Callable

import numpy as np

__all__ = [
    "ContractError",
    "Graph",
    "Node",
    "StructureError",
    "backprop",
    "check_gradients",
    "clip",
    "concat",
    "elu",
    "evaluate",
    "exp",
    "log",
    "matmul",
    "maximum_along",
    "mean",
    "numerical_gradient",
    "relative_error",
    "reshape",
    "sigmoid",
    "softplus",
    "square",
    "stack",
    "stop_gradient",
    "sum",
    "tanh",
    "value_of",
]


class StructureError(ValueError):
    """Malformed graph input or operand shapes."""


class ContractError(RuntimeError):
    """An operation was called outside its contract (e.g. non-scalar backprop)."""


# op name -> (forward(*values, **attrs), backward(g, out, *values, **attrs))
_OPS: dict[str, tuple[Callable[..., np.ndarray], Callable[..., tuple]]] = {}


def _register(name: str, forward: Callable, backward: Callable) -> None:
    _OPS[name] = (forward, backward)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Node:
    """One value in a recorded computation."""

    __slots__ = ("graph", "index", "op", "parents", "attrs", "value", "requires_grad", "name")
    __array_ufunc__ = None  # make ndarray <op> Node defer to Node's reflected operators

    def __init__(self, graph, index, op, parents, attrs, value, requires_grad, name=None):
        self.graph = graph
        self.index = index
        self.op = op
        self.parents = parents
        self.attrs = attrs
        self.value = value
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        kind = self.op or "leaf"
        label = f" {self.name!r}" if self.name else ""
        return f"Node#{self.index}<{kind}{label} shape={self.value.shape}>"

    def __add__(self, other):
        return _binary("add", self, other)

    def __radd__(self, other):
        return _binary("add", other, self)

    def __sub__(self, other):
        return _binary("sub", self, other)

    def __rsub__(self, other):
        return _binary("sub", other, self)

    def __mul__(self, other):
        return _binary("mul", self, other)

    def __rmul__(self, other):
        return _binary("mul", other, self)

    def __truediv__(self, other):
        return _binary("div", self, other)

    def __rtruediv__(self, other):
        return _binary("div", other, self)

    def __matmul__(self, other):
        return _binary("matmul", self, other)

    def __rmatmul__(self, other):
        return _binary("matmul", other, self)

    def __neg__(self):
        return self.graph.apply("neg", (self,))

    def __getitem__(self, key):
        return self.graph.apply("getitem", (self,), key=key)


class Graph:
    """Recorded computation: nodes in creation (= topological) order.

    Args:
        trainable: name prefixes of parameters that receive gradients.  ``None``
            makes every parameter trainable.
    """

    def __init__(self, trainable: Iterable[str] | None = None):
        self.nodes: list[Node] = []
        self.adjoints: dict[int, np.ndarray] = {}
        self.outputs: dict[str, Node] = {}
        self.trainable = None if trainable is None else tuple(trainable)
        self._leaves: dict[str, Node] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _leaf(self, value, requires_grad: bool, name: str | None) -> Node:
        node = Node(self, len(self.nodes), None, (), {}, value, requires_grad, name)
        self.nodes.append(node)
        if name is not None:
            self._leaves[name] = node
        return node

    def param(self, name: str, value) -> Node:
        """Named parameter leaf; repeated requests return the same node."""
        node = self._leaves.get(name)
        if node is not None:
            return node
        trainable = self.trainable is None or name.startswith(self.trainable)
        return self._leaf(np.asarray(value, dtype=np.float64), trainable, name)

    def input(self, name: str, value) -> Node:
        """Named non-trainable leaf that :func:`evaluate` may rebind."""
        if name in self._leaves:
            raise StructureError(f"leaf {name!r} already defined")
        return self._leaf(np.asarray(value, dtype=np.float64), False, name)

    def constant(self, value) -> Node:
        return self._leaf(np.asarray(value, dtype=np.float64), False, None)

    def bind(self, params: Mapping[str, np.ndarray]) -> "ParamView":
        return ParamView(self, params)

    def mark(self, name: str, node: Node) -> Node:
        """Register ``node`` as a named output returned by :func:`evaluate`."""
        node.name = node.name or name
        self.outputs[name] = node
        return node

    def lift(self, x) -> Node:
        if isinstance(x, Node):
            if x.graph is not self:
                raise StructureError("operands belong to different graphs")
            return x
        return self.constant(x)

    def apply(self, op: str, parents: tuple[Node, ...], **attrs) -> Node:
        forward = _OPS[op][0]
        try:
            value = forward(*(p.value for p in parents), **attrs)
        except ValueError as exc:
            raise StructureError(f"node {len(self.nodes)} ({op}): {exc}") from exc
        requires_grad = any(p.requires_grad for p in parents)
        node = Node(self, len(self.nodes), op, parents, attrs, value, requires_grad)
        self.nodes.append(node)
        return node

    def leaf(self, name: str) -> Node:
        return self._leaves[name]

    @property
    def parameters(self) -> dict[str, Node]:
        return {k: n for k, n in self._leaves.items() if n.requires_grad}


class ParamView(Mapping):
    """Read-only mapping that turns stored arrays into graph parameter leaves."""

    def __init__(self, graph: Graph, params: Mapping[str, np.ndarray]):
        self._graph = graph
        self._params = params

    def __getitem__(self, name: str) -> Node:
        return self._graph.param(name, self._params[name])

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)


def _graph_of(*xs) -> Graph | None:
    for x in xs:
        if isinstance(x, Node):
            return x.graph
    return None


def _binary(op: str, a, b):
    graph = _graph_of(a, b)
    return graph.apply(op, (graph.lift(a), graph.lift(b)))


def _unary(op: str, fallback: Callable, x, **attrs):
    if isinstance(x, Node):
        return x.graph.apply(op, (x,), **attrs)
    return fallback(np.asarray(x, dtype=np.float64), **attrs)


def value_of(x) -> np.ndarray:
    """Numeric value of a node or array."""
    return x.value if isinstance(x, Node) else np.asarray(x)


# ---------------------------------------------------------------------------
# primitive operations


def _add_b(g, out, a, b):
    return g, g


def _sub_b(g, out, a, b):
    return g, -g


def _mul_b(g, out, a, b):
    return g * b, g * a


def _div_b(g, out, a, b):
    return g / b, -g * a / (b * b)


def _matmul_f(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    return a @ b


def _matmul_b(g, out, a, b):
    return g @ b.T, a.T @ g


_register("add", np.add, _add_b)
_register("sub", np.subtract, _sub_b)
_register("mul", np.multiply, _mul_b)
_register("div", np.divide, _div_b)
_register("matmul", _matmul_f, _matmul_b)
_register("neg", np.negative, lambda g, out, a: (-g,))


def _getitem_b(g, out, a, key):
    grad = np.zeros_like(a)
    if _has_fancy(key):
        np.add.at(grad, key, g)
    else:
        grad[key] = g
    return (grad,)


def _has_fancy(key) -> bool:
    keys = key if isinstance(key, tuple) else (key,)
    return any(isinstance(k, (list, np.ndarray)) for k in keys)


_register("getitem", lambda a, key: a[key], _getitem_b)


def _exp_f(a):
    return np.exp(a)


def _log_f(a):
    return np.log(a)


def _tanh_f(a):
    return np.tanh(a)


def _sigmoid_f(a):
    # exact 0.5 at zero logits and no overflow warnings
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _softplus_f(a):
    return np.logaddexp(0.0, a)


def _elu_f(a):
    return np.where(a > 0, a, np.expm1(np.minimum(a, 0.0)))


def _square_f(a):
    return a * a


_register("exp", _exp_f, lambda g, out, a: (g * out,))
_register("log", _log_f, lambda g, out, a: (g / a,))
_register("tanh", _tanh_f, lambda g, out, a: (g * (1.0 - out * out),))
_register("sigmoid", _sigmoid_f, lambda g, out, a: (g * out * (1.0 - out),))
_register("softplus", _softplus_f, lambda g, out, a: (g * _sigmoid_f(a),))
_register("elu", _elu_f, lambda g, out, a: (g * np.where(a > 0, 1.0, out + 1.0),))
_register("square", _square_f, lambda g, out, a: (2.0 * a * g,))


def _clip_f(a, lo, hi):
    return np.clip(a, lo, hi)


def _clip_b(g, out, a, lo, hi):
    return (g * ((a >= lo) & (a <= hi)),)


_register("clip", _clip_f, _clip_b)
_register("stop_gradient", lambda a: a, lambda g, out, a: (None,))


def _sum_f(a, axis=None, keepdims=False):
    return np.asarray(np.sum(a, axis=axis, keepdims=keepdims))


def _sum_b(g, out, a, axis=None, keepdims=False):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def _mean_f(a, axis=None, keepdims=False):
    return np.asarray(np.mean(a, axis=axis, keepdims=keepdims))


def _mean_b(g, out, a, axis=None, keepdims=False):
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    (grad,) = _sum_b(g, out, a, axis=axis, keepdims=keepdims)
    return (grad / count,)


_register("sum", _sum_f, _sum_b)
_register("mean", _mean_f, _mean_b)


def _max_f(a, axis):
    return np.max(a, axis=axis)


def _max_b(g, out, a, axis):
    # subgradient: the first maximal entry (smallest index) takes the gradient
    idx = np.expand_dims(np.argmax(a, axis=axis), axis)
    grad = np.zeros_like(a)
    np.put_along_axis(grad, idx, np.expand_dims(g, axis), axis=axis)
    return (grad,)


_register("max", _max_f, _max_b)


def _reshape_b(g, out, a, shape):
    return (g.reshape(a.shape),)


_register("reshape", lambda a, shape: a.reshape(shape), _reshape_b)


def _concat_f(*xs, axis):
    return np.concatenate(xs, axis=axis)


def _concat_b(g, out, *xs, axis):
    edges = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tuple(np.split(g, edges, axis=axis))


def _stack_f(*xs, axis):
    return np.stack(xs, axis=axis)


def _stack_b(g, out, *xs, axis):
    return tuple(np.moveaxis(g, axis, 0))


_register("concat", _concat_f, _concat_b)
_register("stack", _stack_f, _stack_b)


# ---------------------------------------------------------------------------
# public polymorphic API


def matmul(a, b):
    if isinstance(a, Node) or isinstance(b, Node):
        return _binary("matmul", a, b)
    return _matmul_f(np.asarray(a), np.asarray(b))


def exp(x):
    return _unary("exp", _exp_f, x)


def log(x):
    return _unary("log", _log_f, x)


def tanh(x):
    return _unary("tanh", _tanh_f, x)


def sigmoid(x):
    return _unary("sigmoid", _sigmoid_f, x)


def softplus(x):
    return _unary("softplus", _softplus_f, x)


def elu(x):
    return _unary("elu", _elu_f, x)


def square(x):
    return _unary("square", _square_f, x)


def clip(x, lo: float, hi: float):
    return _unary("clip", _clip_f, x, lo=lo, hi=hi)


def stop_gradient(x):
    if isinstance(x, Node):
        return x.graph.apply("stop_gradient", (x,))
    return x


def sum(x, axis: int | None = None, keepdims: bool = False):  # noqa: A001
    return _unary("sum", _sum_f, x, axis=axis, keepdims=keepdims)


def mean(x, axis: int | None = None, keepdims: bool = False):
    return _unary("mean", _mean_f, x, axis=axis, keepdims=keepdims)


def maximum_along(x, axis: int):
    """Max over ``axis``; the gradient goes to the first maximal entry only."""
    return _unary("max", _max_f, x, axis=axis)


def reshape(x, shape: tuple[int, ...]):
    return _unary("reshape", lambda a, shape: a.reshape(shape), x, shape=tuple(shape))


def _sequence_op(op: str, fallback: Callable, xs, axis: int):
    graph = _graph_of(*xs)
    if graph is None:
        return fallback(*(np.asarray(x) for x in xs), axis=axis)
    return graph.apply(op, tuple(graph.lift(x) for x in xs), axis=axis)


def concat(xs, axis: int = -1):
    return _sequence_op("concat", _concat_f, list(xs), axis)


def stack(xs, axis: int = 0):
    return _sequence_op("stack", _stack_f, list(xs), axis)


# ---------------------------------------------------------------------------
# graph replay and differentiation


def evaluate(graph: Graph, inputs: Mapping[str, Any] | None = None) -> dict[str, np.ndarray]:
    """Rebind named leaves and recompute every node in recorded order.

    Returns the values of all outputs registered with :meth:`Graph.mark`.
    """
    for name, value in (inputs or {}).items():
        try:
            node = graph.leaf(name)
        except KeyError:
            raise StructureError(f"unknown graph input {name!r}") from None
        value = np.asarray(value, dtype=np.float64)
        if value.shape != node.value.shape:
            raise StructureError(
                f"input {name!r} (node {node.index}) has shape {value.shape}, "
                f"expected {node.value.shape}"
            )
        node.value = value
    for node in graph.nodes:
        if node.op is None:
            continue
        forward = _OPS[node.op][0]
        try:
            node.value = forward(*(p.value for p in node.parents), **node.attrs)
        except ValueError as exc:
            raise StructureError(f"node {node.index} ({node.op}): {exc}") from exc
    graph.adjoints = {}
    return {name: node.value for name, node in graph.outputs.items()}


def backprop(graph: Graph, output: Node, retain: bool = False) -> dict[str, np.ndarray]:
    """Accumulate adjoints from scalar ``output`` back to the trainable leaves.

    Args:
        graph: graph that recorded ``output``.
        output: scalar node.
        retain: keep every intermediate adjoint in ``graph.adjoints``; by default
            only leaf adjoints survive, which keeps peak memory near one graph.

    Returns:
        Gradient per trainable parameter name (zeros for parameters the output
        does not depend on).
    """
    if output.graph is not graph:
        raise StructureError("output node belongs to a different graph")
    if output.value.size != 1:
        raise ContractError(f"backprop needs a scalar output, got shape {output.value.shape}")
    adj: dict[int, np.ndarray] = {output.index: np.ones_like(output.value)}
    for node in reversed(graph.nodes[: output.index + 1]):
        if node.op is None:
            continue
        g = adj.get(node.index) if retain else adj.pop(node.index, None)
        if g is None:
            continue
        backward = _OPS[node.op][1]
        grads = backward(g, node.value, *(p.value for p in node.parents), **node.attrs)
        for parent, pg in zip(node.parents, grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.value.shape:
                pg = _unbroadcast(pg, parent.value.shape)
            prev = adj.get(parent.index)
            adj[parent.index] = pg if prev is None else prev + pg
    graph.adjoints = adj
    return {
        name: adj.get(node.index, np.zeros_like(node.value))
        for name, node in graph.parameters.items()
    }


# ---------------------------------------------------------------------------
# finite-difference checking


def numerical_gradient(
    fn: Callable[[dict[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    names: Iterable[str] | None = None,
    eps: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central finite differences of scalar ``fn(params)`` for the named arrays."""
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    grads = {}
    for name in names if names is not None else list(params):
        base = params[name]
        grad = np.zeros_like(base)
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(fn(params))
            flat[i] = orig - eps
            lo = float(fn(params))
            flat[i] = orig
            grad.reshape(-1)[i] = (hi - lo) / (2.0 * eps)
        grads[name] = grad
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|, floor)``."""
    diff = np.linalg.norm(np.ravel(analytic) - np.ravel(numeric))
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(diff / scale)


def check_gradients(
    analytic: Mapping[str, np.ndarray],
    fn: Callable[[dict[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-5,
) -> dict[str, float]:
    """Relative error of each analytic gradient against central differences."""
    numeric = numerical_gradient(fn, params, names=list(analytic), eps=eps)
    return {name: relative_error(analytic[name], numeric[name]) for name in analytic}
