"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Graphs are built define-by-run on a :class:`Tape`: every op appends a node
holding its output value and a closure that maps the upstream gradient to
gradients of its inputs.  ``Tape.backward`` walks the nodes in reverse
creation order, which is a valid topological order because node ids grow
monotonically.

Also provides bias-corrected Adam, He initialisation and a central
finite-difference gradient checker.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _as_array(value) -> np.ndarray:
    return np.array(value, dtype=DTYPE)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Node:
    """One value on a tape.  Supports ``+ - * @`` and unary minus."""

    __slots__ = ("tape", "id", "op", "inputs", "value", "backward_fn", "name")

    def __init__(self, tape, node_id, op, inputs, value, backward_fn=None, name=None):
        self.tape = tape
        self.id = node_id
        self.op = op
        self.inputs = inputs
        self.value = value
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r}, shape={self.shape})"

    def _lift(self, other) -> "Node":
        return other if isinstance(other, Node) else self.tape.const(other)

    def __add__(self, other):
        return self.tape.add(self, self._lift(other))

    def __radd__(self, other):
        return self.tape.add(self._lift(other), self)

    def __sub__(self, other):
        return self.tape.sub(self, self._lift(other))

    def __rsub__(self, other):
        return self.tape.sub(self._lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.scale(self, float(other))
        return self.tape.mul(self, self._lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return self.tape.neg(self)

    def __matmul__(self, other):
        return self.tape.matmul(self, self._lift(other))


class Tape:
    """Records operations for one forward pass.  Rebuild it every step."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _record(self, op, inputs, value, backward_fn=None, name=None) -> Node:
        node = Node(self, len(self.nodes), op, tuple(inputs), value, backward_fn, name)
        self.nodes.append(node)
        return node

    # leaves

    def param(self, value, name: str) -> Node:
        """Differentiable leaf; its gradient is reported under ``name``."""
        return self._record("param", (), _as_array(value), name=name)

    def const(self, value) -> Node:
        return self._record("const", (), _as_array(value))

    # binary ops

    def _broadcast_shape(self, op, a: Node, b: Node) -> tuple:
        try:
            return np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None

    def add(self, a: Node, b: Node) -> Node:
        self._broadcast_shape("add", a, b)
        sa, sb = a.shape, b.shape
        return self._record(
            "add", (a, b), a.value + b.value,
            lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        )

    def sub(self, a: Node, b: Node) -> Node:
        self._broadcast_shape("sub", a, b)
        sa, sb = a.shape, b.shape
        return self._record(
            "sub", (a, b), a.value - b.value,
            lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)),
        )

    def mul(self, a: Node, b: Node) -> Node:
        self._broadcast_shape("mul", a, b)
        av, bv = a.value, b.value
        return self._record(
            "mul", (a, b), av * bv,
            lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
        )

    def matmul(self, a: Node, b: Node) -> Node:
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        av, bv = a.value, b.value
        return self._record("matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))

    # unary ops

    def neg(self, x: Node) -> Node:
        return self._record("neg", (x,), -x.value, lambda g: (-g,))

    def scale(self, x: Node, c: float) -> Node:
        return self._record("scale", (x,), c * x.value, lambda g: (c * g,))

    def square(self, x: Node) -> Node:
        xv = x.value
        return self._record("square", (x,), xv * xv, lambda g: (2.0 * xv * g,))

    def relu(self, x: Node) -> Node:
        mask = x.value > 0
        return self._record("relu", (x,), np.where(mask, x.value, 0.0), lambda g: (g * mask,))

    def exp(self, x: Node) -> Node:
        out = np.exp(x.value)
        return self._record("exp", (x,), out, lambda g: (g * out,))

    def log(self, x: Node) -> Node:
        xv = x.value
        if np.any(xv <= 0):
            raise DomainError(f"log: non-positive input (min {xv.min()!r}) for shape {x.shape}")
        return self._record("log", (x,), np.log(xv), lambda g: (g / xv,))

    def clip_min(self, x: Node, floor: float) -> Node:
        """``max(x, floor)``; no gradient flows through clipped entries."""
        mask = x.value > floor
        return self._record(
            "clip_min", (x,), np.where(mask, x.value, floor), lambda g: (g * mask,)
        )

    def softmax(self, x: Node) -> Node:
        out = softmax(x.value)

        def backward(g):
            return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

        return self._record("softmax", (x,), out, backward)

    def log_softmax(self, x: Node) -> Node:
        out = log_softmax(x.value)
        probs = np.exp(out)

        def backward(g):
            return (g - probs * np.sum(g, axis=-1, keepdims=True),)

        return self._record("log_softmax", (x,), out, backward)

    # reductions and indexing

    def sum(self, x: Node, axis=None, keepdims: bool = False) -> Node:
        shape = x.shape
        out = np.sum(x.value, axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return self._record("sum", (x,), np.asarray(out, dtype=DTYPE), backward)

    def mean(self, x: Node, axis=None, keepdims: bool = False) -> Node:
        count = x.value.size if axis is None else x.shape[axis]
        return self.scale(self.sum(x, axis=axis, keepdims=keepdims), 1.0 / count)

    def gather(self, x: Node, index) -> Node:
        """Pick ``x[i, index[i]]`` from a 2-d node, giving shape ``(rows,)``."""
        index = np.asarray(index, dtype=np.int64)
        if x.value.ndim != 2 or index.shape != (x.shape[0],):
            raise ShapeError(f"gather: shapes {x.shape} and {index.shape} do not match")
        rows = np.arange(x.shape[0])
        shape = x.shape

        def backward(g):
            out = np.zeros(shape, dtype=DTYPE)
            np.add.at(out, (rows, index), g)
            return (out,)

        return self._record("gather", (x,), x.value[rows, index], backward)

    # reverse pass

    def backward(self, loss: Node, wrt=None) -> dict[str, np.ndarray]:
        """Gradients of scalar ``loss`` for every named param on this tape.

        Params that do not influence ``loss`` get an explicit zero array.
        """
        if loss.value.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        grads: list = [None] * len(self.nodes)
        grads[loss.id] = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.id + 1]):
            g = grads[node.id]
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.inputs, node.backward_fn(g)):
                if parent.op == "const":
                    continue
                grads[parent.id] = pg if grads[parent.id] is None else grads[parent.id] + pg
        out = {}
        for node in self.nodes:
            if node.op != "param" or (wrt is not None and node.name not in wrt):
                continue
            g = grads[node.id]
            out[node.name] = np.zeros_like(node.value) if g is None else np.asarray(g, dtype=DTYPE)
        return out


def softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def log_softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def logsumexp(x, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    m = x.max(axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.exp(x - m).sum(axis=axis))


GraphFn = Callable[[Tape, dict], "Node | dict"]


def forward(graph: GraphFn, inputs: Mapping[str, np.ndarray]):
    """Evaluate ``graph(tape, nodes)`` and return plain arrays."""
    tape = Tape()
    nodes = {name: tape.param(value, name) for name, value in inputs.items()}
    out = graph(tape, nodes)
    if isinstance(out, Node):
        return out.value
    return {name: node.value for name, node in out.items()}


def value_and_grad(graph: GraphFn, params: Mapping[str, np.ndarray]):
    tape = Tape()
    nodes = {name: tape.param(value, name) for name, value in params.items()}
    loss = graph(tape, nodes)
    return float(loss.value), tape.backward(loss)


# optimisation


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param, dtype=DTYPE), np.zeros_like(param, dtype=DTYPE))


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float, name: str = "param"):
    """One bias-corrected Adam update.  Returns ``(new_param, new_state)``."""
    grad = np.asarray(grad, dtype=DTYPE)
    if grad.shape != param.shape or state.m.shape != param.shape:
        raise ShapeError(f"adam_step: {name} has shape {param.shape}, grad {grad.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError(f"adam_step: non-finite gradient for {name}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_param = param - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_param, AdamState(m, v, t, state.beta1, state.beta2, state.eps)


@dataclass
class Adam:
    """Adam over a dict of named arrays, one :class:`AdamState` per entry."""

    lr: float
    states: dict[str, AdamState] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        for name in params:
            state = self.states.get(name) or AdamState.zeros_like(params[name])
            params[name], self.states[name] = adam_step(params[name], grads[name], state, self.lr, name)

    def state_dict(self) -> dict:
        return {
            "lr": self.lr,
            "states": {
                name: {"m": s.m.ravel().tolist(), "v": s.v.ravel().tolist(), "t": s.t, "shape": list(s.m.shape)}
                for name, s in self.states.items()
            },
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "Adam":
        states = {}
        for name, s in d["states"].items():
            shape = tuple(s["shape"])
            states[name] = AdamState(
                np.array(s["m"], dtype=DTYPE).reshape(shape),
                np.array(s["v"], dtype=DTYPE).reshape(shape),
                int(s["t"]),
            )
        return cls(float(d["lr"]), states)


def he_init(shape, rng: np.random.Generator) -> np.ndarray:
    """Gaussian weights with std ``sqrt(2 / fan_in)``, ``fan_in = shape[0]``."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ShapeError("he_init: shape needs at least one dimension")
    fan_in = shape[0]
    if fan_in <= 0:
        raise ShapeError(f"he_init: fan_in must be positive, got shape {shape}")
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(DTYPE)


def zeros_bias(shape) -> np.ndarray:
    return np.zeros(shape, dtype=DTYPE)


# verification


def numerical_gradient(graph: GraphFn, params: Mapping[str, np.ndarray], eps: float = 1e-5):
    params = {k: np.array(v, dtype=DTYPE) for k, v in params.items()}
    grads = {}
    for name, value in params.items():
        g = np.zeros_like(value)
        flat = value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(forward(graph, params))
            flat[i] = orig - eps
            down = float(forward(graph, params))
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError(f"gradient_check: loss not finite when perturbing {name}[{i}]")
            g.reshape(-1)[i] = (up - down) / (2.0 * eps)
        grads[name] = g
    return grads


def gradient_check(graph: GraphFn, params: Mapping[str, np.ndarray], eps: float = 1e-5) -> float:
    """Max of ``|autodiff - central difference| / max(1, |central difference|)``."""
    if eps <= 0:
        raise ValueError("gradient_check: eps must be positive")
    loss, analytic = value_and_grad(graph, params)
    if not np.isfinite(loss):
        raise NonFiniteError(f"gradient_check: loss is {loss}")
    numeric = numerical_gradient(graph, params, eps)
    worst = 0.0
    for name in params:
        err = np.abs(analytic[name] - numeric[name]) / np.maximum(1.0, np.abs(numeric[name]))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
