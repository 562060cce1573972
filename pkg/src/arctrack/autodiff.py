"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every primitive operation of a forward pass. Each
:class:`Node` stores its value, its parents, a vector-Jacobian closure for
the backward sweep, and a recompute closure so the tape can be replayed and
checked bit-for-bit against the recorded activations.

Only the primitives the tracker needs are provided: matmul, broadcast add
and multiply, relu, sigmoid, row softmax, row layer norm, concatenation, and
row slicing. Everything works on float64 arrays.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, TapeCorruption


class Tape:
    """Ordered record of one forward computation."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.output: Node | None = None

    def leaf(self, value, name: str) -> "Node":
        """A trainable input. Its gradient is reported under ``name``."""
        node = Node(self, np.asarray(value, dtype=np.float64), name=name, requires_grad=True)
        self.nodes.append(node)
        return node

    def constant(self, value) -> "Node":
        """A fixed input; no gradient is accumulated for it."""
        node = Node(self, np.asarray(value, dtype=np.float64))
        self.nodes.append(node)
        return node

    def mark_output(self, node: "Node") -> "Node":
        self.output = node
        return node

    def replay(self) -> None:
        """Recompute every non-leaf node and compare against the recording.

        Raises TapeCorruption when any stored activation fails to reproduce,
        which happens when someone mutated a node's buffer in place.
        """
        for node in self.nodes:
            if node.recompute is None:
                continue
            fresh = node.recompute()
            if not np.array_equal(fresh, node.data):
                raise TapeCorruption(f"node {node.op!r} no longer reproduces its recording")


class Node:
    __slots__ = ("tape", "data", "name", "requires_grad", "parents", "vjp", "recompute", "op")

    def __init__(self, tape, data, name=None, requires_grad=False,
                 parents=(), vjp=None, recompute=None, op="leaf"):
        self.tape = tape
        self.data = data
        self.name = name
        self.requires_grad = requires_grad
        self.parents = parents
        self.vjp = vjp
        self.recompute = recompute
        self.op = op

    @property
    def shape(self):
        return self.data.shape


def _record(op: str, parents: tuple[Node, ...], forward) -> Node:
    tape = parents[0].tape
    if any(p.tape is not tape for p in parents):
        raise TapeCorruption("operands recorded on different tapes")
    node = Node(tape, forward(), parents=parents, recompute=forward, op=op)
    tape.nodes.append(node)
    tape.output = node
    return node


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` to undo numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def matmul(a: Node, b: Node) -> Node:
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul mismatch {a.data.shape} @ {b.data.shape}")
    node = _record("matmul", (a, b), lambda: a.data @ b.data)
    node.vjp = lambda g: (g @ b.data.T, a.data.T @ g)
    return node


def add(a: Node, b: Node) -> Node:
    node = _record("add", (a, b), lambda: a.data + b.data)
    node.vjp = lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))
    return node


def mul(a: Node, b: Node) -> Node:
    node = _record("mul", (a, b), lambda: a.data * b.data)
    node.vjp = lambda g: (
        _unbroadcast(g * b.data, a.data.shape),
        _unbroadcast(g * a.data, b.data.shape),
    )
    return node


def scale(a: Node, s: float) -> Node:
    node = _record("scale", (a,), lambda: a.data * s)
    node.vjp = lambda g: (g * s,)
    return node


def transpose(a: Node) -> Node:
    node = _record("transpose", (a,), lambda: a.data.T.copy())
    node.vjp = lambda g: (g.T,)
    return node


def relu(a: Node) -> Node:
    node = _record("relu", (a,), lambda: np.maximum(a.data, 0.0))
    node.vjp = lambda g: (g * (a.data > 0.0),)
    return node


def sigmoid(a: Node) -> Node:
    def forward():
        x = a.data
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    node = _record("sigmoid", (a,), forward)
    node.vjp = lambda g: (g * node.data * (1.0 - node.data),)
    return node


def softmax_rows(a: Node) -> Node:
    def forward():
        shifted = a.data - a.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)

    node = _record("softmax", (a,), forward)

    def vjp(g):
        y = node.data
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    node.vjp = vjp
    return node


LAYER_NORM_EPS = 1e-5


def layer_norm_rows(x: Node, gain: Node, offset: Node) -> Node:
    """Normalize each row to zero mean and unit variance, then scale and shift."""
    if gain.data.shape != (x.data.shape[-1],) or offset.data.shape != (x.data.shape[-1],):
        raise ShapeError("gain/offset must match the feature dimension")

    def moments():
        mu = x.data.mean(axis=-1, keepdims=True)
        var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
        sigma = np.sqrt(var + LAYER_NORM_EPS)
        return mu, sigma

    def forward():
        mu, sigma = moments()
        return (x.data - mu) / sigma * gain.data + offset.data

    node = _record("layer_norm", (x, gain, offset), forward)

    def vjp(g):
        mu, sigma = moments()
        xhat = (x.data - mu) / sigma
        dxhat = g * gain.data
        dx = (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        ) / sigma
        axes = tuple(range(g.ndim - 1))
        return (dx, (g * xhat).sum(axis=axes), g.sum(axis=axes))

    node.vjp = vjp
    return node


def concat_cols(parts: list[Node]) -> Node:
    node = _record("concat_cols", tuple(parts), lambda: np.concatenate([p.data for p in parts], axis=1))

    def vjp(g):
        grads = []
        start = 0
        for p in parts:
            width = p.data.shape[1]
            grads.append(g[:, start : start + width])
            start += width
        return tuple(grads)

    node.vjp = vjp
    return node


def concat_rows(parts: list[Node]) -> Node:
    node = _record("concat_rows", tuple(parts), lambda: np.concatenate([p.data for p in parts], axis=0))

    def vjp(g):
        grads = []
        start = 0
        for p in parts:
            height = p.data.shape[0]
            grads.append(g[start : start + height])
            start += height
        return tuple(grads)

    node.vjp = vjp
    return node


def take_rows(a: Node, start: int, stop: int) -> Node:
    if not (0 <= start < stop <= a.data.shape[0]):
        raise ShapeError(f"row slice [{start}:{stop}] outside {a.data.shape}")
    node = _record("take_rows", (a,), lambda: a.data[start:stop].copy())

    def vjp(g):
        out = np.zeros_like(a.data)
        out[start:stop] = g
        return (out,)

    node.vjp = vjp
    return node


def backward(tape: Tape, loss_grad, output: Node | None = None) -> dict[str, np.ndarray]:
    """Accumulate gradients of the marked output against every named leaf.

    ``loss_grad`` is the upstream gradient with the output's shape. Returns a
    dict keyed by leaf name; leaves the output does not depend on get zeros.
    """
    out = output if output is not None else tape.output
    if out is None:
        raise TapeCorruption("tape has no output to differentiate")
    seed = np.asarray(loss_grad, dtype=np.float64)
    if seed.shape != out.data.shape:
        raise ShapeError(f"loss gradient shape {seed.shape} vs output {out.data.shape}")

    grads: dict[int, np.ndarray] = {id(out): seed}
    for node in reversed(tape.nodes):
        g = grads.get(id(node))
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg

    result: dict[str, np.ndarray] = {}
    for node in tape.nodes:
        if node.requires_grad and node.name is not None:
            g = grads.get(id(node))
            result[node.name] = np.zeros_like(node.data) if g is None else g
    return result
