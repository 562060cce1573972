"""Attention building blocks, optimizer, and initialization.

All operations accept either plain float arrays or autodiff Nodes; array
inputs run on a throwaway tape and return arrays, which keeps one-off
computations and tests convenient while the tracker records full tapes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff
from .autodiff import Node, Tape
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class AttentionConfig:
    """Multi-head attention dimensions.

    ``d_k`` doubles as the query width (queries and keys must agree); when
    ``d_k``/``d_v`` are omitted the head width defaults to ``d_model //
    heads``, which then must divide evenly.
    """

    d_model: int
    heads: int
    d_k: int | None = None
    d_v: int | None = None

    def __post_init__(self):
        if self.heads < 1:
            raise ConfigError(f"need at least one head, got {self.heads}")
        if self.d_model < 1:
            raise ConfigError(f"d_model must be positive, got {self.d_model}")
        if (self.d_k is None or self.d_v is None) and self.d_model % self.heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by {self.heads} heads"
            )

    @property
    def head_k(self) -> int:
        return self.d_k if self.d_k is not None else self.d_model // self.heads

    @property
    def head_v(self) -> int:
        return self.d_v if self.d_v is not None else self.d_model // self.heads


def _as_nodes(args):
    """Project mixed array/Node arguments onto one tape.

    Returns the nodes plus a flag telling the caller to unwrap the result
    back to an array (set when no argument was a Node).
    """
    tape = None
    for a in args:
        if isinstance(a, Node):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ShapeError("operands live on different tapes")
    unwrap = tape is None
    if tape is None:
        tape = Tape()
    nodes = tuple(a if isinstance(a, Node) else tape.constant(np.asarray(a, dtype=np.float64)) for a in args)
    return nodes, unwrap


def scaled_dot_attention(q, k, v):
    """Softmax(Q K^T / sqrt(d_k)) V with row-max stabilization."""
    (qn, kn, vn), unwrap = _as_nodes((q, k, v))
    if qn.data.ndim != 2 or kn.data.ndim != 2 or vn.data.ndim != 2:
        raise ShapeError("attention operands must be 2-d")
    if qn.data.shape[1] != kn.data.shape[1]:
        raise ShapeError(f"query width {qn.data.shape[1]} vs key width {kn.data.shape[1]}")
    if kn.data.shape[0] != vn.data.shape[0]:
        raise ShapeError(f"key rows {kn.data.shape[0]} vs value rows {vn.data.shape[0]}")
    d_k = qn.data.shape[1]
    kt = autodiff.transpose(kn)
    logits = autodiff.scale(autodiff.matmul(qn, kt), 1.0 / math.sqrt(d_k))
    weights = autodiff.softmax_rows(logits)
    out = autodiff.matmul(weights, vn)
    return out.data if unwrap else out


@dataclass
class MultiHeadParams:
    """Per-head projections plus the shared output projection.

    ``w_q[i]``/``w_k[i]`` map their inputs to the key width, ``w_v[i]`` to
    the value width; ``w_o`` maps the concatenated heads to the output width.
    Entries may be arrays or tape Nodes.
    """

    w_q: list
    w_k: list
    w_v: list
    w_o: object


def multi_head_attention(cfg: AttentionConfig, params: MultiHeadParams, q, k, v):
    """Concat(head_1 .. head_h) W_o with per-head projected attention."""
    if not (len(params.w_q) == len(params.w_k) == len(params.w_v) == cfg.heads):
        raise ShapeError(
            f"expected {cfg.heads} per-head projections, got "
            f"{len(params.w_q)}/{len(params.w_k)}/{len(params.w_v)}"
        )
    flat = [q, k, v, *params.w_q, *params.w_k, *params.w_v, params.w_o]
    nodes, unwrap = _as_nodes(flat)
    qn, kn, vn = nodes[0], nodes[1], nodes[2]
    h = cfg.heads
    w_q, w_k, w_v = nodes[3 : 3 + h], nodes[3 + h : 3 + 2 * h], nodes[3 + 2 * h : 3 + 3 * h]
    w_o = nodes[3 + 3 * h]
    heads = []
    for i in range(h):
        head = scaled_dot_attention(
            autodiff.matmul(qn, w_q[i]),
            autodiff.matmul(kn, w_k[i]),
            autodiff.matmul(vn, w_v[i]),
        )
        heads.append(head)
    out = autodiff.matmul(autodiff.concat_cols(heads), w_o)
    return out.data if unwrap else out


@dataclass
class FeedForwardParams:
    """Two affine layers with a relu between them."""

    w1: object
    b1: object
    w2: object
    b2: object


def feed_forward(x, params: FeedForwardParams):
    (xn, w1, b1, w2, b2), unwrap = _as_nodes((x, params.w1, params.b1, params.w2, params.b2))
    hidden = autodiff.relu(autodiff.add(autodiff.matmul(xn, w1), b1))
    out = autodiff.add(autodiff.matmul(hidden, w2), b2)
    return out.data if unwrap else out


def layer_norm(x, gain, offset):
    (xn, g, b), unwrap = _as_nodes((x, gain, offset))
    out = autodiff.layer_norm_rows(xn, g, b)
    return out.data if unwrap else out


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    """The usual sin/cos position table, one row per time index."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    idx = np.arange(d, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / d)
    table = np.where(idx % 2 == 0, np.sin(angles), np.cos(angles))
    return table


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); fan_in is the first axis."""
    bound = 1.0 / math.sqrt(shape[0])
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @staticmethod
    def for_params(params: dict[str, np.ndarray]) -> "AdamState":
        return AdamState(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One in-place Adam update over a named parameter dict."""
    missing = set(params) - set(grads)
    if missing:
        raise ShapeError(f"no gradients for parameters: {sorted(missing)}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} vs parameter {p.shape} for {name!r}")
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def annealed_lr(base: float, decay: float, epoch: int) -> float:
    """Learning rate after ``epoch`` whole epochs of multiplicative decay."""
    return base * decay ** epoch
