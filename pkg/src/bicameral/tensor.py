"""Dense float64 tensors with reverse-mode automatic differentiation.

Storage is row-major, gradients are exact, and the graph is rebuilt on
every forward pass. Broadcasting is deliberately narrow: the only
mismatched-shape operation is adding a vector to every row of an array.
The op set covers exactly what the two transformer towers need.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import erf

BCE_EPS = 1e-7
LAYER_NORM_EPS = 1e-5

_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

# Test instrumentation: when set, called once per node during a backward
# traversal. Never set in production code.
_visit_hook: Callable | None = None


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class GraphError(RuntimeError):
    """Invalid interaction with a computation graph."""


class Tensor:
    """A dense n-dimensional float64 array, optionally tracking gradients.

    Results of operations on gradient-tracking inputs remember their
    parents and a backward closure; ``backward()`` on a scalar fills
    ``grad`` on every ancestor that requires it. Tensors that do not
    require gradients carry no graph links at all, so a frozen model's
    outputs are plain values.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn",
                 "_op", "_backward_done")

    def __init__(self, data, requires_grad: bool = False, *,
                 _parents: tuple = (), _backward=None, _op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = tuple(_parents)
        self._backward_fn = _backward
        self._op = _op
        self._backward_done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _scalar_err(self)

    def detach(self) -> "Tensor":
        """A copy that shares no graph links and tracks no gradient."""
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar through its graph.

        Each graph node is visited exactly once, in reverse topological
        order. Calling backward twice on the same result without
        rebuilding the graph is an error.
        """
        if self.size != 1:
            raise GraphError(f"backward requires a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("backward on a tensor with no gradient path")
        if self._backward_done:
            raise GraphError("backward already ran on this graph; rebuild the "
                             "forward pass before differentiating again")
        graph = build_graph(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(graph.nodes):
            if _visit_hook is not None:
                _visit_hook(node)
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
        self._backward_done = True

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


@dataclass
class ComputationGraph:
    """Topologically ordered record of one forward pass.

    ``nodes`` lists every tensor reachable from ``root`` through parent
    links, parents strictly before children. The graph is acyclic by
    construction: parent links are fixed at creation time.
    """

    root: Tensor
    nodes: list[Tensor]


def build_graph(root: Tensor) -> ComputationGraph:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return ComputationGraph(root, order)


def _scalar_err(t: Tensor):
    raise ShapeError(f"expected a scalar tensor, got shape {t.shape}")


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, _parents=parents, _backward=backward, _op=op)
    return Tensor(data)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a vector ``b`` broadcast across rows."""
    a, b = _as_tensor(a), _as_tensor(b)
    row_broadcast = (b.ndim == 1 and a.ndim >= 2 and a.shape[-1] == b.shape[0])
    if not row_broadcast and a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}")
    out = a.data + b.data

    def backward(g):
        _accumulate(a, g)
        if row_broadcast:
            _accumulate(b, g.reshape(-1, b.shape[0]).sum(axis=0))
        else:
            _accumulate(b, g)

    return _make(out, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of same-shape tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} * {b.shape}")
    out = a.data * b.data

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _make(out, (a, b), backward, "mul")


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar."""
    a = _as_tensor(a)
    s = float(s)
    out = a.data * s

    def backward(g):
        _accumulate(a, g * s)

    return _make(out, (a,), backward, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-d matrix product ``[m,k] @ [k,p] -> [m,p]``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(out, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    out = a.data.T.copy()

    def backward(g):
        _accumulate(a, g.T)

    return _make(out, (a,), backward, "transpose")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"reshape cannot map {a.shape} onto {shape}")
    out = a.data.reshape(shape).copy()

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(out, (a,), backward, "reshape")


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis; all leading axes must agree."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != b.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_last shape mismatch: {a.shape} ++ {b.shape}")
    p = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)

    def backward(g):
        _accumulate(a, g[..., :p])
        _accumulate(b, g[..., p:])

    return _make(out, (a, b), backward, "concat_last")


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true with ``value`` (may be -inf).

    No gradient flows through filled positions.
    """
    a = _as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeError(f"masked_fill mask shape {mask.shape} != data shape {a.shape}")
    out = np.where(mask, float(value), a.data)

    def backward(g):
        _accumulate(a, np.where(mask, 0.0, g))

    return _make(out, (a,), backward, "masked_fill")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows ``table[ids]``; gradients scatter-add back into the table."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-d, got shape {table.shape}")
    if ids.ndim != 1 or not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError("ids must be a 1-d integer sequence")
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"id out of range for table with {vocab} rows: "
                         f"{int(ids[(ids < 0) | (ids >= vocab)][0])}")
    out = table.data[ids].copy()

    def backward(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            _accumulate(table, gt)

    return _make(out, (table,), backward, "embedding_lookup")


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def backward(g):
        _accumulate(a, g * (a.data > 0.0))

    return _make(out, (a,), backward, "relu")


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit, 0.5*x*(1 + erf(x/sqrt(2)))."""
    a = _as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data / _SQRT_2))
    out = a.data * cdf

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
        _accumulate(a, g * (cdf + a.data * pdf))

    return _make(out, (a,), backward, "gelu")


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = _sigmoid_stable(a.data)

    def backward(g):
        _accumulate(a, g * out * (1.0 - out))

    return _make(out, (a,), backward, "sigmoid")


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``.

    Rows sum to one and never overflow; -inf entries (from causal
    masking) map to exactly zero probability, provided each slice keeps
    at least one finite entry.
    """
    a = _as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.shape}")
    m = np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        inner = np.sum(g * out, axis=axis, keepdims=True)
        _accumulate(a, out * (g - inner))

    return _make(out, (a,), backward, "softmax")


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize each row of the last axis to zero mean / unit variance,
    then apply the per-feature affine ``gain * xhat + bias``.

    A constant row has zero variance; the eps guard maps it to zeros
    before the affine.
    """
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm affine shapes {gain.shape}/{bias.shape} "
                         f"do not match feature width {d}")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    mu = np.mean(a.data, axis=-1, keepdims=True)
    var = np.mean((a.data - mu) ** 2, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv_std
    out = xhat * gain.data + bias.data

    def backward(g):
        gh = g * gain.data
        if a.requires_grad:
            term = gh - np.mean(gh, axis=-1, keepdims=True) \
                - xhat * np.mean(gh * xhat, axis=-1, keepdims=True)
            _accumulate(a, inv_std * term)
        lead = tuple(range(a.ndim - 1))
        _accumulate(gain, np.sum(g * xhat, axis=lead))
        _accumulate(bias, np.sum(g, axis=lead))

    return _make(out, (a, gain, bias), backward, "layer_norm")


def mean(a: Tensor) -> Tensor:
    """Mean over all elements, as a scalar tensor."""
    a = _as_tensor(a)
    out = np.asarray(np.mean(a.data))

    def backward(g):
        _accumulate(a, np.full_like(a.data, float(g) / a.size))

    return _make(out, (a,), backward, "mean")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-softmax of the target id at each position."""
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [T,V] logits, got {logits.shape}")
    t, v = logits.shape
    if targets.ndim != 1 or targets.shape[0] != t:
        raise ShapeError(f"cross_entropy targets length {targets.shape} "
                         f"does not match {t} positions")
    if not np.issubdtype(targets.dtype, np.integer):
        raise ShapeError("cross_entropy targets must be integer ids")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        bad = int(targets[(targets < 0) | (targets >= v)][0])
        raise IndexError(f"target id {bad} out of range for vocabulary of {v}")
    m = np.max(logits.data, axis=-1, keepdims=True)
    e = np.exp(logits.data - m)
    lse = m[:, 0] + np.log(np.sum(e, axis=-1))
    out = np.asarray(np.mean(lse - logits.data[np.arange(t), targets]))

    def backward(g):
        p = e / np.sum(e, axis=-1, keepdims=True)
        p[np.arange(t), targets] -= 1.0
        _accumulate(logits, float(g) * p / t)

    return _make(out, (logits,), backward, "cross_entropy")


def binary_cross_entropy(p: Tensor, y: Tensor, eps: float = BCE_EPS) -> Tensor:
    """Mean of -[y*log(p) + (1-y)*log(1-p)] with p clamped to [eps, 1-eps].

    Entries that hit the clamp pass no gradient.
    """
    p, y = _as_tensor(p), _as_tensor(y)
    if p.shape != y.shape:
        raise ShapeError(f"binary_cross_entropy shape mismatch: {p.shape} vs {y.shape}")
    pc = np.clip(p.data, eps, 1.0 - eps)
    out = np.asarray(np.mean(-(y.data * np.log(pc) + (1.0 - y.data) * np.log1p(-pc))))
    inside = (p.data > eps) & (p.data < 1.0 - eps)

    def backward(g):
        n = pc.size
        if p.requires_grad:
            gp = (pc - y.data) / (pc * (1.0 - pc)) * inside
            _accumulate(p, float(g) * gp / n)
        if y.requires_grad:
            _accumulate(y, float(g) * (np.log1p(-pc) - np.log(pc)) / n)

    return _make(out, (p, y), backward, "binary_cross_entropy")


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment buffers and the shared step count."""

    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[Tensor]) -> "AdamState":
        return cls(step=0,
                   m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params])


def adam_step(params: list[Tensor], grads: list[np.ndarray | None],
              state: AdamState, lr: float = 3e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on ``params``.

    A ``None`` gradient is treated as zero (the moments still decay).
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("params, grads and optimizer state are misaligned")
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def zero_grads(params: list[Tensor]) -> None:
    for p in params:
        p.grad = None
