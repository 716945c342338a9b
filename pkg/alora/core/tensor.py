"""
Tensor Engine
Dense float64 tensors with tape-based reverse-mode automatic differentiation
"""

import logging
import math
import threading
from contextlib import contextmanager
from typing import Callable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy.special import expit

from alora.errors import DimensionError, RankIndexError, StateError

logger = logging.getLogger(__name__)

LAYERNORM_EPS = 1e-5
GELU_COEF = 0.044715
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)

_local = threading.local()

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """
    Dense real tensor (at most 2-D) with a gradient slot.

    Attributes:
        data: float64 array holding the values
        grad: accumulated gradient with the shape of data, or None
        requires_grad: whether backward passes deliver gradients here
        name: optional parameter name
    """

    __slots__ = ('data', 'grad', 'requires_grad', 'name', '_node')

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 2:
            raise DimensionError(f"Tensors are at most 2-D, got shape {self.data.shape}")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._node: Optional['TapeNode'] = None

    @classmethod
    def parameter(cls, data, name: Optional[str] = None) -> 'Tensor':
        """Create a trainable leaf owning a private copy of data"""
        return cls(np.array(data, dtype=np.float64), requires_grad=True, name=name)

    @classmethod
    def constant(cls, data, name: Optional[str] = None) -> 'Tensor':
        """Create a frozen leaf owning a private copy of data"""
        return cls(np.array(data, dtype=np.float64), requires_grad=False, name=name)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def T(self) -> 'Tensor':
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float('nan')

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Back-propagate from this scalar through the tape that produced it"""
        if self._node is None:
            raise StateError("Tensor was not produced under an active Tape")
        self._node.tape.backward(self)

    def __add__(self, other) -> 'Tensor':
        return add(self, _as_tensor(other))

    def __radd__(self, other) -> 'Tensor':
        return add(_as_tensor(other), self)

    def __sub__(self, other) -> 'Tensor':
        return sub(self, _as_tensor(other))

    def __mul__(self, other) -> 'Tensor':
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other) -> 'Tensor':
        return self.__mul__(other)

    def __neg__(self) -> 'Tensor':
        return scale(self, -1.0)

    def __matmul__(self, other) -> 'Tensor':
        return matmul(self, other)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


class TapeNode:
    """One recorded primitive: inputs, output and the local backward rule."""

    __slots__ = ('tape', 'index', 'op', 'inputs', 'output', 'backward_fn')

    def __init__(self, tape: 'Tape', index: int, op: str, inputs: Tuple[Tensor, ...],
                 output: Tensor, backward_fn: BackwardFn):
        self.tape = tape
        self.index = index
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """
    Ordered record of the primitive operations of one forward pass.

    Operations are recorded only while the tape is active (``with Tape():``)
    and only when an input requires gradients. The node graph is kept in a
    networkx DiGraph; backward walks the recorded order in reverse, limited
    to the ancestors of the loss node.
    """

    def __init__(self):
        self.nodes: List[TapeNode] = []
        self.graph = nx.DiGraph()
        self.last_visit: List[int] = []

    def __enter__(self) -> 'Tape':
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor,
               backward_fn: BackwardFn) -> TapeNode:
        node = TapeNode(self, len(self.nodes), op, inputs, output, backward_fn)
        self.nodes.append(node)
        self.graph.add_node(node.index, op=op)
        for tensor in inputs:
            parent = tensor._node
            if parent is not None and parent.tape is self:
                self.graph.add_edge(parent.index, node.index)
        output._node = node
        return node

    def validate(self) -> bool:
        """Check the recorded graph is acyclic and edges point forward"""
        if not nx.is_directed_acyclic_graph(self.graph):
            return False
        return all(u < v for u, v in self.graph.edges())

    def backward(self, root: Tensor):
        """
        Accumulate d(root)/d(leaf) into every leaf that requires gradients.

        Args:
            root: Scalar output recorded on this tape
        """
        if root._node is None or root._node.tape is not self:
            raise StateError("Root tensor was not recorded on this tape")
        if root.size != 1:
            raise DimensionError(f"backward needs a scalar root, got shape {root.shape}")

        root_index = root._node.index
        reachable = nx.ancestors(self.graph, root_index)
        reachable.add(root_index)

        root.grad = np.ones_like(root.data) if root.grad is None else root.grad + 1.0
        self.last_visit = []

        for node in reversed(self.nodes[:root_index + 1]):
            if node.index not in reachable:
                continue
            out = node.output
            if out.grad is None:
                continue
            self.last_visit.append(node.index)
            input_grads = node.backward_fn(out.grad)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if grad.shape != tensor.shape:
                    raise DimensionError(
                        f"{node.op}: gradient shape {grad.shape} does not match input {tensor.shape}")
                tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
            if out is not root:
                # intermediate grads are consumed once
                out.grad = None


def _tape_stack() -> List[Optional[Tape]]:
    stack = getattr(_local, 'stack', None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def current_tape() -> Optional[Tape]:
    """Return the innermost active tape of the calling thread (None inside no_tape)"""
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_tape():
    """Suspend recording on the calling thread, e.g. for pure evaluation"""
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _result(data: np.ndarray, inputs: Tuple[Tensor, ...], op: str,
            backward_fn: BackwardFn) -> Tensor:
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    if requires:
        tape = current_tape()
        if tape is not None:
            tape.record(op, inputs, out, backward_fn)
    return out


def _require_2d(op: str, *tensors: Tensor):
    for t in tensors:
        if t.data.ndim != 2:
            raise DimensionError(f"{op}: expected a 2-D tensor, got shape {t.shape}")


def _broadcast_shape(op: str, a: Tuple[int, ...], b: Tuple[int, ...]) -> Tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a, b))
    except ValueError:
        raise DimensionError(f"{op}: shapes {a} and {b} are not broadcast-compatible") from None


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to shape"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an m×k and a k×n tensor"""
    _require_2d('matmul', a, b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    a_data, b_data = a.data, b.data

    def backward(g):
        return (g @ b_data.T if a.requires_grad else None,
                a_data.T @ g if b.requires_grad else None)

    return _result(a_data @ b_data, (a, b), 'matmul', backward)


def transpose(x: Tensor) -> Tensor:
    _require_2d('transpose', x)
    return _result(x.data.T.copy(), (x,), 'transpose', lambda g: (g.T,))


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape('add', a.shape, b.shape)
    a_shape, b_shape = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

    return _result(a.data + b.data, (a, b), 'add', backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape('sub', a.shape, b.shape)
    a_shape, b_shape = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)

    return _result(a.data - b.data, (a, b), 'sub', backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape('mul', a.shape, b.shape)
    a_data, b_data = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * b_data, a_data.shape) if a.requires_grad else None,
                _unbroadcast(g * a_data, b_data.shape) if b.requires_grad else None)

    return _result(a_data * b_data, (a, b), 'mul', backward)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _result(x.data * factor, (x,), 'scale', lambda g: (g * factor,))


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function 1 / (1 + exp(-x)), overflow-free"""
    s = expit(x.data)
    return _result(s, (x,), 'sigmoid', lambda g: (g * s * (1.0 - s),))


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    return _result(np.where(positive, x.data, 0.0), (x,), 'relu', lambda g: (g * positive,))


def gelu(x: Tensor) -> Tensor:
    """
    GELU, tanh approximation:
        gelu(x) = 0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x**3)))
    """
    v = x.data
    t = np.tanh(_SQRT_2_OVER_PI * (v + GELU_COEF * v ** 3))

    def backward(g):
        du = _SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * v ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t ** 2) * du),)

    return _result(0.5 * v * (1.0 + t), (x,), 'gelu', backward)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    """Row-wise layer normalization with affine (1×d) gamma and beta"""
    _require_2d('layernorm', x)
    width = x.shape[1]
    for p in (gamma, beta):
        if p.shape != (1, width):
            raise DimensionError(f"layernorm: affine shape {p.shape} does not match (1, {width})")

    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=1, keepdims=True) + eps)
    xhat = centered * inv_std
    g_data = gamma.data

    def backward(g):
        dxhat = g * g_data
        dx = inv_std * (dxhat - dxhat.mean(axis=1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return _result(xhat * g_data + beta.data, (x, gamma, beta), 'layernorm', backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax stabilized by per-row max subtraction"""
    _require_2d('softmax_rows', x)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result(y, (x,), 'softmax_rows', backward)


def softmax_cross_entropy(logits: Tensor, targets, reduction: str = 'mean') -> Tensor:
    """
    Cross-entropy of row-wise softmax against integer class targets.

    Args:
        logits: b×c tensor
        targets: length-b sequence of class indices in [0, c)
        reduction: 'mean' for a scalar loss, 'none' for a b×1 column

    Returns:
        Scalar (0-D) tensor, or b×1 tensor of per-row losses
    """
    _require_2d('softmax_cross_entropy', logits)
    rows, classes = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != rows:
        raise DimensionError(
            f"softmax_cross_entropy: {targets.shape[0]} targets for logits of shape {logits.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= classes):
        raise RankIndexError(f"softmax_cross_entropy: target outside [0, {classes})")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    picked = -log_probs[np.arange(rows), targets].reshape(rows, 1)

    def local_grad() -> np.ndarray:
        grad = np.exp(log_probs)
        grad[np.arange(rows), targets] -= 1.0
        return grad

    if reduction == 'none':
        return _result(picked, (logits,), 'cross_entropy',
                       lambda g: (local_grad() * g,))
    if reduction != 'mean':
        raise ValueError(f"Unknown reduction: {reduction}")

    def backward(g):
        return (local_grad() * (float(np.asarray(g).reshape(-1)[0]) / rows),)

    return _result(np.asarray(picked.mean()), (logits,), 'cross_entropy', backward)


# ---------------------------------------------------------------------------
# Structural
# ---------------------------------------------------------------------------

def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors side by side (row counts must match)"""
    _require_2d('concat_cols', *tensors)
    rows = {t.shape[0] for t in tensors}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {[t.shape for t in tensors]}")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _result(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors),
                   'concat_cols', backward)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack 2-D tensors vertically (column counts must match)"""
    _require_2d('concat_rows', *tensors)
    cols = {t.shape[1] for t in tensors}
    if len(cols) != 1:
        raise DimensionError(f"concat_rows: column counts differ {[t.shape for t in tensors]}")
    bounds = np.cumsum([0] + [t.shape[0] for t in tensors])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1], :] for i in range(len(tensors)))

    return _result(np.concatenate([t.data for t in tensors], axis=0), tuple(tensors),
                   'concat_rows', backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    _require_2d('slice_cols', x)
    if not 0 <= start < stop <= x.shape[1]:
        raise DimensionError(f"slice_cols: [{start}:{stop}] out of range for {x.shape}")
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _result(x.data[:, start:stop].copy(), (x,), 'slice_cols', backward)


def take_rows(table: Tensor, ids) -> Tensor:
    """Gather rows of a table (embedding lookup)"""
    _require_2d('take_rows', table)
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise RankIndexError(f"take_rows: index outside [0, {table.shape[0]})")
    shape = table.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, ids, g)
        return (full,)

    return _result(table.data[ids], (table,), 'take_rows', backward)


def sum_all(x: Tensor) -> Tensor:
    return _result(np.asarray(x.data.sum()), (x,), 'sum_all',
                   lambda g: (np.full(x.shape, float(np.asarray(g).reshape(-1)[0])),))


def as_row(values) -> Tensor:
    """Wrap a vector as a constant 1×n tensor"""
    return Tensor(np.asarray(values, dtype=np.float64).reshape(1, -1))


