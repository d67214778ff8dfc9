"""
Minimal reverse-mode automatic differentiation over dense float64 tensors.

Forward operations record themselves on the active ``Graph`` (entered with a
``with`` block). Outside a graph the same operations compute values only, which
is how evaluation and the verification suites run.
"""

import logging
import threading
from contextlib import contextmanager
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from exceptions import DimensionError, GraphError, NumericError

logger = logging.getLogger(__name__)

_local = threading.local()

Scalar = Union[int, float]


def _graph_stack() -> List['Graph']:
    if not hasattr(_local, 'stack'):
        _local.stack = []
    return _local.stack


def _check_finite(op: str, value: np.ndarray, phase: str = 'forward'):
    if not np.all(np.isfinite(value)):
        raise NumericError(op, phase)


class Tensor:
    """Dense row-major float64 array with an optional gradient buffer"""

    def __init__(self, data, requires_grad: bool = False, name: str = ''):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._graph: Optional['Graph'] = None
        self._node: Optional[int] = None
        _check_finite(name or 'tensor', self.data)

    @classmethod
    def _wrap(cls, value: np.ndarray) -> 'Tensor':
        out = cls.__new__(cls)
        out.data = value
        out.requires_grad = False
        out.grad = None
        out.name = ''
        out._graph = None
        out._node = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._graph is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self._graph is None:
            raise GraphError("tensor was not produced on a live graph")
        self._graph.backward(self)

    def __repr__(self):
        label = f"{self.name}, " if self.name else ''
        return f"Tensor({label}shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, other)

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(scalar_mul(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def relu(self):
        return relu(self)

    def log(self):
        return log(self)

    def exp(self):
        return exp(self)

    def tanh(self):
        return tanh(self)

    def softplus(self):
        return softplus(self)

    def sum(self, axis: Optional[int] = None):
        return tensor_sum(self, axis)

    def mean(self, axis: Optional[int] = None):
        return mean(self, axis)

    def max(self, axis: Optional[int] = None):
        return tensor_max(self, axis)

    def logsumexp(self, axis: Optional[int] = None):
        return logsumexp(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape)

    def broadcast_to(self, shape: Sequence[int]):
        return broadcast_to(self, shape)


class _Node:
    __slots__ = ('op', 'inputs', 'backward_fn')

    def __init__(self, op: str, inputs: Tuple[Tensor, ...], backward_fn: Callable):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn


class Graph:
    """Append-only record of the operations of one forward pass"""

    def __init__(self):
        self.nodes: List[_Node] = []
        self.consumed = False

    def __enter__(self) -> 'Graph':
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _graph_stack().pop()
        return False

    def __len__(self):
        return len(self.nodes)

    @staticmethod
    def current() -> Optional['Graph']:
        stack = _graph_stack()
        return stack[-1] if stack else None

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, backward_fn: Callable):
        if self.consumed:
            raise GraphError("cannot record on a consumed graph")
        output._graph = self
        output._node = len(self.nodes)
        output.requires_grad = True
        self.nodes.append(_Node(op, inputs, backward_fn))

    def backward(self, loss: Tensor):
        """Populate ``grad`` on every requires_grad leaf reachable from ``loss``"""
        if self.consumed:
            raise GraphError("graph already consumed by a previous backward pass")
        if loss.data.ndim != 0:
            raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._graph is not self:
            raise GraphError("loss was not produced on this graph")
        self.consumed = True

        pending = {loss._node: np.ones((), dtype=np.float64)}
        for index in range(len(self.nodes) - 1, -1, -1):
            upstream = pending.pop(index, None)
            if upstream is None:
                continue
            node = self.nodes[index]
            for tensor, grad in zip(node.inputs, node.backward_fn(upstream)):
                if grad is None or not tensor.requires_grad:
                    continue
                _check_finite(node.op, grad, 'backward')
                if tensor._graph is self:
                    held = pending.get(tensor._node)
                    pending[tensor._node] = grad if held is None else held + grad
                elif tensor._graph is None:
                    tensor.grad = np.array(grad) if tensor.grad is None else tensor.grad + grad


@contextmanager
def no_graph():
    """Suspend recording, e.g. for evaluation inside a training step"""
    stack = _graph_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _emit(op: str, value: np.ndarray, inputs: Tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    value = np.asarray(value, dtype=np.float64)
    _check_finite(op, value)
    out = Tensor._wrap(value)
    graph = Graph.current()
    if graph is not None and any(t.requires_grad for t in inputs):
        graph.record(op, inputs, out, backward_fn)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise DimensionError(op, a.shape, b.shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a + b; shapes must match"""
    _same_shape('add', a, b)
    return _emit('add', a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a - b; shapes must match"""
    _same_shape('sub', a, b)
    return _emit('sub', a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; shapes must match"""
    _same_shape('mul', a, b)
    return _emit('mul', a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scalar_mul(a: Tensor, c: Scalar) -> Tensor:
    """a * c for a constant c"""
    c = float(c)
    return _emit('scalar-mul', a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: Scalar) -> Tensor:
    """a + c for a constant c"""
    c = float(c)
    return _emit('add-scalar', a.data + c, (a,), lambda g: (g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product"""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError('matmul', a.shape, b.shape)
    return _emit('matmul', a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def relu(a: Tensor) -> Tensor:
    """max(a, 0); the slope at 0 is 0"""
    mask = a.data > 0
    return _emit('relu', np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def log(a: Tensor) -> Tensor:
    """Natural log; a non-positive input raises NumericError"""
    with np.errstate(divide='ignore', invalid='ignore'):
        value = np.log(a.data)
    return _emit('log', value, (a,), lambda g: (g / a.data,))


def exp(a: Tensor) -> Tensor:
    """e^a; overflow raises NumericError"""
    with np.errstate(over='ignore'):
        value = np.exp(a.data)
    return _emit('exp', value, (a,), lambda g: (g * value,))


def tanh(a: Tensor) -> Tensor:
    """Hyperbolic tangent"""
    value = np.tanh(a.data)
    return _emit('tanh', value, (a,), lambda g: (g * (1.0 - value * value),))


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^a) in overflow-free form"""
    value = np.logaddexp(0.0, a.data)
    sigmoid = np.exp(-np.logaddexp(0.0, -a.data))
    return _emit('softplus', value, (a,), lambda g: (g * sigmoid,))


def elementwise(op: str, a: Tensor, value: np.ndarray, slope: np.ndarray) -> Tensor:
    """Fused elementwise op from precomputed values and local derivatives"""
    value = np.asarray(value, dtype=np.float64)
    slope = np.asarray(slope, dtype=np.float64)
    if value.shape != a.shape or slope.shape != a.shape:
        raise DimensionError(op, a.shape, value.shape, slope.shape)
    return _emit(op, value, (a,), lambda g: (g * slope,))


def _expand(g: np.ndarray, shape: Tuple[int, ...], axis: Optional[int]) -> np.ndarray:
    if axis is not None:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def _check_axis(op: str, a: Tensor, axis: Optional[int]):
    if axis is not None and not -a.data.ndim <= axis < a.data.ndim:
        raise DimensionError(op, a.shape, (axis,))


def tensor_sum(a: Tensor, axis: Optional[int] = None) -> Tensor:
    """Sum over ``axis``, or over everything"""
    _check_axis('sum', a, axis)
    return _emit('sum', np.sum(a.data, axis=axis), (a,),
                 lambda g: (_expand(g, a.shape, axis),))


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    """Mean over ``axis``, or over everything"""
    _check_axis('mean', a, axis)
    count = a.data.size if axis is None else a.shape[axis]
    return _emit('mean', np.mean(a.data, axis=axis), (a,),
                 lambda g: (_expand(g, a.shape, axis) / count,))


def tensor_max(a: Tensor, axis: Optional[int] = None) -> Tensor:
    """Maximum along ``axis``; ties send the gradient to the lowest index"""
    _check_axis('max', a, axis)
    if axis is None:
        flat = int(np.argmax(a.data))

        def backward(g):
            grad = np.zeros(a.data.size)
            grad[flat] = g
            return (grad.reshape(a.shape),)

        return _emit('max', a.data.reshape(-1)[flat], (a,), backward)

    winners = np.expand_dims(np.argmax(a.data, axis=axis), axis)

    def backward(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, winners, np.expand_dims(g, axis), axis=axis)
        return (grad,)

    value = np.take_along_axis(a.data, winners, axis=axis).squeeze(axis)
    return _emit('max', value, (a,), backward)


def logsumexp(a: Tensor, axis: Optional[int] = None) -> Tensor:
    """log Σ e^a computed in max-shifted form"""
    _check_axis('logsumexp', a, axis)
    shift = np.max(a.data, axis=axis, keepdims=True)
    shifted = np.exp(a.data - shift)
    total = np.sum(shifted, axis=axis, keepdims=True)
    value = shift + np.log(total)
    softmax = shifted / total
    squeezed = value.reshape(()) if axis is None else np.squeeze(value, axis)

    def backward(g):
        return (_expand(g, a.shape, axis) * softmax,)

    return _emit('logsumexp', squeezed, (a,), backward)


def index_select(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Row-wise pick ``logits[i, labels[i]]``"""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError('index-select', logits.shape, labels.shape)
    rows = np.arange(labels.shape[0])

    def backward(g):
        grad = np.zeros_like(logits.data)
        grad[rows, labels] = g
        return (grad,)

    return _emit('index-select', logits.data[rows, labels], (logits,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Same values in a new shape"""
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = shape[0]
    try:
        value = a.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError('reshape', a.shape, tuple(shape))
    return _emit('reshape', value, (a,), lambda g: (g.reshape(a.shape),))


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast; the only place operands change shape implicitly"""
    shape = tuple(shape)
    try:
        value = np.broadcast_to(a.data, shape)
    except ValueError:
        raise DimensionError('broadcast', a.shape, shape)
    lead = len(shape) - a.data.ndim
    kept = tuple(i for i, size in enumerate(a.shape) if size == 1 and shape[lead + i] != 1)

    def backward(g):
        reduced = g.sum(axis=tuple(range(lead))) if lead else g
        if kept:
            reduced = reduced.sum(axis=kept, keepdims=True)
        return (reduced,)

    return _emit('broadcast', np.array(value), (a,), backward)
