import logging
import threading
from contextlib import contextmanager

import numpy as np

from src.core.errors import ContractError, DomainError, ShapeError

logger = logging.getLogger(__name__)

_grad_state = threading.local()


def is_grad_enabled():
    """Whether new operations are recorded for backward on this thread."""
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording on the current thread (inference)."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def _as_array(data, dtype=None):
    if isinstance(data, Tensor):
        data = data.data
    array = np.asarray(data)
    if dtype is not None:
        return array.astype(dtype, copy=False)
    if not np.issubdtype(array.dtype, np.floating):
        array = array.astype(np.float64)
    return array


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement ``forward`` on raw arrays and ``backward``, which maps
    the gradient of the output to one gradient per parent (``None`` for a
    parent that receives no gradient). Gradients may keep the broadcast shape
    of the output; ``Tensor.backward`` reduces them to the parent shape.
    """

    def __init__(self, *parents):
        self.parents = parents

    def forward(self, *arrays, **kwargs):
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad):
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *tensors, **kwargs):
        """Run the forward pass and record the result in the graph."""
        fn = cls(*tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        result = Tensor(out, requires_grad=requires_grad)
        if requires_grad:
            result._ctx = fn
        return result

    @staticmethod
    def unbroadcast(grad, shape):
        """Sum out broadcast dimensions so that ``grad`` matches ``shape``."""
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, extent in enumerate(shape):
            if extent == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


class Add(Function):
    def forward(self, a, b):
        _broadcast_shape("add", a, b)
        return a + b

    def backward(self, grad):
        return grad, grad


class Sub(Function):
    def forward(self, a, b):
        _broadcast_shape("sub", a, b)
        return a - b

    def backward(self, grad):
        return grad, -grad


class Mul(Function):
    def forward(self, a, b):
        _broadcast_shape("mul", a, b)
        return a * b

    def backward(self, grad):
        a, b = (p.data for p in self.parents)
        return grad * b, grad * a


class Div(Function):
    def forward(self, a, b):
        _broadcast_shape("div", a, b)
        if np.any(b == 0):
            raise DomainError("div", "division by zero")
        return a / b

    def backward(self, grad):
        a, b = (p.data for p in self.parents)
        return grad / b, -grad * a / (b * b)


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Pow(Function):
    def forward(self, a, exponent):
        if float(exponent) != int(exponent) and np.any(a < 0):
            raise DomainError("pow", f"negative base with fractional exponent {exponent}")
        self.exponent = exponent
        return a ** exponent

    def backward(self, grad):
        a = self.parents[0].data
        return (grad * self.exponent * a ** (self.exponent - 1),)


class Exp(Function):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, a):
        if np.any(a <= 0):
            raise DomainError("log", "argument must be strictly positive")
        return np.log(a)

    def backward(self, grad):
        return (grad / self.parents[0].data,)


class Sqrt(Function):
    def forward(self, a):
        if np.any(a < 0):
            raise DomainError("sqrt", "argument must be non-negative")
        self.out = np.sqrt(a)
        return self.out

    def backward(self, grad):
        return (grad * 0.5 / self.out,)


class Reciprocal(Function):
    def forward(self, a):
        if np.any(a <= 0):
            raise DomainError("reciprocal", "argument must be strictly positive")
        self.out = 1.0 / a
        return self.out

    def backward(self, grad):
        return (-grad * self.out * self.out,)


class Clip(Function):
    def forward(self, a, low, high):
        self.low, self.high = low, high
        return np.clip(a, low, high)

    def backward(self, grad):
        a = self.parents[0].data
        inside = np.ones_like(a, dtype=bool)
        if self.low is not None:
            inside &= a >= self.low
        if self.high is not None:
            inside &= a <= self.high
        return (grad * inside,)


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError("matmul", a.shape, b.shape)
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeError("matmul", a.shape, b.shape, detail="batch dimensions") from None
        return a @ b

    def backward(self, grad):
        a, b = (p.data for p in self.parents)
        return grad @ np.swapaxes(b, -1, -2), np.swapaxes(a, -1, -2) @ grad


class Sum(Function):
    def forward(self, a, axis, keepdims):
        self.axes = _normalize_axes(axis, a.ndim)
        self.keepdims = keepdims
        return np.sum(a, axis=self.axes, keepdims=keepdims)

    def backward(self, grad):
        shape = self.parents[0].shape
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axes)
        return (np.broadcast_to(grad, shape),)


class Mean(Function):
    def forward(self, a, axis, keepdims):
        self.axes = _normalize_axes(axis, a.ndim)
        self.keepdims = keepdims
        self.count = int(np.prod([a.shape[i] for i in self.axes])) if self.axes else 1
        return np.mean(a, axis=self.axes, keepdims=keepdims)

    def backward(self, grad):
        shape = self.parents[0].shape
        if not self.keepdims:
            grad = np.expand_dims(grad, self.axes)
        return (np.broadcast_to(grad / self.count, shape),)


class Max(Function):
    def forward(self, a, axis, keepdims):
        self.axis = axis
        self.keepdims = keepdims
        return np.max(a, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        a = self.parents[0].data
        if isinstance(self.axis, int):
            # gradient goes to the first maximal entry only
            index = np.argmax(a, axis=self.axis)
            index = np.expand_dims(index, self.axis)
            mask = np.zeros_like(a)
            np.put_along_axis(mask, index, 1.0, axis=self.axis)
            if not self.keepdims:
                grad = np.expand_dims(grad, self.axis)
        else:
            axes = _normalize_axes(self.axis, a.ndim)
            peak = np.max(a, axis=axes, keepdims=True)
            mask = (a == peak).astype(a.dtype)
            mask /= mask.sum(axis=axes, keepdims=True)
            if not self.keepdims:
                grad = np.expand_dims(grad, axes)
        return (grad * mask,)


class Reshape(Function):
    def forward(self, a, shape):
        try:
            return a.reshape(shape)
        except ValueError:
            raise ShapeError("reshape", a.shape, shape) from None

    def backward(self, grad):
        return (grad.reshape(self.parents[0].shape),)


class Transpose(Function):
    def forward(self, a, axes):
        if axes is None:
            axes = tuple(reversed(range(a.ndim)))
        if sorted(a_ % a.ndim for a_ in axes) != list(range(a.ndim)):
            raise ShapeError("transpose", a.shape, axes)
        self.axes = axes
        return np.transpose(a, axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class BroadcastTo(Function):
    def forward(self, a, shape):
        try:
            return np.broadcast_to(a, shape)
        except ValueError:
            raise ShapeError("broadcast", a.shape, shape) from None

    def backward(self, grad):
        return (grad,)


class GetItem(Function):
    def forward(self, a, index):
        self.index = index
        try:
            return a[index]
        except IndexError as exc:
            raise ShapeError("getitem", a.shape, detail=str(exc)) from None

    def backward(self, grad):
        out = np.zeros_like(self.parents[0].data)
        np.add.at(out, self.index, grad)
        return (out,)


def _convert_index(index):
    if isinstance(index, Tensor):
        return index.data.astype(np.intp)
    if isinstance(index, list):
        return np.asarray(index, dtype=np.intp)
    if isinstance(index, tuple):
        return tuple(_convert_index(i) for i in index)
    return index


class Tensor:
    """
    N-dimensional real array that records the operations applied to it.

    ``grad`` is populated on leaves with ``requires_grad`` after
    ``backward()``; repeated backward calls accumulate until ``zero_grad()``.
    """

    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._ctx = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._ctx is None

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"

    def __len__(self):
        return len(self.data)

    def item(self):
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate d(self)/d(leaf) into every leaf that requires grad."""
        if self.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            logger.debug("backward() on a tensor without graph; nothing to do")
            return

        order = self._topological_order()
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._ctx is None:
                grad = np.array(grad, dtype=node.dtype, copy=True)
                node.grad = grad if node.grad is None else node.grad + grad
                continue
            parent_grads = node._ctx.backward(grad)
            for parent, parent_grad in zip(node._ctx.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                parent_grad = Function.unbroadcast(parent_grad, parent.shape)
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad

    def _topological_order(self):
        # iterative post-order DFS; parents always precede children
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.parents:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return order

    def _lift(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    # Arithmetic
    def __add__(self, other):
        return Add.apply(self, self._lift(other))

    def __radd__(self, other):
        return Add.apply(self._lift(other), self)

    def __sub__(self, other):
        return Sub.apply(self, self._lift(other))

    def __rsub__(self, other):
        return Sub.apply(self._lift(other), self)

    def __mul__(self, other):
        return Mul.apply(self, self._lift(other))

    def __rmul__(self, other):
        return Mul.apply(self._lift(other), self)

    def __truediv__(self, other):
        return Div.apply(self, self._lift(other))

    def __rtruediv__(self, other):
        return Div.apply(self._lift(other), self)

    def __neg__(self):
        return Neg.apply(self)

    def __pow__(self, exponent):
        return Pow.apply(self, exponent=exponent)

    def __matmul__(self, other):
        return MatMul.apply(self, self._lift(other))

    def __rmatmul__(self, other):
        return MatMul.apply(self._lift(other), self)

    def __getitem__(self, index):
        return GetItem.apply(self, index=_convert_index(index))

    # Elementwise
    def exp(self):
        return Exp.apply(self)

    def log(self):
        return Log.apply(self)

    def sqrt(self):
        return Sqrt.apply(self)

    def reciprocal(self):
        return Reciprocal.apply(self)

    def clip(self, low=None, high=None):
        return Clip.apply(self, low=low, high=high)

    # Reductions
    def sum(self, axis=None, keepdims=False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return Max.apply(self, axis=axis, keepdims=keepdims)

    # Shape
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes or None)

    def swapaxes(self, first, second):
        axes = list(range(self.ndim))
        axes[first], axes[second] = axes[second], axes[first]
        return self.transpose(axes)

    def broadcast_to(self, shape):
        return BroadcastTo.apply(self, shape=tuple(shape))


def as_tensor(data, dtype=None):
    """Wrap ``data`` as a constant tensor unless it already is one."""
    if isinstance(data, Tensor):
        return data
    return Tensor(data, dtype=dtype)
