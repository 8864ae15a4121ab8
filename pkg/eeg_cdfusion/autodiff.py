"""
    Minimal reverse-mode automatic differentiation on numpy arrays.

    A Tensor wraps an ndarray. Every differentiable operation is a Function
    subclass with a numpy forward and a backward that maps the output
    gradient to one gradient per input. Applying a Function to tensors that
    require gradients records it on the output, so the recorded graph is the
    tape that Tensor.backward walks in reverse topological order.

    ##########################################################################
    This code is part of the eeg_cdfusion package.

    This program is free software: you can redistribute it and/or modify
    it under the terms of the GNU Affero General Public License as published
    by the Free Software Foundation, either version 3 of the License, or
    (at your option) any later version.

    This program is distributed in the hope that it will be useful,
    but WITHOUT ANY WARRANTY; without even the implied warranty of
    MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
    GNU Affero General Public License for more details.

    You should have received a copy of the GNU Affero General Public License
    along with this program.  If not, see <https://www.gnu.org/licenses/>.
    ##########################################################################
"""

import contextlib
import itertools
import threading
from numbers import Number
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from eeg_cdfusion.exceptions import ShapeError

_NODE_IDS = itertools.count()
_STATE = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_STATE, "grad_enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Forward passes inside this block record nothing (per thread)."""
    previous = is_grad_enabled()
    _STATE.grad_enabled = False
    try:
        yield
    finally:
        _STATE.grad_enabled = previous


class Tensor:
    """An ndarray with an optional gradient and its place in the graph.

    Attributes:
        values (np.ndarray): The data.
        grad (Optional[np.ndarray]): Accumulated gradient, same shape as values.
        requires_grad (bool): Whether gradients flow into this tensor.
        node_id (int): Unique id of the node in the computation graph.
    """

    # numpy defers to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(
        self,
        values,
        requires_grad: bool = False,
        ctx: Optional["Function"] = None,
    ):
        self.values = np.asarray(values)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node_id = next(_NODE_IDS)
        self._ctx = ctx

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    def numpy(self) -> np.ndarray:
        return self.values

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    # arithmetic
    def __add__(self, other):
        if isinstance(other, Number):
            return AddScalar.apply(self, constant=other)
        return Add.apply(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Number):
            return AddScalar.apply(self, constant=-other)
        return Sub.apply(self, other)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return Scale.apply(self, factor=-1.0)

    def __mul__(self, other):
        if isinstance(other, Number):
            return Scale.apply(self, factor=other)
        return Mul.apply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Number):
            return Scale.apply(self, factor=1.0 / other)
        return Mul.apply(self, Reciprocal.apply(other))

    def __matmul__(self, other):
        return MatMul.apply(self, other)

    def __getitem__(self, index) -> "Tensor":
        return GetItem.apply(self, index=index)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes or None)

    def swapaxes(self, axis1: int, axis2: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[axis1], axes[axis2] = axes[axis2], axes[axis1]
        return self.transpose(axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Propagate gradients to every tensor this one depends on.

        Args:
            grad (np.ndarray, optional): Gradient of the final objective with
                respect to this tensor. Defaults to ones, i.e. the tensor
                itself is the objective.
        """
        if grad is None:
            grad = np.ones_like(self.values)
        pending = {self.node_id: np.asarray(grad, dtype=self.dtype)}
        for node in reversed(_topological_order(self)):
            node_grad = pending.pop(node.node_id, None)
            if node_grad is None:
                continue
            node.grad = node_grad if node.grad is None else node.grad + node_grad
            if node._ctx is None:
                continue
            for parent, parent_grad in zip(node._ctx.parents, node._ctx.backward(node_grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent.node_id in pending:
                    pending[parent.node_id] = pending[parent.node_id] + parent_grad
                else:
                    pending[parent.node_id] = parent_grad


def _topological_order(root: Tensor) -> List[Tensor]:
    # iterative post-order, recurrent graphs get too deep for recursion
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in visited:
            continue
        visited.add(node.node_id)
        stack.append((node, True))
        if node._ctx is not None:
            stack.extend(
                (parent, False)
                for parent in node._ctx.parents
                if parent.requires_grad and parent.node_id not in visited
            )
    return order


TensorLike = Union[Tensor, np.ndarray, Number]


def as_tensor(value: TensorLike) -> Tensor:
    """Wrap arrays and numbers as constant tensors; tensors pass through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def parameter(values: np.ndarray) -> Tensor:
    """A leaf tensor that collects gradients."""
    return Tensor(values, requires_grad=True)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum grad over the axes numpy broadcasting added or stretched."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Function:
    """Base class of differentiable operations.

    Subclasses implement forward on ndarrays (keyword arguments are
    non-differentiable settings) and backward returning one gradient, or
    None, per parent.
    """

    def __init__(self, *parents: Tensor):
        self.parents = parents

    @classmethod
    def apply(cls, *inputs: TensorLike, **kwargs) -> Tensor:
        parents = tuple(as_tensor(item) for item in inputs)
        ctx = cls(*parents)
        out = ctx.forward(*(parent.values for parent in parents), **kwargs)
        requires_grad = is_grad_enabled() and any(parent.requires_grad for parent in parents)
        return Tensor(out, requires_grad=requires_grad, ctx=ctx if requires_grad else None)

    def forward(self, *arrays: np.ndarray, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError


class Add(Function):
    def forward(self, x, y):
        self.shapes = (x.shape, y.shape)
        return x + y

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, x, y):
        self.shapes = (x.shape, y.shape)
        return x - y

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return unbroadcast(grad * self.y, self.x.shape), unbroadcast(grad * self.x, self.y.shape)


class Reciprocal(Function):
    def forward(self, x):
        self.out = 1.0 / x
        return self.out

    def backward(self, grad):
        return (-grad * self.out * self.out,)


class Scale(Function):
    def forward(self, x, factor=1.0):
        self.factor = factor
        return np.asarray(x * factor, dtype=x.dtype)

    def backward(self, grad):
        return (grad * self.factor,)


class AddScalar(Function):
    def forward(self, x, constant=0.0):
        return np.asarray(x + constant, dtype=x.dtype)

    def backward(self, grad):
        return (grad,)


class MatMul(Function):
    """Batched matrix product with numpy broadcasting over leading axes."""

    def forward(self, x, y):
        if x.ndim < 2 or y.ndim < 2 or x.shape[-1] != y.shape[-2]:
            raise ShapeError(f"Cannot multiply shapes {x.shape} and {y.shape}.")
        self.x, self.y = x, y
        return np.matmul(x, y)

    def backward(self, grad):
        grad_x = np.matmul(grad, np.swapaxes(self.y, -1, -2))
        grad_y = np.matmul(np.swapaxes(self.x, -1, -2), grad)
        return unbroadcast(grad_x, self.x.shape), unbroadcast(grad_y, self.y.shape)


class GetItem(Function):
    def forward(self, x, index=None):
        self.in_shape, self.index = x.shape, index
        return x[index]

    def backward(self, grad):
        out = np.zeros(self.in_shape, dtype=grad.dtype)
        np.add.at(out, self.index, grad)
        return (out,)


class Reshape(Function):
    def forward(self, x, shape=()):
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, x, axes=None):
        self.axes = axes if axes is not None else tuple(reversed(range(x.ndim)))
        return np.transpose(x, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.in_shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.sum(x, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class Mean(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.in_shape, self.axis, self.keepdims = x.shape, axis, keepdims
        out = np.mean(x, axis=axis, keepdims=keepdims)
        self.count = x.size // max(np.size(out), 1) if x.size else 1
        return out

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad / self.count, self.in_shape).copy(),)


class Concat(Function):
    def forward(self, *arrays, axis=-1):
        self.axis = axis
        self.splits = np.cumsum([array.shape[axis] for array in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


def concat(tensors: Sequence[TensorLike], axis: int = -1) -> Tensor:
    """Differentiable np.concatenate."""
    return Concat.apply(*tensors, axis=axis)


def gradient_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-6,
    seed: int = 0,
) -> float:
    """Compare backward gradients with central finite differences.

    The output of fn is reduced to a scalar with fixed random weights, then
    each input element is perturbed by +/- eps. Inputs should be float64.

    Args:
        fn (Callable[..., Tensor]): Function of len(inputs) tensors.
        inputs (Sequence[np.ndarray]): Points at which to check.
        eps (float): Finite-difference step. Defaults to 1e-6.
        seed (int): Seed of the reduction weights.

    Returns:
        rel_error (float): Largest relative error over the inputs,
            ||analytic - numeric|| / (||analytic|| + ||numeric||).
    """
    arrays = [np.array(item, dtype=np.float64) for item in inputs]
    tensors = [parameter(array) for array in arrays]
    out = fn(*tensors)
    weights = np.random.default_rng(seed).standard_normal(out.shape)
    out.backward(weights)

    def objective() -> float:
        with no_grad():
            return float(np.sum(fn(*[Tensor(array) for array in arrays]).values * weights))

    worst = 0.0
    for array, tensor in zip(arrays, tensors):
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(array)
        numeric = np.zeros_like(array)
        flat = array.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            upper = objective()
            flat[i] = original - eps
            lower = objective()
            flat[i] = original
            numeric.reshape(-1)[i] = (upper - lower) / (2.0 * eps)
        scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
        if scale > 0:
            worst = max(worst, float(np.linalg.norm(analytic - numeric) / scale))
    return worst
