"""
TENSOR
------
A small reverse-mode automatic differentiation engine on top of numpy.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record their parents and a local backward rule; :func:`backward`
walks the recorded graph in reverse topological order and accumulates
gradients into every reachable leaf.

The differentiable operation set is closed over what the sarcasm model
needs: matmul, add, (scalar) multiply, concatenate, slicing and gathers,
tanh, GELU, layer norm, softmax, log, clip, sum/mean and L2 normalisation.

Example
-------
>>> from intermep.tensor import Tensor, backward
>>> x = Tensor(3.0, requires_grad=True, dtype="float64")
>>> grads = backward(x * x, {"x": x})
>>> grads["x"]
array(6.)

"""

__all__ = [
    'DEFAULT_DTYPE',
    'Parameter',
    'Tensor',
    'add',
    'backward',
    'clip',
    'concatenate',
    'gelu',
    'getitem',
    'grad_enabled',
    'l2_normalize',
    'layer_norm',
    'log',
    'matmul',
    'mean',
    'mul',
    'no_grad',
    'reshape',
    'softmax',
    'sum',
    'tanh',
    'transpose',
    ]

import builtins
import contextlib
import threading

import numpy as np

from intermep import maths

DEFAULT_DTYPE = np.float32

_mode = threading.local()


def grad_enabled():
    """Whether operations currently record a graph on this thread."""
    return getattr(_mode, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """
    Context manager that disables graph recording on this thread.

    """
    previous = grad_enabled()
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = previous


class Tensor:
    """
    A dense n-dimensional array with optional gradient tracking.

    Parameters
    ----------
    data : array-like
        The values. Integer input is converted to `dtype` (or float32).
    requires_grad : bool, optional
        Whether gradients should flow into this tensor.
        Default: False
    dtype : str or np.dtype or None, optional
        Storage type. If None, floating input keeps its type.
        Default: None
    name : str or None, optional
        A label used in error messages.

    """
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        array = np.array(data, dtype=dtype, copy=True)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(DEFAULT_DTYPE)
        maths.check_finite(array, name or "tensor")
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self._op = "leaf"

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
    def T(self):
        return transpose(self)

    def item(self):
        return self.data.item()

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a constant")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def tanh(self):
        return tanh(self)

    def log(self):
        return log(self)


class Parameter(Tensor):
    """
    A leaf tensor owned by a model.

    Parameters
    ----------
    data : array-like
        Initial values.
    trainable : bool, optional
        Whether the optimiser updates this parameter.
        Default: True

    """
    def __init__(self, data, trainable=True, dtype=None, name=None):
        super().__init__(data, requires_grad=trainable, dtype=dtype, name=name)

    @property
    def trainable(self):
        return self.requires_grad


def _lift(value, like=None):
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


def _make(data, parents, rule, op):
    data = np.asarray(data)
    maths.check_finite(data, f"output of {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._op = op
    if grad_enabled() and builtins.any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = rule
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def add(a, b):
    """Elementwise a + b with numpy broadcasting."""
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def rule(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _make(a.data + b.data, (a, b), rule, "add")


def mul(a, b):
    """Elementwise a * b with numpy broadcasting (b may be a constant)."""
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def rule(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _make(a.data * b.data, (a, b), rule, "mul")


def matmul(a, b):
    """Batched matrix product; both operands need at least two axes."""
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    if a.ndim < 2 or b.ndim < 2:
        msg = f"matmul needs operands with >= 2 axes, got {a.shape} and {b.shape}"
        raise ValueError(msg)
    if a.shape[-1] != b.shape[-2]:
        msg = f"matmul shape mismatch: {a.shape} @ {b.shape}"
        raise ValueError(msg)

    def rule(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(a.data @ b.data, (a, b), rule, "matmul")


def sum(x, axis=None, keepdims=False):
    """Sum over `axis` (all axes if None)."""
    axes = _axes(axis, x.ndim)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.sum(x.data, axis=axes, keepdims=keepdims), (x,), rule, "sum")


def mean(x, axis=None, keepdims=False):
    """Mean over `axis` (all axes if None)."""
    axes = _axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise ValueError("mean over an empty axis is undefined")
    return mul(sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


def reshape(x, shape):
    def rule(g):
        return (g.reshape(x.shape),)

    return _make(x.data.reshape(shape), (x,), rule, "reshape")


def transpose(x, axes=None):
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))

    def rule(g):
        return (np.transpose(g, inverse),)

    return _make(np.transpose(x.data, axes), (x,), rule, "transpose")


def getitem(x, index):
    """Slicing and integer-array gathers; gradients scatter back with add.at."""
    if isinstance(index, Tensor):
        raise TypeError("index with numpy arrays, not tensors")

    def rule(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, index, g)
        return (grad,)

    return _make(np.array(x.data[index]), (x,), rule, "getitem")


def concatenate(tensors, axis=0):
    """Joins tensors along an existing axis."""
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ValueError("need at least one tensor to concatenate")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def rule(g):
        pieces = np.split(g, bounds, axis=axis)
        return tuple(p if t.requires_grad else None for p, t in zip(pieces, tensors))

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(data, tensors, rule, "concatenate")


def tanh(x):
    out_data = np.tanh(x.data)

    def rule(g):
        return (g * (1.0 - out_data * out_data),)

    return _make(out_data, (x,), rule, "tanh")


def gelu(x):
    """Exact erf-form GELU."""
    def rule(g):
        return (g * maths.gelu_derivative(x.data),)

    return _make(maths.gelu(x.data), (x,), rule, "gelu")


def log(x):
    """Natural log. Non-positive input raises through the finite check."""
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(x.data)

    def rule(g):
        return (g / x.data,)

    return _make(data, (x,), rule, "log")


def clip(x, low, high):
    """Clamps values into [low, high]; gradient passes only inside the range."""
    inside = (x.data >= low) & (x.data <= high)

    def rule(g):
        return (g * inside,)

    return _make(np.clip(x.data, low, high), (x,), rule, "clip")


def softmax(x, axis=-1):
    """Softmax along `axis`, computed with max subtraction."""
    out_data = maths.softmax(x.data, axis=axis)

    def rule(g):
        inner = np.sum(g * out_data, axis=axis, keepdims=True)
        return (out_data * (g - inner),)

    return _make(out_data, (x,), rule, "softmax")


def layer_norm(x, weight, bias, eps=1e-5):
    """
    Normalises the last axis to zero mean and unit variance, then applies
    an elementwise affine transform.

    """
    centred = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    normed = centred * inv_std
    lead = tuple(range(x.ndim - 1))

    def rule(g):
        gx = gw = gb = None
        if x.requires_grad:
            gn = g * weight.data
            gx = inv_std * (gn - gn.mean(axis=-1, keepdims=True)
                            - normed * (gn * normed).mean(axis=-1, keepdims=True))
        if weight.requires_grad:
            gw = np.sum(g * normed, axis=lead)
        if bias.requires_grad:
            gb = np.sum(g, axis=lead)
        return gx, gw, gb

    return _make(normed * weight.data + bias.data, (x, weight, bias), rule, "layer_norm")


def l2_normalize(x, axis=-1, eps=maths.NORM_EPS):
    """
    Row-wise L2 normalisation.

    Raises
    ------
    DegenerateFeatureError
        If any row has a norm <= eps.

    """
    norm = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=True))
    if np.any(norm <= eps):
        raise maths.DegenerateFeatureError("degenerate projection feature: norm is ~0")
    out_data = x.data / norm

    def rule(g):
        inner = np.sum(g * out_data, axis=axis, keepdims=True)
        return ((g - out_data * inner) / norm,)

    return _make(out_data, (x,), rule, "l2_normalize")


def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
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
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _run_backward(loss):
    if loss.data.size != 1:
        msg = f"backward needs a scalar loss, got shape {loss.shape}"
        raise ValueError(msg)
    if not loss.requires_grad:
        return

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            g = np.asarray(g, dtype=node.data.dtype)
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, parent_grad in zip(node._parents, node._backward(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = parent_grad if key not in grads else grads[key] + parent_grad


def backward(loss, params):
    """
    Computes the gradient of a scalar loss with respect to parameters.

    Parameters
    ----------
    loss : Tensor
        A scalar produced by recorded operations.
    params : dict of str -> Tensor
        The parameters of interest. Their `.grad` is reset first.

    Returns
    -------
    grads : dict of str -> np.ndarray
        d(loss)/d(param) for every parameter that requires gradients.
        Trainable parameters the loss does not reach get zeros.

    Raises
    ------
    ValueError
        If the loss is not a scalar.

    """
    if loss.data.size != 1:
        msg = f"backward needs a scalar loss, got shape {loss.shape}"
        raise ValueError(msg)
    for param in params.values():
        param.grad = None
    _run_backward(loss)

    grads = {}
    for name, param in params.items():
        if not param.requires_grad:
            continue
        grads[name] = param.grad if param.grad is not None else np.zeros_like(param.data)
    return grads
