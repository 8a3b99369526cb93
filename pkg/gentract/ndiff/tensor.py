"""
Dense float64 tensors and a tape-based reverse mode.

Every differentiable operation is a `Primitive`: a forward function returning
the output array plus whatever it wants to keep for the backward pass, and a
vector-Jacobian product. While a `ComputationRecord` is active, primitives
applied to tensors that require gradients append a node to it. The record
then evaluates gradients of a scalar output with respect to any marked
parameter, and can replay its forward trace.

Example:
>>> w = Tensor([1., 2.], requires_grad=True)
>>> with ComputationRecord() as record:
...     loss = tsum(w * w)
>>> record.backward(loss, {'w': w})['w']
array([2., 4.])
"""
import threading
from collections import OrderedDict
from collections.abc import Mapping

import numpy as np

from ..errors import NonFiniteError, ShapeError


_active = threading.local()


def _record_stack():
    if not hasattr(_active, 'stack'):
        _active.stack = []
    return _active.stack


def current_record():
    """Returns the innermost record active in this thread, if any."""
    stack = _record_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense row-major array of 64-bit floats.

    Attributes:
        data: Underlying NumPy array.
        requires_grad: If True, operations on the tensor are recorded.
        name: Optional label used in diagnostics.

    """
    __slots__ = ('data', 'requires_grad', 'name')

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data)

    def __repr__(self):
        label = '' if self.name is None else ' name=%s' % self.name
        return '<Tensor shape=%s%s>' % (self.shape, label)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = shape[0]
        return reshape(self, tuple(shape))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = axes[0]
        return transpose(self, tuple(axes))

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x):
    """Wraps arrays and scalars into constant tensors."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


class Node:
    """One recorded application of a primitive."""

    __slots__ = ('primitive', 'inputs', 'attrs', 'output', 'cache')

    def __init__(self, primitive, inputs, attrs, output, cache):
        self.primitive = primitive
        self.inputs = inputs
        self.attrs = attrs
        self.output = output
        self.cache = cache


class Primitive:
    """A differentiable operation.

    Args:
        name: Operation name used in error messages.
        forward: Callable `forward(*arrays, **attrs) -> (output, cache)`.
        vjp: Callable `vjp(grad, cache, *arrays, **attrs)` returning one
            gradient (or None) per input.

    """
    def __init__(self, name, forward, vjp):
        self.name = name
        self.forward = forward
        self.vjp = vjp

    def __call__(self, *inputs, **attrs):
        inputs = tuple(as_tensor(x) for x in inputs)
        for x in inputs:
            if not np.all(np.isfinite(x.data)):
                raise NonFiniteError(self.name)
        out, cache = self.forward(*[x.data for x in inputs], **attrs)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(self.name)
        record = current_record()
        tracked = record is not None and any(x.requires_grad for x in inputs)
        result = Tensor(out, requires_grad=tracked)
        if tracked:
            record.append(Node(self, inputs, attrs, result, cache))
        return result


class ComputationRecord:
    """Ordered trace of primitive applications.

    Use as a context manager around the forward computation. A record is
    confined to the thread that created it.
    """
    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _record_stack().append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        stack = _record_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self):
        return len(self.nodes)

    def append(self, node):
        self.nodes.append(node)

    def replay(self):
        """Re-evaluates every recorded node from the current leaf values.

        Returns:
            value: Output array of the last node.

        """
        values = {}
        out = None
        for node in self.nodes:
            arrays = [values.get(id(x), x.data) for x in node.inputs]
            out, _ = node.primitive.forward(*arrays, **node.attrs)
            values[id(node.output)] = out
        return out

    def backward(self, loss, params):
        """Evaluates gradients of a scalar with respect to parameters.

        Args:
            loss: Scalar tensor produced while this record was active.
            params: Mapping from names to tensors, or a sequence of tensors.

        Returns:
            grads: Gradient arrays keyed like `params` (a list when `params`
                is a sequence). Parameters the loss does not depend on get
                zeros.

        Raises:
            ShapeError: The loss is not a scalar.

        """
        if loss.data.ndim != 0:
            raise ShapeError(
                'backward expects a scalar loss, got shape %s' % (loss.shape,))

        grads = {id(loss): np.ones((), dtype=np.float64)}
        for node in reversed(self.nodes):
            grad = grads.pop(id(node.output), None)
            if grad is None:
                continue
            arrays = [x.data for x in node.inputs]
            partials = node.primitive.vjp(
                grad, node.cache, *arrays, **node.attrs)
            for x, partial in zip(node.inputs, partials):
                if partial is None or not x.requires_grad:
                    continue
                key = id(x)
                if key in grads:
                    grads[key] = grads[key] + partial
                else:
                    grads[key] = partial

        def lookup(p):
            g = grads.get(id(p))
            if g is None:
                return np.zeros(p.shape, dtype=np.float64)
            return np.array(np.broadcast_to(g, p.shape), dtype=np.float64)

        if isinstance(params, Mapping):
            return OrderedDict((k, lookup(p)) for k, p in params.items())
        if isinstance(params, Tensor):
            return lookup(params)
        return [lookup(p) for p in params]


def backward(loss, params, record=None):
    """Gradient map of `loss` using the given (or innermost active) record."""
    record = record or current_record()
    if record is None:
        raise ValueError('no computation record to differentiate')
    return record.backward(loss, params)


def unbroadcast(grad, shape):
    """Sums a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# Elementwise arithmetic

def _add_forward(a, b):
    return a + b, None


def _add_vjp(g, cache, a, b):
    return unbroadcast(g, a.shape), unbroadcast(g, b.shape)


def _sub_forward(a, b):
    return a - b, None


def _sub_vjp(g, cache, a, b):
    return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)


def _mul_forward(a, b):
    return a * b, None


def _mul_vjp(g, cache, a, b):
    return unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)


def _div_forward(a, b):
    return a / b, None


def _div_vjp(g, cache, a, b):
    return unbroadcast(g / b, a.shape), unbroadcast(-g * a / (b * b), b.shape)


def _neg_forward(a):
    return -a, None


def _neg_vjp(g, cache, a):
    return (-g,)


def _exp_forward(a):
    out = np.exp(a)
    return out, out


def _exp_vjp(g, cache, a):
    return (g * cache,)


add = Primitive('add', _add_forward, _add_vjp)
sub = Primitive('sub', _sub_forward, _sub_vjp)
mul = Primitive('mul', _mul_forward, _mul_vjp)
div = Primitive('div', _div_forward, _div_vjp)
neg = Primitive('neg', _neg_forward, _neg_vjp)
exp = Primitive('exp', _exp_forward, _exp_vjp)


# Reductions and shape manipulation

def _sum_forward(a, axis=None, keepdims=False):
    return np.sum(a, axis=axis, keepdims=keepdims), None


def _sum_vjp(g, cache, a, axis=None, keepdims=False):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape),)


def _reshape_forward(a, shape=None):
    return a.reshape(shape), None


def _reshape_vjp(g, cache, a, shape=None):
    return (g.reshape(a.shape),)


def _transpose_forward(a, axes=None):
    return np.transpose(a, axes), None


def _transpose_vjp(g, cache, a, axes=None):
    if axes is None:
        return (np.transpose(g),)
    return (np.transpose(g, np.argsort(axes)),)


def _concat_forward(*arrays, axis=0):
    return np.concatenate(arrays, axis=axis), None


def _concat_vjp(g, cache, *arrays, axis=0):
    bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]
    return tuple(np.split(g, bounds, axis=axis))


tsum = Primitive('sum', _sum_forward, _sum_vjp)
_reshape = Primitive('reshape', _reshape_forward, _reshape_vjp)
_transpose = Primitive('transpose', _transpose_forward, _transpose_vjp)
_concat = Primitive('concat', _concat_forward, _concat_vjp)


def reshape(x, shape):
    return _reshape(x, shape=tuple(shape))


def transpose(x, axes=None):
    return _transpose(x, axes=None if axes is None else tuple(axes))


def concat(tensors, axis=0):
    return _concat(*tensors, axis=axis)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# Linear algebra

def _matmul_forward(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError('matmul expects at least 2-d operands')
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError('matmul inner extents differ: %s x %s' %
                         (a.shape, b.shape))
    return np.matmul(a, b), None


def _matmul_vjp(g, cache, a, b):
    ga = np.matmul(g, np.swapaxes(b, -1, -2))
    gb = np.matmul(np.swapaxes(a, -1, -2), g)
    return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


matmul = Primitive('matmul', _matmul_forward, _matmul_vjp)


def _take_forward(table, index=None):
    return table[index], None


def _take_vjp(g, cache, table, index=None):
    grad = np.zeros_like(table)
    np.add.at(grad, index, g)
    return (grad,)


_take = Primitive('take', _take_forward, _take_vjp)


def take(table, index):
    """Selects rows of `table` along its first axis."""
    table = as_tensor(table)
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise ShapeError('index out of range for table with %d rows' %
                         table.shape[0])
    return _take(table, index=index)
