"""
Layer operations used by the conditioning encoder and the streamline
transformer, and a small parameter container.

Activations and convolutions take batched channel-first volumes
(B, C, H, W, D); dense layers act on the trailing axis.
"""
import math
from collections import OrderedDict

import numpy as np
from scipy.special import erf

from .tensor import (
    Primitive, Tensor, add, exp, matmul, mean, mul, reshape,
    sub, take, transpose)
from ..errors import ShapeError


def _gelu_forward(x):
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    return x * cdf, cdf


def _gelu_vjp(g, cdf, x):
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return (g * (cdf + x * pdf),)


gelu = Primitive('gelu', _gelu_forward, _gelu_vjp)


def _softmax_forward(x, axis=-1):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)
    return out, out


def _softmax_vjp(g, s, x, axis=-1):
    return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)


_softmax = Primitive('softmax', _softmax_forward, _softmax_vjp)


def softmax(x, axis=-1):
    return _softmax(x, axis=axis)


LAYER_NORM_EPS = 1e-6


def _layer_norm_forward(x, gain, bias):
    if x.shape[-1] < 2:
        raise ShapeError('layer_norm needs at least 2 features, got %d' %
                         x.shape[-1])
    centered = x - x.mean(axis=-1, keepdims=True)
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    # clamped rather than var + eps, so unit-variance rows pass unchanged
    clamped = var < LAYER_NORM_EPS
    inv_std = 1.0 / np.sqrt(np.maximum(var, LAYER_NORM_EPS))
    xhat = centered * inv_std
    return xhat * gain + bias, (xhat, inv_std, clamped)


def _layer_norm_vjp(g, cache, x, gain, bias):
    xhat, inv_std, clamped = cache
    gxhat = g * gain
    first = gxhat.mean(axis=-1, keepdims=True)
    # variance is constant where the clamp is active
    second = np.where(
        clamped, 0.0, (gxhat * xhat).mean(axis=-1, keepdims=True))
    gx = inv_std * (gxhat - first - xhat * second)
    gain_grad = g * xhat
    lead = tuple(range(g.ndim - 1))
    return gx, gain_grad.sum(axis=lead), g.sum(axis=lead)


layer_norm = Primitive('layer_norm', _layer_norm_forward, _layer_norm_vjp)


def _window(offset, stride, count):
    return slice(offset, offset + stride * (count - 1) + 1, stride)


def _conv_extents(spatial, kernel, stride):
    pad = kernel // 2
    return tuple((n + 2 * pad - kernel) // stride + 1 for n in spatial)


def _conv3d_forward(x, w, stride=1):
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeError('conv3d expects (B, C, H, W, D) input and '
                         '(C_out, C_in, k, k, k) kernels')
    if x.shape[1] != w.shape[1]:
        raise ShapeError('conv3d input has %d channels, kernels expect %d' %
                         (x.shape[1], w.shape[1]))
    k = w.shape[2]
    pad = k // 2
    out_extents = _conv_extents(x.shape[2:], k, stride)
    if min(out_extents) < 1:
        raise ShapeError('conv3d output would be empty for input %s' %
                         (x.shape,))
    padded = np.pad(x, [(0, 0), (0, 0)] + [(pad, pad)] * 3)
    out = np.zeros((x.shape[0], w.shape[0]) + out_extents)
    ho, wo, do = out_extents
    for i in range(k):
        for j in range(k):
            for l in range(k):
                patch = padded[:, :,
                               _window(i, stride, ho),
                               _window(j, stride, wo),
                               _window(l, stride, do)]
                out += np.einsum('bchwd,oc->bohwd', patch, w[:, :, i, j, l])
    return out, padded


def _conv3d_vjp(g, padded, x, w, stride=1):
    k = w.shape[2]
    pad = k // 2
    ho, wo, do = g.shape[2:]
    grad_padded = np.zeros_like(padded)
    grad_w = np.zeros_like(w)
    for i in range(k):
        for j in range(k):
            for l in range(k):
                window = (slice(None), slice(None),
                          _window(i, stride, ho),
                          _window(j, stride, wo),
                          _window(l, stride, do))
                grad_w[:, :, i, j, l] = np.einsum(
                    'bohwd,bchwd->oc', g, padded[window])
                grad_padded[window] += np.einsum(
                    'bohwd,oc->bchwd', g, w[:, :, i, j, l])
    h, wd, d = x.shape[2:]
    grad_x = grad_padded[:, :, pad:pad + h, pad:pad + wd, pad:pad + d]
    return grad_x, grad_w


_conv3d = Primitive('conv3d', _conv3d_forward, _conv3d_vjp)


def conv3d(x, kernels, bias=None, stride=1):
    """Zero-padded 3D convolution with cubic odd kernels.

    Args:
        x: Input of shape (B, C_in, H, W, D).
        kernels: Weights of shape (C_out, C_in, k, k, k).
        bias: Optional per-output-channel offsets.
        stride: Sampling step along every spatial axis.

    Returns:
        Tensor of shape (B, C_out, H', W', D') with
        H' = (H + 2(k//2) - k)//stride + 1.

    """
    if stride < 1:
        raise ValueError('stride should be positive: %r' % stride)
    out = _conv3d(x, kernels, stride=stride)
    if bias is not None:
        out = add(out, reshape(bias, (1, -1, 1, 1, 1)))
    return out


def _upsample_forward(x, factor=2):
    out = x
    for axis in (2, 3, 4):
        out = np.repeat(out, factor, axis=axis)
    return out, None


def _upsample_vjp(g, cache, x, factor=2):
    b, c, h, w, d = x.shape
    blocks = g.reshape(b, c, h, factor, w, factor, d, factor)
    return (blocks.sum(axis=(3, 5, 7)),)


_upsample = Primitive('upsample_nearest', _upsample_forward, _upsample_vjp)


def upsample_nearest(x, factor=2):
    return _upsample(x, factor=factor)


def linear(x, weight, bias=None):
    """Affine map over the trailing axis: x @ W + b."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def embedding_lookup(table, index):
    return take(table, index)


def split_heads(x, heads):
    b, p, n = x.shape
    return transpose(reshape(x, (b, p, heads, n // heads)), (0, 2, 1, 3))


def merge_heads(x):
    b, h, p, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, p, h * dh))


def attention(queries, context, params, heads):
    """Multi-head scaled dot-product attention.

    Args:
        queries: Tensor (B, P, n) providing queries.
        context: Tensor (B or 1, T, n) providing keys and values.
        params: Mapping with `wq`, `wk`, `wv`, `wo` (n, n) and matching
            `bq`, `bk`, `bv`, `bo` biases.
        heads: Number of heads; must divide n.

    """
    n = queries.shape[-1]
    if n % heads:
        raise ShapeError('width %d is not divisible by %d heads' % (n, heads))
    q = split_heads(linear(queries, params['wq'], params['bq']), heads)
    k = split_heads(linear(context, params['wk'], params['bk']), heads)
    v = split_heads(linear(context, params['wv'], params['bv']), heads)
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))),
                 1.0 / math.sqrt(n // heads))
    mixed = matmul(softmax(scores, axis=-1), v)
    return linear(merge_heads(mixed), params['wo'], params['bo'])


def mse(prediction, target):
    diff = sub(prediction, target)
    return mean(mul(diff, diff))


def kl_divergence(mu, logvar):
    """Closed-form KL(N(mu, exp logvar) || N(0, 1)) averaged per element."""
    terms = sub(add(mul(mu, mu), exp(logvar)), add(logvar, 1.0))
    return mul(mean(terms), 0.5)


class Module:
    """Named parameter container.

    Parameters are tensors marked as requiring gradients, kept in
    registration order under dotted names.
    """
    def __init__(self):
        self._params = OrderedDict()

    def add_parameter(self, name, value):
        tensor = Tensor(value, requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name):
        return self._params[name]

    def parameters(self, prefix=''):
        named = OrderedDict()
        for name, tensor in self._params.items():
            named[prefix + name] = tensor
        return named

    def arrays(self):
        return OrderedDict(
            (name, t.data.copy()) for name, t in self.parameters().items())

    def load_arrays(self, arrays):
        """Replaces parameter values with arrays keyed by dotted name."""
        params = self.parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise ShapeError('missing parameters: %s' %
                             ', '.join(sorted(missing)))
        for name, tensor in params.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise ShapeError('parameter %s has shape %s, got %s' %
                                 (name, tensor.shape, value.shape))
            tensor.data = value.copy()

    def freeze(self):
        for tensor in self.parameters().values():
            tensor.requires_grad = False


def glorot(rng, fan_in, fan_out, shape):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def total_size(params):
    return int(sum(t.size for t in params.values()))
