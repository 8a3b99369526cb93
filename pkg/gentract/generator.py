"""
Conditional transformer over whole streamlines.

A noisy streamline (p, 3) is lifted to width n, offset by a fixed sinusoidal
position table and a learned timestep embedding, and passed through M
pre-norm layers of self-attention (along the streamline), cross-attention
(to the projected conditioning tokens) and a feed-forward block. A zero
initialized head maps back to (p, 3).
"""
import math

import numpy as np

from .errors import ShapeError
from .ndiff import (
    Module, Tensor, add, attention, gelu, glorot, layer_norm, linear,
    reshape, take)


OBJECTIVES = ('diffusion', 'flow_matching')
FLOW_TIME_SCALE = 1000.0


def sinusoidal_table(positions, width):
    """Rows of interleaved sin/cos features at geometric frequencies."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    i = np.arange(width // 2, dtype=np.float64)
    freqs = np.exp(-math.log(10000.0) * 2 * i / width)
    table = np.zeros((len(positions), width))
    table[:, 0::2] = np.sin(positions * freqs)
    table[:, 1::2] = np.cos(positions * freqs)
    return table


def _attention_params(module, prefix, rng, width):
    for name in ('q', 'k', 'v', 'o'):
        module.add_parameter('%s.w%s' % (prefix, name),
                             glorot(rng, width, width, (width, width)))
        module.add_parameter('%s.b%s' % (prefix, name), np.zeros(width))


class StreamlineTransformer(Module):
    """Predicts noise (diffusion) or velocity (flow matching) for a batch
    of noisy streamlines.

    Args:
        layers: Number of transformer layers M.
        width: Embedding width n.
        heads: Attention heads; must divide `width`.
        points: Points per streamline p.
        context_dim: Channels of the conditioning tokens (m * C_c).
        objective: 'diffusion' or 'flow_matching'.
        timesteps: Discrete training steps T of the diffusion schedule.
        seed: Initialization seed.
        zero_head: If True, the output projection starts at zero.

    """
    def __init__(self, layers=4, width=64, heads=4, points=32,
                 context_dim=48, objective='diffusion', timesteps=1000,
                 seed=0, zero_head=True):

        super().__init__()
        if width % heads:
            raise ShapeError('width %d is not divisible by %d heads' %
                             (width, heads))
        if objective not in OBJECTIVES:
            raise ValueError('unknown objective: %r' % objective)
        self.layers = layers
        self.width = width
        self.heads = heads
        self.points = points
        self.context_dim = context_dim
        self.objective = objective
        self.timesteps = timesteps
        self.positions = sinusoidal_table(np.arange(points), width)

        rng = np.random.default_rng(seed)
        n = width
        self.add_parameter('in.w', glorot(rng, 3, n, (3, n)))
        self.add_parameter('in.b', np.zeros(n))
        if objective == 'diffusion':
            self.add_parameter('time.table',
                               0.1 * rng.standard_normal((timesteps, n)))
        self.add_parameter('time.w', glorot(rng, n, n, (n, n)))
        self.add_parameter('time.b', np.zeros(n))
        self.add_parameter('ctx.w', glorot(rng, context_dim, n,
                                           (context_dim, n)))
        self.add_parameter('ctx.b', np.zeros(n))
        for i in range(layers):
            prefix = 'layer%d' % i
            for norm in ('ln1', 'ln2', 'ln3'):
                self.add_parameter('%s.%s.g' % (prefix, norm), np.ones(n))
                self.add_parameter('%s.%s.b' % (prefix, norm), np.zeros(n))
            _attention_params(self, prefix + '.self', rng, n)
            _attention_params(self, prefix + '.cross', rng, n)
            self.add_parameter(prefix + '.ff1.w',
                               glorot(rng, n, 4 * n, (n, 4 * n)))
            self.add_parameter(prefix + '.ff1.b', np.zeros(4 * n))
            self.add_parameter(prefix + '.ff2.w',
                               glorot(rng, 4 * n, n, (4 * n, n)))
            self.add_parameter(prefix + '.ff2.b', np.zeros(n))
        self.add_parameter('final.g', np.ones(n))
        self.add_parameter('final.b', np.zeros(n))
        if zero_head:
            head = np.zeros((n, 3))
        else:
            head = glorot(rng, n, 3, (n, 3))
        self.add_parameter('out.w', head)
        self.add_parameter('out.b', np.zeros(3))

    def hyperparameters(self):
        return {'layers': self.layers, 'width': self.width,
                'heads': self.heads, 'points': self.points,
                'context_dim': self.context_dim, 'objective': self.objective,
                'timesteps': self.timesteps}

    def project_context(self, z):
        """Lifts conditioning tokens (..., tokens, m * C_c) to width n."""
        z = z if isinstance(z, Tensor) else Tensor(z)
        if z.shape[-1] != self.context_dim:
            raise ShapeError('context has %d channels, expected %d' %
                             (z.shape[-1], self.context_dim))
        if z.ndim == 2:
            z = reshape(z, (1,) + z.shape)
        return linear(z, self['ctx.w'], self['ctx.b'])

    def time_embedding(self, t):
        t = np.atleast_1d(np.asarray(t))
        if self.objective == 'diffusion':
            if not np.issubdtype(t.dtype, np.integer):
                if np.any(t != np.round(t)):
                    raise ValueError('diffusion timesteps should be integers')
                t = t.astype(np.int64)
            if t.min() < 0 or t.max() >= self.timesteps:
                raise ValueError('timestep outside [0, %d)' % self.timesteps)
            raw = take(self['time.table'], t)
        else:
            if t.min() < 0 or t.max() > 1:
                raise ValueError('flow time outside [0, 1]')
            raw = Tensor(sinusoidal_table(t * FLOW_TIME_SCALE, self.width))
        return linear(raw, self['time.w'], self['time.b'])

    def forward(self, x, t, context):
        """Prediction for noisy streamlines.

        Args:
            x: (B, p, 3) or (p, 3) noisy coordinates.
            t: One timestep per item (or a scalar).
            context: Projected tokens (B or 1, tokens, n) from
                `project_context`.

        Returns:
            Tensor with the shape of `x`.

        """
        x = x if isinstance(x, Tensor) else Tensor(x)
        single = x.ndim == 2
        if single:
            x = reshape(x, (1,) + x.shape)
        if x.shape[1:] != (self.points, 3):
            raise ShapeError('expected (B, %d, 3) streamlines, got %s' %
                             (self.points, x.shape))
        batch = x.shape[0]
        t = np.asarray(t)
        if t.ndim == 0:
            t = np.full(batch, t)
        if len(t) != batch:
            raise ShapeError('%d timesteps for %d streamlines' %
                             (len(t), batch))
        if context.shape[0] not in (1, batch) or \
                context.shape[-1] != self.width:
            raise ShapeError('context of shape %s does not match batch %d' %
                             (context.shape, batch))

        n = self.width
        h = add(linear(x, self['in.w'], self['in.b']), self.positions)
        h = add(h, reshape(self.time_embedding(t), (batch, 1, n)))
        for i in range(self.layers):
            prefix = 'layer%d' % i
            h = add(h, self._attend(h, None, prefix + '.self',
                                    prefix + '.ln1'))
            h = add(h, self._attend(h, context, prefix + '.cross',
                                    prefix + '.ln2'))
            normed = layer_norm(h, self[prefix + '.ln3.g'],
                                self[prefix + '.ln3.b'])
            inner = gelu(linear(normed, self[prefix + '.ff1.w'],
                                self[prefix + '.ff1.b']))
            h = add(h, linear(inner, self[prefix + '.ff2.w'],
                              self[prefix + '.ff2.b']))
        h = layer_norm(h, self['final.g'], self['final.b'])
        out = linear(h, self['out.w'], self['out.b'])
        if single:
            out = reshape(out, out.shape[1:])
        return out

    def __call__(self, x, t, z):
        """Forward pass from raw conditioning tokens."""
        return self.forward(x, t, self.project_context(z))

    def _attend(self, h, context, prefix, norm):
        normed = layer_norm(h, self[norm + '.g'], self[norm + '.b'])
        params = {key: self['%s.%s' % (prefix, key)]
                  for key in ('wq', 'wk', 'wv', 'wo', 'bq', 'bk', 'bv', 'bo')}
        keys = normed if context is None else context
        return attention(normed, keys, params, self.heads)
