"""
Two-stage anatomical conditioning encoder.

Stage 1 trains one small convolutional VAE per SH coefficient channel.
Stage 2 passes each frozen latent mean through a single shared refiner that
is told which coefficient it is looking at, and the refined latents are
flattened into a token matrix:

    (H, W, D) -> (C_z, H/4, W/4, D/4) -> (C_c, H/8, W/8, D/8)
              -> (H/8 * W/8 * D/8, m * C_c)

Tokens enumerate voxels with the D axis fastest; channel i * C_c + c of a
token holds channel c of the refined latent of coefficient i.
"""
import logging
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import DivergenceError, NonFiniteError, ShapeError
from .iterators import BatchArrayIterator
from .ndiff import (
    ComputationRecord, Module, OptimizerState, Tensor, adam_step, add,
    concat, conv3d, embedding_lookup, exp, gelu, glorot, kl_divergence, mse,
    mul, reshape, transpose, upsample_nearest)
from .utils import derive_rng, worker_count


log = logging.getLogger('gentract.encoder')

RefinedLatent = namedtuple('RefinedLatent', 'index tensor')


def _conv_weights(rng, c_out, c_in, k):
    fan_in, fan_out = c_in * k ** 3, c_out * k ** 3
    return glorot(rng, fan_in, fan_out, (c_out, c_in, k, k, k))


class ChannelVae(Module):
    """Convolutional VAE for a single coefficient channel."""

    def __init__(self, c_z=4, hidden=8, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.c_z = c_z
        self.hidden = hidden
        self.add_parameter('enc1.w', _conv_weights(rng, hidden, 1, 3))
        self.add_parameter('enc1.b', np.zeros(hidden))
        self.add_parameter('enc2.w', _conv_weights(rng, hidden, hidden, 3))
        self.add_parameter('enc2.b', np.zeros(hidden))
        self.add_parameter('mu.w', _conv_weights(rng, c_z, hidden, 1))
        self.add_parameter('mu.b', np.zeros(c_z))
        self.add_parameter('logvar.w', np.zeros((c_z, hidden, 1, 1, 1)))
        self.add_parameter('logvar.b', np.zeros(c_z))
        self.add_parameter('dec1.w', _conv_weights(rng, hidden, c_z, 3))
        self.add_parameter('dec1.b', np.zeros(hidden))
        self.add_parameter('dec2.w', _conv_weights(rng, hidden, hidden, 3))
        self.add_parameter('dec2.b', np.zeros(hidden))
        self.add_parameter('out.w', _conv_weights(rng, 1, hidden, 3))
        self.add_parameter('out.b', np.zeros(1))

    def latent_extents(self, extents):
        return (self.c_z,) + tuple(n // 4 for n in extents)

    def encode(self, x):
        """Maps (B, 1, H, W, D) channels to latent (mu, logvar)."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 5 or x.shape[1] != 1:
            raise ShapeError('VAE expects (B, 1, H, W, D), got %s' %
                             (x.shape,))
        if any(n % 4 for n in x.shape[2:]):
            raise ShapeError('VAE extents should be divisible by 4: %s' %
                             (x.shape[2:],))
        h = gelu(conv3d(x, self['enc1.w'], self['enc1.b'], stride=2))
        h = gelu(conv3d(h, self['enc2.w'], self['enc2.b'], stride=2))
        mu = conv3d(h, self['mu.w'], self['mu.b'])
        logvar = conv3d(h, self['logvar.w'], self['logvar.b'])
        return mu, logvar

    def decode(self, z):
        h = gelu(conv3d(upsample_nearest(z), self['dec1.w'], self['dec1.b']))
        h = gelu(conv3d(upsample_nearest(h), self['dec2.w'], self['dec2.b']))
        return conv3d(h, self['out.w'], self['out.b'])


def reparameterize(mu, logvar, noise):
    """mu + exp(logvar / 2) * noise, differentiable in mu and logvar."""
    return add(mu, mul(exp(mul(logvar, 0.5)), noise))


def vae_encode(vae, channel):
    """Encodes one (H, W, D) channel; returns latent (mu, logvar) arrays."""
    channel = np.asarray(channel, dtype=np.float64)
    mu, logvar = vae.encode(channel[None, None])
    return mu.data[0], logvar.data[0]


def vae_sample(mu, logvar, seed):
    noise = np.random.default_rng(seed).standard_normal(np.shape(mu))
    return np.asarray(mu) + np.exp(np.asarray(logvar) / 2) * noise


def vae_decode(vae, z):
    return vae.decode(Tensor(np.asarray(z)[None])).data[0, 0]


def vae_loss(x, reconstruction, mu, logvar, beta):
    """Reconstruction MSE plus `beta` times the mean closed-form KL."""
    return add(mse(reconstruction, x), mul(kl_divergence(mu, logvar), beta))


def train_vae(channels, index, config, seed, log=log):
    """Trains the VAE of coefficient `index`.

    Args:
        channels: (N, H, W, D) normalized channel volumes.
        index: Coefficient index, used to derive the random streams.
        config: EncoderConfig.
        seed: Master seed.

    Returns:
        vae: Trained ChannelVae.
        losses: Loss per step.

    """
    rng = derive_rng(seed, index)
    vae = ChannelVae(config.c_z, config.hidden, seed=[seed, index, 0])
    params = vae.parameters()
    state = OptimizerState(lr=config.lr)
    data = np.asarray(channels, dtype=np.float64)[:, None]
    batches = BatchArrayIterator(
        data, batch_size=min(config.batch, len(data)), infinite=True,
        shuffle=True, rng=rng)
    losses = []
    for step in range(1, config.steps + 1):
        x = batches.next()
        try:
            with ComputationRecord() as record:
                mu, logvar = vae.encode(x)
                noise = rng.standard_normal(mu.shape)
                z = reparameterize(mu, logvar, noise)
                recon = vae.decode(z)
                loss = vae_loss(x, recon, mu, logvar, config.beta)
        except NonFiniteError:
            raise DivergenceError(step)
        grads = record.backward(loss, params)
        adam_step(params, grads, state)
        losses.append(loss.item())
        if step % max(1, config.steps // 10) == 0:
            log.debug('vae[%d] step %d loss %.6g', index, step, losses[-1])
    vae.freeze()
    return vae, losses


def train_vaes(volumes, config, seed, log=log):
    """Trains the m independent channel VAEs in parallel worker threads.

    Args:
        volumes: Normalized SHVolumes sharing extents and m.

    Returns:
        vaes: List of m trained VAEs ordered by coefficient index.
        curves: List of m loss curves.

    """
    stack = np.stack([v.coeffs for v in volumes])
    m = stack.shape[-1]

    def job(i):
        return train_vae(stack[..., i], i, config, seed, log)

    with ThreadPoolExecutor(max_workers=worker_count(m)) as pool:
        results = list(pool.map(job, range(m)))
    for i, (_, curve) in enumerate(results):
        log.info('vae[%d]: loss %.6g -> %.6g', i, curve[0], curve[-1])
    return [r[0] for r in results], [r[1] for r in results]


class Refiner(Module):
    """Shared class-conditioned residual encoder over VAE latents."""

    def __init__(self, m, c_z=4, c_c=8, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.m = m
        self.c_z = c_z
        self.c_c = c_c
        self.add_parameter('proj.w', _conv_weights(rng, c_c, c_z, 3))
        self.add_parameter('proj.b', np.zeros(c_c))
        self.add_parameter(
            'index_embedding', 0.5 * rng.standard_normal((m, c_c)))
        for block in ('block1', 'block2'):
            for conv in ('conv1', 'conv2'):
                name = '%s.%s' % (block, conv)
                self.add_parameter(
                    name + '.w', _conv_weights(rng, c_c, c_c, 3))
                self.add_parameter(name + '.b', np.zeros(c_c))
        self.add_parameter('down.w', _conv_weights(rng, c_c, c_c, 3))
        self.add_parameter('down.b', np.zeros(c_c))

    def __call__(self, latents, indices):
        """Refines latents (B, C_z, H_z, W_z, D_z) with coefficient indices
        of length B.
        """
        latents = latents if isinstance(latents, Tensor) else Tensor(latents)
        indices = np.atleast_1d(np.asarray(indices, dtype=np.intp))
        if latents.ndim != 5 or latents.shape[1] != self.c_z:
            raise ShapeError('refiner expects (B, %d, H, W, D), got %s' %
                             (self.c_z, latents.shape))
        if len(indices) != latents.shape[0]:
            raise ShapeError('one coefficient index per latent is required')
        if indices.min() < 0 or indices.max() >= self.m:
            raise ValueError('coefficient index out of range [0, %d)' % self.m)
        h = conv3d(latents, self['proj.w'], self['proj.b'])
        embedding = embedding_lookup(self['index_embedding'], indices)
        h = gelu(add(h, reshape(embedding, (len(indices), self.c_c, 1, 1, 1))))
        for block in ('block1', 'block2'):
            inner = gelu(conv3d(h, self[block + '.conv1.w'],
                                self[block + '.conv1.b']))
            h = add(h, conv3d(inner, self[block + '.conv2.w'],
                              self[block + '.conv2.b']))
        return conv3d(h, self['down.w'], self['down.b'], stride=2)


def refine(refiner, latent, index):
    """Refines a single latent (C_z, H_z, W_z, D_z) tagged with its index."""
    latent = latent if isinstance(latent, Tensor) else Tensor(latent)
    out = refiner(reshape(latent, (1,) + latent.shape), [index])
    return RefinedLatent(index, reshape(out, out.shape[1:]))


def fuse(refined):
    """Concatenates index-tagged refined latents into tokens.

    Args:
        refined: RefinedLatent items for indices 0..m-1 in ascending order,
            each holding a (C_c, H_c, W_c, D_c) tensor.

    Returns:
        Tensor of shape (H_c * W_c * D_c, m * C_c).

    """
    if not refined:
        raise ShapeError('nothing to fuse')
    indices = [r.index for r in refined]
    if indices != list(range(len(refined))):
        raise ValueError('refined latents are out of order: %s' % indices)
    shape = refined[0].tensor.shape
    for r in refined:
        if r.tensor.shape != shape:
            raise ShapeError('refined latent %d has shape %s, expected %s' %
                             (r.index, r.tensor.shape, shape))
    channels = concat([r.tensor for r in refined], axis=0)
    tokens = int(np.prod(shape[1:]))
    return transpose(reshape(channels, (channels.shape[0], tokens)), (1, 0))


def fuse_batch(refined, m):
    """Token matrices for S volumes from a (S * m, C_c, ...) refiner output
    whose rows are ordered volume-major, coefficient-minor.
    """
    total, c_c = refined.shape[:2]
    tokens = int(np.prod(refined.shape[2:]))
    volumes = total // m
    grouped = reshape(refined, (volumes, m * c_c, tokens))
    return transpose(grouped, (0, 2, 1))


class ConditioningEncoder:
    """Frozen channel VAEs followed by the trainable shared refiner."""

    def __init__(self, vaes, refiner):
        if len(vaes) != refiner.m:
            raise ShapeError('%d VAEs for a refiner over %d coefficients' %
                             (len(vaes), refiner.m))
        self.vaes = vaes
        self.refiner = refiner
        for vae in vaes:
            vae.freeze()

    @property
    def m(self):
        return self.refiner.m

    def latents(self, volume):
        """Stage-1 latent means (m, C_z, H_z, W_z, D_z) of a normalized
        volume.
        """
        if volume.m != self.m:
            raise ShapeError('volume has %d coefficients, encoder expects %d' %
                             (volume.m, self.m))
        return np.stack([vae_encode(vae, volume.coeffs[..., i])[0]
                         for i, vae in enumerate(self.vaes)])

    def condition(self, latent_stack):
        """Differentiable tokens for S volumes from (S, m, C_z, ...) latents.

        Returns:
            Tensor (S, tokens, m * C_c).

        """
        latent_stack = np.asarray(latent_stack)
        volumes = latent_stack.shape[0]
        flat = latent_stack.reshape(
            (volumes * self.m,) + latent_stack.shape[2:])
        indices = np.tile(np.arange(self.m), volumes)
        return fuse_batch(self.refiner(flat, indices), self.m)

    def encode(self, volume):
        """Token matrix (tokens, m * C_c) of one normalized volume."""
        z = self.condition(self.latents(volume)[None])
        return reshape(z, z.shape[1:])
