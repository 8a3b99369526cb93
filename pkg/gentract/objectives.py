"""
Noise schedules and the two training objectives.

Diffusion corrupts data as x_t = alpha_t * x_0 + sigma_t * eps and regresses
eps. Flow matching interpolates x_t = (1 - t) * x_0 + t * x_1 from noise x_0
to data x_1 and regresses the velocity x_1 - x_0.
"""
import math
from dataclasses import dataclass

import numpy as np

from .ndiff import Tensor, mse


COSINE_OFFSET = 0.008
MIN_ALPHA_BAR = 1e-6


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-preserving discrete schedule over t = 0 .. T-1."""

    alpha: np.ndarray
    sigma: np.ndarray
    kind: str = 'cosine'

    @property
    def timesteps(self):
        return len(self.alpha)

    @staticmethod
    def cosine(timesteps=1000, offset=COSINE_OFFSET):
        def f(u):
            return np.cos((u + offset) / (1 + offset) * math.pi / 2) ** 2
        u = (np.arange(timesteps, dtype=np.float64) + 1) / timesteps
        alpha_bar = np.maximum(f(u) / f(0.0), MIN_ALPHA_BAR)
        return NoiseSchedule._from_alpha_bar(alpha_bar, 'cosine')

    @staticmethod
    def linear(timesteps=1000, beta_start=1e-4, beta_end=0.02):
        betas = np.linspace(beta_start, beta_end, timesteps)
        alpha_bar = np.cumprod(1.0 - betas)
        return NoiseSchedule._from_alpha_bar(alpha_bar, 'linear')

    @staticmethod
    def create(kind='cosine', timesteps=1000):
        if kind == 'cosine':
            return NoiseSchedule.cosine(timesteps)
        if kind == 'linear':
            return NoiseSchedule.linear(timesteps)
        raise ValueError('unknown noise schedule: %r' % kind)

    @staticmethod
    def _from_alpha_bar(alpha_bar, kind):
        return NoiseSchedule(np.sqrt(alpha_bar), np.sqrt(1.0 - alpha_bar),
                             kind)


def _per_item(values, t):
    return np.asarray(values)[np.asarray(t)][:, None, None]


def diffuse(x0, eps, t, schedule):
    """Forward corruption of a (B, p, 3) batch at integer timesteps t."""
    alpha = _per_item(schedule.alpha, t)
    return alpha * x0 + _per_item(schedule.sigma, t) * eps


def interpolate(x0, x1, t):
    """Linear interpolant between noise x0 and data x1 at times t in
    [0, 1].
    """
    t = np.asarray(t, dtype=np.float64)[:, None, None]
    return (1.0 - t) * x0 + t * x1


def diffusion_loss(model, x0, eps, t, context, schedule):
    """Mean squared error between predicted and true noise.

    Args:
        model: Callable `model(x_t, t, context)` returning the noise
            prediction.
        x0: (B, p, 3) clean scaled streamlines.
        eps: (B, p, 3) standard normal noise.
        t: (B,) integer timesteps.
        context: Conditioning passed through to the model.
        schedule: NoiseSchedule.

    """
    x_t = diffuse(x0, eps, t, schedule)
    return mse(model(x_t, t, context), Tensor(eps))


def fm_loss(model, x1, x0, t, context):
    """Mean squared error between predicted and straight-line velocity."""
    x_t = interpolate(x0, x1, t)
    return mse(model(x_t, t, context), Tensor(np.asarray(x1) - x0))


def sample_times(objective, rng, count, timesteps):
    if objective == 'diffusion':
        return rng.integers(0, timesteps, size=count)
    return rng.uniform(0.0, 1.0, size=count)


def objective_loss(objective, model, x_data, noise, t, context, schedule):
    if objective == 'diffusion':
        return diffusion_loss(model, x_data, noise, t, context, schedule)
    return fm_loss(model, x_data, noise, t, context)
