"""
Deterministic samplers turning noise into scaled streamlines.

Both samplers take a callable `model(x, t, context)` returning an array of
the shape of `x`, so they can be driven by the trained transformer or by an
analytic oracle.
"""
import numpy as np


def initial_noise(seed, shape):
    return np.random.default_rng(seed).standard_normal(shape)


def ddim_timesteps(steps, timesteps):
    """Decreasing, uniformly spaced subsequence of [0, T)."""
    if not 1 <= steps <= timesteps:
        raise ValueError('steps should be within [1, %d], got %d' %
                         (timesteps, steps))
    return np.round(np.linspace(timesteps - 1, 0, steps)).astype(np.int64)


def _evaluate(model, x, t, context):
    out = model(x, np.full(len(x), t), context)
    return np.asarray(getattr(out, 'data', out), dtype=np.float64)


def ddim_sample(model, context, noise, steps, schedule):
    """DDIM with eta = 0.

    Each step estimates x_0 = (x_t - sigma_t * eps) / alpha_t and moves to
    the next timestep of the subsequence; the last step lands on alpha = 1.

    Args:
        model: Noise predictor.
        context: Conditioning passed to the model.
        noise: (B, p, 3) starting point.
        steps: Number of model evaluations.
        schedule: NoiseSchedule.

    """
    x = np.array(noise, dtype=np.float64)
    times = ddim_timesteps(steps, schedule.timesteps)
    for i, t in enumerate(times):
        alpha, sigma = schedule.alpha[t], schedule.sigma[t]
        eps = _evaluate(model, x, t, context)
        x0 = (x - sigma * eps) / alpha
        if i + 1 < len(times):
            nxt = times[i + 1]
            x = schedule.alpha[nxt] * x0 + schedule.sigma[nxt] * eps
        else:
            x = x0
    return x


def euler_sample(model, context, noise, steps):
    """Explicit Euler integration of dx/dt = v(x, t) over [0, 1]."""
    if steps < 1:
        raise ValueError('steps should be positive, got %d' % steps)
    x = np.array(noise, dtype=np.float64)
    dt = 1.0 / steps
    for i in range(steps):
        x = x + dt * _evaluate(model, x, i * dt, context)
    return x


def sample(objective, model, context, noise, steps, schedule=None):
    if objective == 'diffusion':
        return ddim_sample(model, context, noise, steps, schedule)
    return euler_sample(model, context, noise, steps)
