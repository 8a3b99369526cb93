"""
Adaptive moment estimation.

    m(t) = b1 * m(t - 1) + (1 - b1) * g
    v(t) = b2 * v(t - 1) + (1 - b2) * g**2
    theta(t) = theta(t - 1) - lr * m'(t) / (sqrt(v'(t)) + eps)

where m' and v' are the bias-corrected moments.
"""
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first: dict = field(default_factory=OrderedDict)
    second: dict = field(default_factory=OrderedDict)

    def arrays(self):
        """Flattens moments into a name -> array mapping for checkpoints."""
        flat = OrderedDict()
        for name, value in self.first.items():
            flat['adam.m.' + name] = value
        for name, value in self.second.items():
            flat['adam.v.' + name] = value
        return flat

    def metadata(self):
        return {'lr': self.lr, 'beta1': self.beta1, 'beta2': self.beta2,
                'eps': self.eps, 'step': self.step}

    @staticmethod
    def restore(metadata, arrays):
        state = OptimizerState(**metadata)
        for name, value in arrays.items():
            if name.startswith('adam.m.'):
                state.first[name[len('adam.m.'):]] = value.copy()
            elif name.startswith('adam.v.'):
                state.second[name[len('adam.v.'):]] = value.copy()
        return state


def adam_step(params, grads, state, lr=None):
    """Applies one bias-corrected Adam update in place.

    Args:
        params: Mapping from names to tensors.
        grads: Mapping from the same names to gradient arrays.
        state: OptimizerState; its moments are created lazily.
        lr: Optional learning rate overriding `state.lr` for this step.

    Returns:
        params: The updated parameter mapping.

    """
    state.step += 1
    lr = state.lr if lr is None else lr
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step

    for name, tensor in params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != tensor.shape:
            raise ShapeError('gradient for %s has shape %s, expected %s' %
                             (name, grad.shape, tensor.shape))
        m = state.first.get(name)
        v = state.second.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            v = np.zeros_like(tensor.data)
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad * grad
        state.first[name] = m
        state.second[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)

    return params
