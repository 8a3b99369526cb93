"""
Central finite-difference checks for recorded computations.
"""
import numpy as np

from .tensor import ComputationRecord


def relative_error(analytic, numeric, floor=1e-8):
    """Max absolute deviation scaled by the largest gradient magnitude."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(np.abs(analytic).max(initial=0.0),
                np.abs(numeric).max(initial=0.0),
                floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numeric_gradient(fn, tensor, h=1e-5):
    """Central differences of the scalar `fn()` with respect to `tensor`."""
    grad = np.zeros(tensor.shape)
    original = tensor.data
    flat = original.reshape(-1)
    for i in range(flat.size):
        shifted = flat.copy()
        shifted[i] = flat[i] + h
        tensor.data = shifted.reshape(original.shape)
        plus = float(fn().data)
        shifted[i] = flat[i] - h
        tensor.data = shifted.reshape(original.shape)
        minus = float(fn().data)
        grad.reshape(-1)[i] = (plus - minus) / (2 * h)
    tensor.data = original
    return grad


def check_gradients(fn, params, h=1e-5):
    """Compares reverse-mode gradients of `fn` against central differences.

    Args:
        fn: Callable without arguments returning a scalar tensor built from
            `params`.
        params: Mapping from names to tensors marked as requiring gradients.
        h: Finite-difference step.

    Returns:
        errors: Mapping from parameter names to relative errors.

    """
    with ComputationRecord() as record:
        loss = fn()
    analytic = record.backward(loss, params)
    return {name: relative_error(analytic[name],
                                 numeric_gradient(fn, tensor, h))
            for name, tensor in params.items()}
