import numpy as np
import pytest

from gentract.errors import NonFiniteError, ShapeError
from gentract.ndiff import (
    ComputationRecord, Tensor, add, backward, check_gradients, concat, exp,
    matmul, mean, mul, reshape, take, transpose, tsum)


def param(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


def test_matmul_with_identity_returns_operand(rng):
    a = rng.standard_normal((3, 3))

    out = matmul(Tensor(np.eye(3)), Tensor(a))

    assert np.array_equal(out.data, a)


def test_matmul_hand_computed_product():
    out = matmul(Tensor([[1., 2.], [3., 4.]]), Tensor([[0.], [1.]]))

    assert np.array_equal(out.data, [[2.], [4.]])


@pytest.mark.parametrize('a_shape,b_shape', [
    ((2, 3), (2, 3)),
    ((3,), (3, 3)),
])
def test_matmul_rejects_incompatible_shapes(a_shape, b_shape):
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones(a_shape)), Tensor(np.ones(b_shape)))


def test_matmul_gradient_matches_central_differences(rng):
    a = param(rng.standard_normal((2, 4, 3)))
    b = param(rng.standard_normal((3, 5)))

    errors = check_gradients(lambda: tsum(matmul(a, b)), {'a': a, 'b': b})

    assert max(errors.values()) < 1e-6


def test_sum_gradient_is_all_ones():
    p = param([1., 2., 3.])

    with ComputationRecord() as record:
        loss = tsum(p)

    assert np.array_equal(record.backward(loss, [p])[0], np.ones(3))


def test_square_gradient_is_twice_the_input():
    p = param([1., 2.])

    with ComputationRecord() as record:
        loss = tsum(mul(p, p))

    assert np.array_equal(record.backward(loss, {'p': p})['p'], [2., 4.])


def test_repeated_backward_gives_identical_gradients(rng):
    p = param(rng.standard_normal((4, 4)))

    with ComputationRecord() as record:
        loss = mean(exp(matmul(p, p)))
    first = record.backward(loss, [p])[0]
    second = record.backward(loss, [p])[0]

    assert np.array_equal(first, second)


def test_backward_does_not_mutate_forward_values(rng):
    p = param(rng.standard_normal(5))

    with ComputationRecord() as record:
        hidden = mul(p, 3.0)
        loss = tsum(hidden)
    before = hidden.data.copy()
    record.backward(loss, [p])

    assert np.array_equal(hidden.data, before)


def test_replay_reproduces_forward_value_exactly(rng):
    p = param(rng.standard_normal((3, 3)))

    with ComputationRecord() as record:
        loss = mean(exp(matmul(p, transpose(p, (1, 0)))))

    assert record.replay() == loss.data


def test_parameters_off_the_trace_get_zero_gradients():
    used, unused = param([1., 2.]), param(np.ones((2, 2)))

    with ComputationRecord() as record:
        loss = tsum(used)
    grads = backward(loss, {'used': used, 'unused': unused}, record)

    assert np.array_equal(grads['unused'], np.zeros((2, 2)))


def test_non_scalar_loss_is_rejected():
    p = param([1., 2.])

    with ComputationRecord() as record:
        out = mul(p, 2.0)

    with pytest.raises(ShapeError):
        record.backward(out, [p])


def test_non_finite_result_raises_with_operation_name():
    with pytest.raises(NonFiniteError) as info:
        exp(Tensor([1000.0]))

    assert info.value.op_name == 'exp'


def test_non_finite_input_is_rejected():
    with pytest.raises(NonFiniteError):
        add(Tensor([np.nan]), Tensor([1.0]))


def test_structural_ops_gradients(rng):
    a = param(rng.standard_normal((2, 3)))
    b = param(rng.standard_normal((2, 3)))
    table = param(rng.standard_normal((4, 3)))
    weights = Tensor(rng.standard_normal((4, 6)))

    def fn():
        joined = concat([a, b], axis=0)
        picked = take(table, [0, 2, 2, 3])
        mixed = mul(reshape(transpose(joined, (1, 0)), (3, 4)),
                    transpose(picked, (1, 0)))
        return tsum(matmul(mixed, weights))

    errors = check_gradients(fn, {'a': a, 'b': b, 'table': table})

    assert max(errors.values()) < 1e-6


def test_take_rejects_out_of_range_index():
    with pytest.raises(ShapeError):
        take(Tensor(np.zeros((3, 2))), [3])


def test_broadcast_add_reduces_gradient_to_operand_shape(rng):
    x = param(rng.standard_normal((4, 3)))
    bias = param(rng.standard_normal(3))

    with ComputationRecord() as record:
        loss = tsum(mul(add(x, bias), add(x, bias)))
    grads = record.backward(loss, {'bias': bias})

    assert grads['bias'].shape == (3,)
    assert np.allclose(grads['bias'], 2 * (x.data + bias.data).sum(axis=0))
