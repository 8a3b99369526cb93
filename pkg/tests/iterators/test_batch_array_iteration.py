from math import ceil

import pytest
import numpy as np

from gentract.iterators import BatchArrayIterator


def test_batch_iterator_has_required_properties():
    """Tests the iterator object has all required public properties."""

    iterator = BatchArrayIterator(np.zeros(32))

    assert not iterator.infinite
    assert not iterator.same_size_batches
    assert not iterator.shuffle
    assert iterator.n_batches == 1
    assert iterator.batch_size == 32


@pytest.mark.parametrize('array_size,batch_size', [
    (10, 1),
    (128, 32),
    (100, 32),
    (1000, 10)
])
def test_finite_batch_iterator_yields_expected_number_of_batches(
        array_size,
        batch_size):
    """Tests that the iterator yields an expected number of batches."""

    arr = np.zeros(array_size)
    expected = ceil(array_size / batch_size)

    iterator = BatchArrayIterator(arr, batch_size=batch_size)
    batches = list(iterator)

    assert len(batches) == expected
    assert iterator.n_batches == expected


@pytest.mark.parametrize('array_size,batch_size,last_size', [
    (10, 3, 1),
    (100, 15, 10),
    (63, 32, 31)
])
def test_finite_batch_iterator_generates_non_even_batch_sizes(
        array_size,
        batch_size,
        last_size):
    """
    Tests that the last batch yielded by the iterator has smaller size then
    others if the length of iterated array is not divided by the batch size
    parameter's value.
    """
    arr = np.zeros(array_size)

    iterator = BatchArrayIterator(arr, batch_size=batch_size)
    *_, last = list(iterator)

    assert len(last) == last_size


def test_infinite_batch_iterator_yields_same_size_batches():
    """
    Tests that the iterator with infinite=True and same_size_batches=True
    generates unlimited number of batches with the same size.
    """
    iterator = BatchArrayIterator(
        np.arange(10),
        batch_size=8,
        infinite=True,
        same_size_batches=True)

    b1 = next(iterator)
    b2 = next(iterator)

    assert iterator.n_batches == 1
    assert len(b1) == len(b2)
    assert np.array_equal(b1, b2)


def test_aligned_arrays_are_batched_together():
    streamlines = np.arange(30).reshape(10, 3)
    owners = np.arange(10)

    iterator = BatchArrayIterator(
        streamlines, owners, batch_size=4, shuffle=True,
        rng=np.random.default_rng(1))

    for batch, index in iterator:
        assert np.array_equal(batch, streamlines[index])


def test_shuffled_epochs_cover_every_row():
    iterator = BatchArrayIterator(
        np.arange(12), batch_size=4, infinite=True, same_size_batches=True,
        shuffle=True, rng=np.random.default_rng(0))

    epochs = [np.concatenate([next(iterator) for _ in range(3)])
              for _ in range(2)]

    assert all(sorted(e.tolist()) == list(range(12)) for e in epochs)
    assert not np.array_equal(epochs[0], epochs[1])


def test_restored_iterator_continues_the_same_stream():
    def make():
        return BatchArrayIterator(
            np.arange(20), batch_size=3, infinite=True,
            same_size_batches=True, shuffle=True,
            rng=np.random.default_rng(5))

    original = make()
    for _ in range(8):
        next(original)
    state = original.state()

    restored = make()
    restored.restore(state)

    for _ in range(10):
        assert np.array_equal(next(original), next(restored))


@pytest.mark.parametrize('kwargs', [
    dict(infinite=False, same_size_batches=True),
    dict(batch_size=0),
    dict(batch_size=20, infinite=True, same_size_batches=True),
])
def test_batch_array_iterator_raises_exception_on_invalid_config(kwargs):
    with pytest.raises(ValueError):
        BatchArrayIterator(np.zeros(10), **kwargs)


def test_arrays_of_different_length_are_rejected():
    with pytest.raises(ValueError):
        BatchArrayIterator(np.zeros(10), np.zeros(9))
