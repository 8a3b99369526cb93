import math

import numpy as np


class BatchArrayIterator:
    """Iterates one or several aligned arrays in batches.

    Attributes:
        batch_size: Size of batch.
        infinite: If True, the iterator restarts from the first batch
            instead of raising StopIteration once the arrays are traversed.
        same_size_batches: If True (requires `infinite`), a trailing batch
            smaller than `batch_size` is discarded.
        shuffle: If True, rows are permuted at the start of every epoch with
            `rng`, so the batch stream is reproducible from its seed.
        rng: numpy Generator used for shuffling.

    """
    def __init__(self,
                 array, *arrays,
                 batch_size: int=32,
                 infinite: bool=False,
                 same_size_batches: bool=False,
                 shuffle: bool=False,
                 rng=None):

        if not infinite and same_size_batches:
            raise ValueError('Incompatible configuration: cannot guarantee '
                             'same size of batches when yielding a finite '
                             'number of rows.')
        if batch_size < 1:
            raise ValueError('batch size should be positive')

        arrays = _convert_to_arrays(array, *arrays)

        self.arrays = arrays
        self.batch_size = batch_size
        self.infinite = infinite
        self.same_size_batches = same_size_batches
        self.shuffle = shuffle
        self.rng = rng if rng is not None else np.random.default_rng(0)

        self._n = _num_of_batches(arrays, batch_size, same_size_batches)
        if self._n == 0:
            raise ValueError('arrays are shorter than one batch')
        self._batch_index = 0
        self._epoch_index = 0
        self._order = self._new_order()

    def __iter__(self):
        self._batch_index = 0
        return self

    def __next__(self):
        return self.next()

    @property
    def n_batches(self):
        """Number of batches in one pass over the arrays."""
        return self._n

    def next(self):
        if self._batch_index >= self._n:
            if not self.infinite:
                raise StopIteration()
            self._batch_index = 0
            self._epoch_index += 1
            self._order = self._new_order()

        batches = tuple([self._take_next_batch(arr) for arr in self.arrays])
        self._batch_index += 1
        return batches[0] if len(batches) == 1 else batches

    def state(self):
        """Position and generator state needed to resume the stream."""
        return {'batch_index': self._batch_index,
                'epoch_index': self._epoch_index,
                'order': self._order.tolist(),
                'rng': self.rng.bit_generator.state}

    def restore(self, state):
        self._batch_index = state['batch_index']
        self._epoch_index = state['epoch_index']
        self._order = np.asarray(state['order'], dtype=np.intp)
        self.rng.bit_generator.state = state['rng']

    def _new_order(self):
        n = len(self.arrays[0])
        if self.shuffle:
            return self.rng.permutation(n)
        return np.arange(n)

    def _take_next_batch(self, array):
        start = self._batch_index * self.batch_size
        end = (self._batch_index + 1) * self.batch_size
        return array[self._order[start:end]]


def _convert_to_arrays(seq, *seqs):
    sequences = [seq] + list(seqs)
    arrays = [np.asarray(seq) for seq in sequences]
    n = len(arrays[0])
    for arr in arrays[1:]:
        if len(arr) != n:
            raise ValueError('arrays should have the same length')
    return arrays


def _num_of_batches(arrays, batch_size, same_size):
    n = len(arrays[0])
    if same_size:
        return n // batch_size
    return int(math.ceil(n / batch_size))
