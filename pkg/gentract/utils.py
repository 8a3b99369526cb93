"""
Miscellaneous helpers shared by training, inference and the CLI.
"""
import os
import time
from timeit import default_timer

import numpy as np

from .config import get_env_variable


THREADS_VARIABLE = 'GENTRACT_THREADS'


class Timer:
    """Simple util to measure execution time.

    Examples
    --------
    >>> import time
    >>> with Timer() as timer:
    ...     time.sleep(1)
    >>> print(timer)
    00:00:01
    """
    def __init__(self):
        self.start = None
        self.elapsed = None

    def __enter__(self):
        self.start = default_timer()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.elapsed = default_timer() - self.start

    def __str__(self):
        return self.verbose()

    def verbose(self):
        if self.elapsed is None:
            return '<not-measured>'
        return time.strftime('%H:%M:%S', time.gmtime(self.elapsed))


def derive_rng(seed, *path):
    """Independent generator for a position in a seed hierarchy, e.g.
    `derive_rng(master, streamline_index)`.
    """
    return np.random.default_rng([int(seed)] + [int(p) for p in path])


def worker_count(jobs=None):
    """Number of worker threads, capped by GENTRACT_THREADS when set."""
    count = os.cpu_count() or 1
    value = get_env_variable(THREADS_VARIABLE)
    if value:
        try:
            count = max(1, int(value))
        except ValueError:
            raise ValueError('%s should be an integer, got %r' %
                             (THREADS_VARIABLE, value))
    if jobs is not None:
        count = min(count, max(1, jobs))
    return count
