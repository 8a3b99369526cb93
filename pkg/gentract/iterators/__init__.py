"""
Deterministic batch streams over in-memory arrays.
"""
from .arrays import BatchArrayIterator  # NOQA
