"""
Binary container for named float64 arrays.

Layout (little-endian):
    16 bytes   magic b'NDIFFCKPT' padded with NUL bytes
    u64        manifest length in bytes
    manifest   UTF-8 JSON, keys sorted:
               {"metadata": {...},
                "tensors": [{"name", "shape", "offset"}, ...]}
    payload    raw '<f8' data; offsets are relative to the payload start
"""
import json
import struct
import hashlib
from collections import OrderedDict

import numpy as np

from ..errors import FormatError


MAGIC = b'NDIFFCKPT' + b'\0' * 7
_LENGTH = struct.Struct('<Q')


def encode_checkpoint(arrays, metadata=None):
    entries, chunks, offset = [], [], 0
    for name, value in arrays.items():
        data = np.ascontiguousarray(value, dtype='<f8')
        entries.append({'name': name,
                        'shape': list(data.shape),
                        'offset': offset})
        raw = data.tobytes()
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps(
        {'metadata': metadata or {}, 'tensors': entries},
        sort_keys=True, separators=(',', ':')).encode('utf-8')
    return b''.join([MAGIC, _LENGTH.pack(len(manifest)), manifest] + chunks)


def decode_checkpoint(blob, path=None):
    if len(blob) < len(MAGIC) + _LENGTH.size:
        raise FormatError('checkpoint header is truncated', path, len(blob))
    if blob[:len(MAGIC)] != MAGIC:
        raise FormatError('bad checkpoint magic', path, 0)
    start = len(MAGIC)
    (length,) = _LENGTH.unpack_from(blob, start)
    start += _LENGTH.size
    if start + length > len(blob):
        raise FormatError('checkpoint manifest is truncated', path, start)
    try:
        manifest = json.loads(blob[start:start + length].decode('utf-8'))
    except (UnicodeDecodeError, ValueError):
        raise FormatError('checkpoint manifest is not valid JSON', path, start)

    payload = start + length
    arrays = OrderedDict()
    for entry in manifest['tensors']:
        shape = tuple(entry['shape'])
        begin = payload + entry['offset']
        count = int(np.prod(shape, dtype=np.int64))
        end = begin + 8 * count
        if end > len(blob):
            raise FormatError(
                'tensor %s is truncated' % entry['name'], path, begin)
        arrays[entry['name']] = np.frombuffer(
            blob, dtype='<f8', count=count, offset=begin
        ).reshape(shape).astype(np.float64)
    return arrays, manifest['metadata']


def save_checkpoint(path, arrays, metadata=None):
    """Writes arrays and JSON-serializable metadata into `path`.

    Returns:
        digest: SHA-256 hex digest of the written bytes.

    """
    blob = encode_checkpoint(arrays, metadata)
    with open(path, 'wb') as fp:
        fp.write(blob)
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path):
    """Reads a container written by `save_checkpoint`.

    Returns:
        arrays: Ordered mapping from tensor names to float64 arrays.
        metadata: The metadata dictionary.

    """
    with open(path, 'rb') as fp:
        blob = fp.read()
    return decode_checkpoint(blob, path=str(path))


def file_digest(path):
    with open(path, 'rb') as fp:
        return hashlib.sha256(fp.read()).hexdigest()
