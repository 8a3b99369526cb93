"""
TrackVis (TRK version 2) reader and writer.

The 1000-byte header is described by a numpy structured dtype. Points are
stored as little-endian float32 triplets in "voxmm" space, i.e. voxel
coordinates measured from the voxel corner and scaled by the voxel size:

    voxmm = (inverse(affine) @ world + 0.5) * voxel_size
"""
import struct

import numpy as np

from .errors import FormatError
from .streamlines import Tractogram


TRK_MAGIC = b'TRACK\0'
HEADER_SIZE = 1000
_COUNT = struct.Struct('<i')

HEADER_DTYPE = np.dtype([
    ('id_string', 'S6'),
    ('dim', '<i2', 3),
    ('voxel_size', '<f4', 3),
    ('origin', '<f4', 3),
    ('n_scalars', '<i2'),
    ('scalar_name', 'S20', 10),
    ('n_properties', '<i2'),
    ('property_name', 'S20', 10),
    ('vox_to_ras', '<f4', (4, 4)),
    ('reserved', 'S444'),
    ('voxel_order', 'S4'),
    ('pad2', 'S4'),
    ('image_orientation_patient', '<f4', 6),
    ('pad1', 'S2'),
    ('invert_x', 'S1'),
    ('invert_y', 'S1'),
    ('invert_z', 'S1'),
    ('swap_xy', 'S1'),
    ('swap_yz', 'S1'),
    ('swap_zx', 'S1'),
    ('n_count', '<i4'),
    ('version', '<i4'),
    ('hdr_size', '<i4'),
])

assert HEADER_DTYPE.itemsize == HEADER_SIZE


def _field_offset(name):
    return HEADER_DTYPE.fields[name][1]


def make_header(tractogram):
    header = np.zeros((), dtype=HEADER_DTYPE)
    header['id_string'] = TRK_MAGIC
    header['dim'] = tractogram.extents
    header['voxel_size'] = [tractogram.voxel_size] * 3
    header['vox_to_ras'] = tractogram.affine
    header['voxel_order'] = b'RAS'
    header['n_count'] = len(tractogram)
    header['version'] = 2
    header['hdr_size'] = HEADER_SIZE
    return header


def world_to_voxmm(points, affine, voxel_size):
    inverse = np.linalg.inv(affine)
    ijk = points @ inverse[:3, :3].T + inverse[:3, 3]
    return (ijk + 0.5) * voxel_size


def voxmm_to_world(points, affine, voxel_size):
    ijk = points / voxel_size - 0.5
    return ijk @ affine[:3, :3].T + affine[:3, 3]


def write_trk(tractogram, path):
    """Serializes a tractogram; returns the number of bytes written."""
    header = make_header(tractogram)
    chunks = [header.tobytes()]
    for points in tractogram.streamlines:
        voxmm = world_to_voxmm(points, tractogram.affine,
                               np.float64(tractogram.voxel_size))
        chunks.append(_COUNT.pack(len(points)))
        chunks.append(np.ascontiguousarray(voxmm, dtype='<f4').tobytes())
    blob = b''.join(chunks)
    with open(path, 'wb') as fp:
        fp.write(blob)
    return len(blob)


def read_trk(path):
    """Parses a TRK file into a Tractogram of world coordinates.

    Raises:
        FormatError: bad magic or header size, a truncated stream, or a
            streamline count different from the header's n_count.

    """
    with open(path, 'rb') as fp:
        blob = fp.read()
    path = str(path)
    if len(blob) < HEADER_SIZE:
        raise FormatError('TRK header is truncated', path, len(blob))
    if blob[:len(TRK_MAGIC)] != TRK_MAGIC:
        raise FormatError('bad TRK magic %r' % blob[:6], path, 0)
    header = np.frombuffer(blob, dtype=HEADER_DTYPE, count=1)[0]
    if header['hdr_size'] != HEADER_SIZE:
        raise FormatError('unexpected TRK header size %d' %
                          header['hdr_size'], path, _field_offset('hdr_size'))
    if header['n_scalars'] or header['n_properties']:
        raise FormatError('TRK scalars and properties are not supported',
                          path, _field_offset('n_scalars'))

    affine = header['vox_to_ras'].astype(np.float64)
    voxel_size = float(header['voxel_size'][0])
    streamlines = []
    offset = HEADER_SIZE
    while offset < len(blob):
        if offset + _COUNT.size > len(blob):
            raise FormatError('truncated streamline point count', path, offset)
        (count,) = _COUNT.unpack_from(blob, offset)
        if count < 1:
            raise FormatError('invalid point count %d' % count, path, offset)
        start = offset + _COUNT.size
        end = start + 12 * count
        if end > len(blob):
            raise FormatError('streamline %d is truncated' % len(streamlines),
                              path, len(blob))
        voxmm = np.frombuffer(blob, dtype='<f4', count=3 * count,
                              offset=start).reshape(count, 3)
        streamlines.append(
            voxmm_to_world(voxmm.astype(np.float64), affine, voxel_size))
        offset = end

    n_count = int(header['n_count'])
    if n_count and n_count != len(streamlines):
        raise FormatError('header declares %d streamlines, found %d' %
                          (n_count, len(streamlines)), path,
                          _field_offset('n_count'))
    extents = tuple(int(n) for n in header['dim'])
    return Tractogram(streamlines, voxel_size, extents, affine)
