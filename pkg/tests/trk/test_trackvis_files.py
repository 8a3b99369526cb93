import numpy as np
import pytest

from gentract.errors import FormatError
from gentract.streamlines import Tractogram
from gentract.trk import HEADER_SIZE, read_trk, write_trk


def make_tractogram(rng, count=5):
    affine = np.diag([2.0, 2.0, 2.0, 1.0])
    affine[:3, 3] = [-12.0, 4.0, 0.5]
    streamlines = [rng.uniform(-10, 30, size=(rng.integers(2, 20), 3))
                   for _ in range(count)]
    return Tractogram(streamlines, 2.0, (20, 16, 12), affine)


def test_trk_round_trip_within_single_precision(tmpdir, rng):
    tractogram = make_tractogram(rng)
    path = str(tmpdir.join('bundle.trk'))

    written = write_trk(tractogram, path)
    loaded = read_trk(path)

    assert written == HEADER_SIZE + sum(4 + 12 * n for n in
                                        tractogram.point_counts())
    assert len(loaded) == len(tractogram)
    assert loaded.extents == (20, 16, 12)
    assert loaded.voxel_size == 2.0
    assert np.array_equal(loaded.affine, tractogram.affine)
    for a, b in zip(loaded, tractogram):
        assert a.shape == b.shape
        assert np.max(np.abs(a - b)) < 1e-5


def test_rewriting_a_loaded_trk_is_byte_identical(tmpdir, rng):
    first, second = str(tmpdir.join('a.trk')), str(tmpdir.join('b.trk'))
    write_trk(make_tractogram(rng, count=12), first)

    write_trk(read_trk(first), second)

    assert tmpdir.join('a.trk').read_binary() == \
        tmpdir.join('b.trk').read_binary()


def test_empty_tractogram_round_trips(tmpdir):
    path = str(tmpdir.join('empty.trk'))

    write_trk(Tractogram([], 2.0, (4, 4, 4)), path)

    assert len(read_trk(path)) == 0


@pytest.mark.parametrize('mangle', [
    lambda blob: b'TRICK\0' + blob[6:],
    lambda blob: blob[:500],
    lambda blob: blob[:-6],
    lambda blob: blob[:HEADER_SIZE + 2],
])
def test_corrupted_trk_raises_format_error(mangle, tmpdir, rng):
    path = tmpdir.join('broken.trk')
    write_trk(make_tractogram(rng), str(path))
    path.write_binary(mangle(path.read_binary()))

    with pytest.raises(FormatError):
        read_trk(str(path))


def test_trk_with_wrong_streamline_count_is_rejected(tmpdir, rng):
    path = tmpdir.join('count.trk')
    tractogram = make_tractogram(rng, count=3)
    write_trk(tractogram, str(path))
    blob = path.read_binary()
    first = 4 + 12 * len(tractogram[0])
    path.write_binary(blob[:HEADER_SIZE] + blob[HEADER_SIZE + first:])

    with pytest.raises(FormatError) as info:
        read_trk(str(path))

    assert 'declares 3' in str(info.value)


def test_written_file_is_readable_by_nibabel(tmpdir, rng):
    nib = pytest.importorskip('nibabel')
    tractogram = make_tractogram(rng)
    path = str(tmpdir.join('oracle.trk'))
    write_trk(tractogram, path)

    loaded = nib.streamlines.load(path)

    assert len(loaded.streamlines) == len(tractogram)
    for a, b in zip(loaded.streamlines, tractogram):
        assert np.allclose(a, b, atol=1e-4)
