"""
SH coefficient volumes, their binary container and the degradation
operators applied to them (Rician corruption, downsampling).

SHV layout (little-endian):
    8 bytes    magic b'SHVOL1\\0\\0'
    5 x u32    H, W, D, m, L_max
    f64        voxel size (mm)
    16 x f64   grid-to-world affine, row-major
    payload    H*W*D*m f64 coefficients, coefficient axis fastest
"""
import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import FormatError, ShapeError
from .sh import fibonacci_sphere, sh_basis_matrix, sh_count, sh_order


SHV_MAGIC = b'SHVOL1\0\0'
_SHV_HEADER = struct.Struct('<8s5Id16d')


@dataclass
class SHVolume:
    coeffs: np.ndarray
    voxel_size: float
    affine: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        self.affine = np.asarray(self.affine, dtype=np.float64)
        if self.coeffs.ndim != 4:
            raise ShapeError('SH volume should be H x W x D x m, got %s' %
                             (self.coeffs.shape,))
        sh_order(self.coeffs.shape[-1])
        if self.affine.shape != (4, 4):
            raise ShapeError('affine should be 4 x 4')
        if abs(np.linalg.det(self.affine)) < 1e-12:
            raise ValueError('affine is not invertible')

    @property
    def extents(self):
        return self.coeffs.shape[:3]

    @property
    def m(self):
        return self.coeffs.shape[-1]

    @property
    def l_max(self):
        return sh_order(self.m)

    def voxel_to_world(self, ijk):
        ijk = np.asarray(ijk, dtype=np.float64)
        return ijk @ self.affine[:3, :3].T + self.affine[:3, 3]

    def world_to_voxel(self, xyz):
        inverse = np.linalg.inv(self.affine)
        xyz = np.asarray(xyz, dtype=np.float64)
        return xyz @ inverse[:3, :3].T + inverse[:3, 3]

    def world_center(self):
        center = (np.asarray(self.extents, dtype=np.float64) - 1) / 2
        return self.voxel_to_world(center)

    def contains(self, xyz):
        """True for world points inside the voxel-center bounding box."""
        ijk = self.world_to_voxel(xyz)
        upper = np.asarray(self.extents) - 1
        return np.all((ijk >= -1e-9) & (ijk <= upper + 1e-9), axis=-1)

    def copy(self, coeffs=None):
        return SHVolume(self.coeffs.copy() if coeffs is None else coeffs,
                        self.voxel_size, self.affine.copy())


def voxel_affine(voxel_size):
    """Axis-aligned grid-to-world transform with the first voxel at 0."""
    return np.diag([voxel_size, voxel_size, voxel_size, 1.0])


def sample_trilinear(coeffs, ijk):
    """Trilinear coefficients at fractional voxel coordinates.

    Args:
        coeffs: (H, W, D, m) grid.
        ijk: (..., 3) voxel coordinates; outside points take the nearest
            edge value.

    Returns:
        (..., m) interpolated coefficients.

    """
    ijk = np.asarray(ijk, dtype=np.float64)
    points = ijk.reshape(-1, 3).T
    channels = [
        map_coordinates(coeffs[..., c], points, order=1, mode='nearest')
        for c in range(coeffs.shape[-1])]
    return np.stack(channels, axis=-1).reshape(ijk.shape[:-1] + (-1,))


def write_shv(volume, path):
    h, w, d, m = volume.coeffs.shape
    header = _SHV_HEADER.pack(
        SHV_MAGIC, h, w, d, m, volume.l_max, float(volume.voxel_size),
        *volume.affine.reshape(-1))
    payload = np.ascontiguousarray(volume.coeffs, dtype='<f8').tobytes()
    with open(path, 'wb') as fp:
        fp.write(header)
        fp.write(payload)


def read_shv(path):
    with open(path, 'rb') as fp:
        blob = fp.read()
    path = str(path)
    if len(blob) < _SHV_HEADER.size:
        raise FormatError('SHV header is truncated', path, len(blob))
    fields = _SHV_HEADER.unpack_from(blob, 0)
    magic, h, w, d, m, l_max, voxel_size = fields[:7]
    affine = np.array(fields[7:], dtype=np.float64).reshape(4, 4)
    if magic != SHV_MAGIC:
        raise FormatError('bad SHV magic', path, 0)
    if sh_count(l_max) != m:
        raise FormatError('L_max %d does not match %d coefficients' %
                          (l_max, m), path, 24)
    expected = _SHV_HEADER.size + 8 * h * w * d * m
    if len(blob) != expected:
        raise FormatError(
            'SHV payload has %d bytes, expected %d' %
            (len(blob) - _SHV_HEADER.size, expected - _SHV_HEADER.size),
            path, min(len(blob), expected))
    coeffs = np.frombuffer(blob, dtype='<f8', offset=_SHV_HEADER.size)
    return SHVolume(coeffs.reshape(h, w, d, m).astype(np.float64),
                    voxel_size, affine)


def rician_magnitude(amplitudes, sigma, rng):
    """Magnitude of a signal with complex Gaussian noise."""
    real = amplitudes + rng.normal(0.0, sigma, size=np.shape(amplitudes))
    imag = rng.normal(0.0, sigma, size=np.shape(amplitudes))
    return np.sqrt(real * real + imag * imag)


def rician_corrupt(volume, sigma, n_dirs=None, seed=0):
    """Applies magnitude noise to sphere-sampled fODF amplitudes.

    Amplitudes are clamped to be non-negative, corrupted and refit per voxel.
    `sigma == 0` returns an exact copy.
    """
    if sigma < 0:
        raise ValueError('sigma should be non-negative: %r' % sigma)
    m = volume.m
    n_dirs = n_dirs or max(2 * m, 64)
    if n_dirs < 2 * m:
        raise ValueError('need at least %d directions, got %d' %
                         (2 * m, n_dirs))
    if sigma == 0:
        return volume.copy()
    rng = np.random.default_rng(seed)
    basis = sh_basis_matrix(fibonacci_sphere(n_dirs), volume.l_max)
    amplitudes = np.maximum(volume.coeffs @ basis.T, 0.0)
    noisy = rician_magnitude(amplitudes, sigma, rng)
    return volume.copy(noisy @ np.linalg.pinv(basis).T)


def downsample(volume, target_voxel_size):
    """Trilinear resampling onto a coarser grid covering the same field."""
    source = float(volume.voxel_size)
    if target_voxel_size < source - 1e-12:
        raise ValueError('target voxel size %.4g is finer than source %.4g' %
                         (target_voxel_size, source))
    factor = target_voxel_size / source
    extents = tuple(int(np.floor((n - 1) / factor + 1e-9)) + 1
                    for n in volume.extents)
    if min(extents) < 2:
        raise ValueError('downsampled extents %s are degenerate' % (extents,))
    grid = np.stack(np.meshgrid(*[np.arange(n) * factor for n in extents],
                                indexing='ij'), axis=-1)
    coeffs = sample_trilinear(volume.coeffs, grid)
    affine = volume.affine @ np.diag([factor, factor, factor, 1.0])
    return SHVolume(coeffs, target_voxel_size, affine)


def resample_like(volume, reference):
    """Trilinear values of `volume` at the voxel centers of `reference`."""
    grid = np.stack(np.meshgrid(*[np.arange(n) for n in reference.extents],
                                indexing='ij'), axis=-1)
    source = volume.world_to_voxel(reference.voxel_to_world(grid))
    return SHVolume(sample_trilinear(volume.coeffs, source),
                    reference.voxel_size, reference.affine.copy())


def degrade_resolution(volume, target_voxel_size):
    """Downsamples to `target_voxel_size` and interpolates back onto the
    original grid, which is what a model trained at the original
    resolution gets to see.
    """
    return resample_like(downsample(volume, target_voxel_size), volume)
