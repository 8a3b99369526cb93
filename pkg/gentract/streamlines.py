"""
Streamline and tractogram data model.

A streamline is an (N, 3) float64 array of world coordinates in
millimeters with N >= 2.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


def as_streamline(points):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ShapeError('streamline should be N x 3, got %s' %
                         (points.shape,))
    if len(points) < 2:
        raise ShapeError('streamline needs at least 2 points')
    if not np.all(np.isfinite(points)):
        raise ValueError('streamline has non-finite coordinates')
    return points


def segment_lengths(points):
    return np.linalg.norm(np.diff(points, axis=0), axis=1)


def streamline_length(points):
    return float(segment_lengths(points).sum())


def resample_streamline(points, p):
    """Places `p` points at equal arc-length spacing along the polyline.

    Endpoints are kept exactly; every new point lies on the input curve.
    """
    if p < 2:
        raise ValueError('need at least 2 points, got %d' % p)
    points = as_streamline(points)
    arc = np.concatenate([[0.0], np.cumsum(segment_lengths(points))])
    total = arc[-1]
    if total <= 0:
        raise ValueError('cannot resample a zero-length streamline')
    targets = np.linspace(0.0, total, p)
    out = np.stack([np.interp(targets, arc, points[:, axis])
                    for axis in range(3)], axis=1)
    out[0] = points[0]
    out[-1] = points[-1]
    return out


def canonicalize(points):
    """Orients a streamline so its first endpoint is lexicographically
    smallest.
    """
    points = np.asarray(points, dtype=np.float64)
    if tuple(points[-1]) < tuple(points[0]):
        return points[::-1].copy()
    return points


@dataclass
class Tractogram:
    """Streamlines together with the reference grid used by TRK headers."""

    streamlines: list = field(default_factory=list)
    voxel_size: float = 2.0
    extents: tuple = (32, 32, 32)
    affine: np.ndarray = None

    def __post_init__(self):
        self.streamlines = [np.asarray(s, dtype=np.float64)
                            for s in self.streamlines]
        self.extents = tuple(int(n) for n in self.extents)
        if self.affine is None:
            self.affine = np.diag([self.voxel_size] * 3 + [1.0])
        self.affine = np.asarray(self.affine, dtype=np.float64)

    def __len__(self):
        return len(self.streamlines)

    def __iter__(self):
        return iter(self.streamlines)

    def __getitem__(self, index):
        return self.streamlines[index]

    def with_streamlines(self, streamlines):
        return Tractogram(list(streamlines), self.voxel_size,
                          self.extents, self.affine.copy())

    def point_counts(self):
        return [len(s) for s in self.streamlines]

    @staticmethod
    def like(volume, streamlines=()):
        return Tractogram(list(streamlines), volume.voxel_size,
                          volume.extents, volume.affine.copy())
