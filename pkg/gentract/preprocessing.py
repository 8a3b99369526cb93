"""
Normalization, augmentation and dataset splitting applied before training.
"""
import json
import hashlib
from dataclasses import dataclass

import numpy as np
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import MinMaxScaler, StandardScaler

from .sh import rotation_about, sh_rotation_matrix
from .volume import sample_trilinear


OUT_OF_BOUNDS_LIMIT = 1.05


@dataclass
class ScalingStats:
    """Training-set statistics.

    Attributes:
        coord_min: Per-axis minimum streamline coordinate (mm).
        coord_max: Per-axis maximum streamline coordinate (mm).
        coeff_mean: Per-coefficient mean over all training voxels.
        coeff_std: Per-coefficient population standard deviation.

    """
    coord_min: np.ndarray
    coord_max: np.ndarray
    coeff_mean: np.ndarray
    coeff_std: np.ndarray

    def __post_init__(self):
        for name in ('coord_min', 'coord_max', 'coeff_mean', 'coeff_std'):
            setattr(self, name,
                    np.asarray(getattr(self, name), dtype=np.float64))
        if np.any(self.coord_max <= self.coord_min):
            raise ValueError('coordinate range is empty on some axis')
        if np.any(self.coeff_std <= 0):
            raise ValueError('coefficient channels %s have zero std' %
                             np.flatnonzero(self.coeff_std <= 0).tolist())

    @staticmethod
    def fit(volumes, tractograms):
        coords = MinMaxScaler()
        coeffs = StandardScaler()
        for tractogram in tractograms:
            coords.partial_fit(np.vstack(tractogram.streamlines))
        for volume in volumes:
            coeffs.partial_fit(volume.coeffs.reshape(-1, volume.m))
        return ScalingStats(coords.data_min_, coords.data_max_,
                            coeffs.mean_, np.sqrt(coeffs.var_))

    def to_dict(self):
        return {'coord_min_mm': self.coord_min.tolist(),
                'coord_max_mm': self.coord_max.tolist(),
                'coeff_mean': self.coeff_mean.tolist(),
                'coeff_std': self.coeff_std.tolist()}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @staticmethod
    def from_json(text):
        data = json.loads(text)
        return ScalingStats(data['coord_min_mm'], data['coord_max_mm'],
                            data['coeff_mean'], data['coeff_std'])

    def digest(self):
        return hashlib.sha256(self.to_json().encode('utf-8')).hexdigest()

    def save(self, path):
        with open(path, 'w') as fp:
            fp.write(self.to_json())

    @staticmethod
    def load(path):
        with open(path) as fp:
            return ScalingStats.from_json(fp.read())


def minmax_scale(points, stats):
    """Maps training coordinates onto [-1, 1] per axis."""
    span = stats.coord_max - stats.coord_min
    return 2.0 * (np.asarray(points) - stats.coord_min) / span - 1.0


def minmax_unscale(points, stats):
    span = stats.coord_max - stats.coord_min
    return (np.asarray(points) + 1.0) / 2.0 * span + stats.coord_min


def out_of_bounds(scaled, limit=OUT_OF_BOUNDS_LIMIT):
    """Flags streamlines with any scaled coordinate beyond +/-limit.

    Args:
        scaled: (B, p, 3) array or a list of (p, 3) arrays.

    """
    return np.array([bool(np.any(np.abs(s) > limit)) for s in scaled])


def zscore_volume(volume, stats):
    if volume.m != len(stats.coeff_mean):
        raise ValueError('volume has %d coefficients, stats have %d' %
                         (volume.m, len(stats.coeff_mean)))
    return volume.copy((volume.coeffs - stats.coeff_mean) / stats.coeff_std)


def rotate_points(points, rotation, center):
    return (np.asarray(points) - center) @ rotation.T + center


def rotate_pair(volume, tractogram, angle, axis):
    """Rotates a volume and its tractogram about the volume's world center.

    Streamline points are rotated directly. The volume is resampled on its
    own grid by pulling coefficients from the inversely rotated positions
    and reorienting them with the SH rotation matrix.
    """
    rotation = rotation_about(axis, angle)
    center = volume.world_center()
    streamlines = [rotate_points(s, rotation, center)
                   for s in tractogram.streamlines]

    grid = np.stack(np.meshgrid(*[np.arange(n) for n in volume.extents],
                                indexing='ij'), axis=-1)
    world = volume.voxel_to_world(grid)
    # row vectors: (x - c) @ R is R^T (x - c)
    source = volume.world_to_voxel((world - center) @ rotation + center)
    pulled = sample_trilinear(volume.coeffs, source)
    reorient = sh_rotation_matrix(rotation, volume.l_max)
    rotated = volume.copy(pulled @ reorient.T)
    return rotated, tractogram.with_streamlines(streamlines)


def augment(volume, tractogram, angles, axes):
    """Yields (tag, volume, tractogram) for the original pair and each
    rotation.
    """
    yield 'original', volume, tractogram
    for axis in axes:
        for angle in angles:
            rotated = rotate_pair(volume, tractogram, angle, axis)
            yield '%s%+g' % (axis, angle), rotated[0], rotated[1]


def split_subjects(subjects, valid=0.10, test=0.15, seed=0):
    """Subject-level train/validation/test split.

    Splits that would round to zero subjects are left empty.

    Returns:
        train, valid, test: Lists of subjects.

    """
    subjects = list(subjects)
    n = len(subjects)
    n_test = int(round(n * test))
    n_valid = int(round(n * valid))
    if n - n_test - n_valid < 1:
        return subjects, [], []
    rest, test_part = subjects, []
    if n_test:
        rest, test_part = train_test_split(
            subjects, test_size=n_test, random_state=seed)
    train_part, valid_part = rest, []
    if n_valid:
        train_part, valid_part = train_test_split(
            rest, test_size=n_valid, random_state=seed)
    return list(train_part), list(valid_part), list(test_part)
