"""
Synthetic fiber phantoms with analytic ground truth.

Each bundle is a tube around a Catmull-Rom centerline. Reference streamlines
are offset copies of the centerline with small perpendicular jitter. The SH
volume is built from the reference streamlines themselves, so the
conditioning signal and the ground truth always agree.
"""
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .sh import peak_to_sh, sh_basis_matrix, sh_count
from .streamlines import Tractogram, resample_streamline
from .utils import derive_rng
from .volume import SHVolume, voxel_affine


log = logging.getLogger('gentract.phantom')

BACKGROUND_SCALE = 0.1
JITTER_FRACTION = 0.05
ENDPOINT_VOXELS = 1.5
ENDPOINT_RADIUS_FACTOR = 1.2


@dataclass
class BundleSpec:
    name: str
    control_points: np.ndarray
    radius: float
    count: int = 200
    points: int = 32

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, dtype=np.float64)
        if self.control_points.ndim != 2 or self.control_points.shape[1] != 3:
            raise ValueError('bundle %s: control points should be K x 3' %
                             self.name)
        if len(self.control_points) < 2:
            raise ValueError('bundle %s: needs at least 2 control points' %
                             self.name)
        if self.radius <= 0:
            raise ValueError('bundle %s: radius should be positive' %
                             self.name)
        if self.count < 1 or self.points < 2:
            raise ValueError('bundle %s: needs count >= 1 and points >= 2' %
                             self.name)


@dataclass
class PhantomSpec:
    bundles: list
    extents: tuple = (32, 32, 32)
    voxel_size: float = 2.0
    l_max: int = 2
    seed: int = 0

    def __post_init__(self):
        self.bundles = [b if isinstance(b, BundleSpec) else BundleSpec(**b)
                        for b in self.bundles]
        self.extents = tuple(int(n) for n in self.extents)
        names = [b.name for b in self.bundles]
        if not names:
            raise ValueError('phantom needs at least one bundle')
        if len(set(names)) != len(names):
            raise ValueError('bundle names should be unique: %s' % names)
        if self.voxel_size <= 0:
            raise ValueError('voxel size should be positive')
        sh_count(self.l_max)

    def to_dict(self):
        return {
            'extents': list(self.extents),
            'voxel_size': self.voxel_size,
            'l_max': self.l_max,
            'seed': self.seed,
            'bundles': [{'name': b.name,
                         'control_points': b.control_points.tolist(),
                         'radius': b.radius,
                         'count': b.count,
                         'points': b.points} for b in self.bundles]}

    @staticmethod
    def from_dict(data):
        return PhantomSpec(**data)

    def save(self, path):
        with open(path, 'w') as fp:
            json.dump(self.to_dict(), fp, indent=2, sort_keys=True)

    @staticmethod
    def load(path):
        with open(path) as fp:
            return PhantomSpec.from_dict(json.load(fp))


@dataclass
class EndpointRegion:
    center: np.ndarray
    radius: float

    def contains(self, point, extra=0.0):
        distance = np.linalg.norm(np.asarray(point) - self.center)
        return distance <= max(self.radius, extra)


@dataclass
class BundleTruth:
    name: str
    streamlines: list
    centroid: np.ndarray
    regions: tuple

    def endpoint_radius(self, floor=0.0):
        """Radius (mm) the endpoint test applies given a configured floor."""
        return max(self.regions[0].radius, self.regions[1].radius, floor)

    def connects(self, points, radius=0.0):
        """Orientation-agnostic endpoint test."""
        a, b = self.regions
        first, last = points[0], points[-1]
        return ((a.contains(first, radius) and b.contains(last, radius)) or
                (b.contains(first, radius) and a.contains(last, radius)))


@dataclass
class GroundTruth:
    bundles: list = field(default_factory=list)

    def __getitem__(self, name):
        for bundle in self.bundles:
            if bundle.name == name:
                return bundle
        raise KeyError(name)

    @property
    def names(self):
        return [b.name for b in self.bundles]

    def streamlines(self):
        return [s for b in self.bundles for s in b.streamlines]

    def to_dict(self):
        return {'bundles': [{
            'name': b.name,
            'centroid': b.centroid.tolist(),
            'endpoint_regions': [{'center': r.center.tolist(),
                                  'radius': r.radius} for r in b.regions],
            'streamlines': [s.tolist() for s in b.streamlines]}
            for b in self.bundles]}

    @staticmethod
    def from_dict(data):
        bundles = []
        for entry in data['bundles']:
            regions = tuple(
                EndpointRegion(np.asarray(r['center'], dtype=np.float64),
                               float(r['radius']))
                for r in entry['endpoint_regions'])
            bundles.append(BundleTruth(
                entry['name'],
                [np.asarray(s, dtype=np.float64)
                 for s in entry['streamlines']],
                np.asarray(entry['centroid'], dtype=np.float64),
                regions))
        return GroundTruth(bundles)

    def save(self, path):
        with open(path, 'w') as fp:
            json.dump(self.to_dict(), fp, sort_keys=True)

    @staticmethod
    def load(path):
        with open(path) as fp:
            return GroundTruth.from_dict(json.load(fp))


def catmull_rom(control_points, samples_per_segment=32):
    """Uniform Catmull-Rom spline passing through every control point."""
    pts = np.asarray(control_points, dtype=np.float64)
    padded = np.vstack([2 * pts[0] - pts[1], pts, 2 * pts[-1] - pts[-2]])
    t = np.linspace(0.0, 1.0, samples_per_segment, endpoint=False)[:, None]
    t2, t3 = t * t, t * t * t
    pieces = []
    for i in range(1, len(padded) - 2):
        p0, p1, p2, p3 = padded[i - 1:i + 3]
        pieces.append(0.5 * (
            2 * p1 + (p2 - p0) * t +
            (2 * p0 - 5 * p1 + 4 * p2 - p3) * t2 +
            (3 * p1 - p0 - 3 * p2 + p3) * t3))
    pieces.append(pts[-1:])
    return np.vstack(pieces)


def transport_frames(points):
    """Unit tangents and two normals carried along a polyline without
    twisting.
    """
    tangents = np.gradient(points, axis=0)
    tangents /= np.linalg.norm(tangents, axis=1, keepdims=True)
    helper = np.eye(3)[np.argmin(np.abs(tangents[0]))]
    normal = np.cross(tangents[0], helper)
    normal /= np.linalg.norm(normal)
    normals = []
    for tangent in tangents:
        normal = normal - np.dot(normal, tangent) * tangent
        normal /= np.linalg.norm(normal)
        normals.append(normal)
    normals = np.array(normals)
    binormals = np.cross(tangents, normals)
    return tangents, normals, binormals


def sample_bundle(bundle, rng):
    """Reference streamlines and centroid of one bundle."""
    centerline = catmull_rom(bundle.control_points)
    centroid = resample_streamline(centerline, bundle.points)
    _, normals, binormals = transport_frames(centroid)
    r = bundle.radius
    streamlines = []
    for _ in range(bundle.count):
        rho = r * np.sqrt(rng.uniform())
        psi = rng.uniform(0.0, 2 * np.pi)
        jitter = rng.uniform(-JITTER_FRACTION * r, JITTER_FRACTION * r,
                             size=(bundle.points, 2))
        u = rho * np.cos(psi) + jitter[:, :1]
        v = rho * np.sin(psi) + jitter[:, 1:]
        streamlines.append(centroid + u * normals + v * binormals)
    return streamlines, centroid


def endpoint_regions(centroid, radius, voxel_size):
    # 1.5 voxels, widened for bundles thick enough to start outside it
    size = max(ENDPOINT_VOXELS * voxel_size, ENDPOINT_RADIUS_FACTOR * radius)
    return (EndpointRegion(centroid[0].copy(), size),
            EndpointRegion(centroid[-1].copy(), size))


def streamline_fodf(volume_shape, affine, streamlines, l_max, step):
    """Mean band-limited delta of segment tangents per voxel.

    Segments are split into pieces no longer than `step`; each piece
    contributes its tangent to the voxel holding its midpoint.
    """
    m = sh_count(l_max)
    n_voxels = int(np.prod(volume_shape))
    sums = np.zeros((n_voxels, m))
    counts = np.zeros(n_voxels)
    inverse = np.linalg.inv(affine)

    mids, tangents = [], []
    for points in streamlines:
        for a, b in zip(points[:-1], points[1:]):
            length = np.linalg.norm(b - a)
            if length == 0:
                continue
            pieces = max(1, int(np.ceil(length / step)))
            t = (np.arange(pieces) + 0.5) / pieces
            mids.append(a + t[:, None] * (b - a))
            tangents.append(np.repeat(((b - a) / length)[None], pieces, 0))
    mids = np.vstack(mids)
    tangents = np.vstack(tangents)

    ijk = np.rint(mids @ inverse[:3, :3].T + inverse[:3, 3]).astype(int)
    inside = np.all((ijk >= 0) & (ijk < np.asarray(volume_shape)), axis=1)
    flat = np.ravel_multi_index(ijk[inside].T, volume_shape)
    rows = (sh_basis_matrix(tangents[inside], l_max) +
            sh_basis_matrix(-tangents[inside], l_max)) / 2
    np.add.at(sums, flat, rows)
    np.add.at(counts, flat, 1.0)

    background = np.zeros(m)
    background[0] = BACKGROUND_SCALE * peak_to_sh(np.array([0., 0., 1.]),
                                                  l_max)[0]
    coeffs = np.tile(background, (n_voxels, 1))
    crossed = counts > 0
    coeffs[crossed] = sums[crossed] / counts[crossed, None]
    return coeffs.reshape(tuple(volume_shape) + (m,)), crossed.sum()


def make_phantom(spec, log=log):
    """Synthesizes an SH volume and its ground truth from a spec.

    Raises:
        ValueError: A bundle leaves the volume; the message names it.

    """
    affine = voxel_affine(spec.voxel_size)
    grid = SHVolume(np.zeros(spec.extents + (sh_count(spec.l_max),)),
                    spec.voxel_size, affine)
    truths = []
    for index, bundle in enumerate(spec.bundles):
        rng = derive_rng(spec.seed, index)
        streamlines, centroid = sample_bundle(bundle, rng)
        for points in streamlines:
            if not np.all(grid.contains(points)):
                raise ValueError('bundle %s leaves the volume bounds' %
                                 bundle.name)
        regions = endpoint_regions(centroid, bundle.radius, spec.voxel_size)
        truths.append(BundleTruth(bundle.name, streamlines, centroid, regions))

    reference = [s for truth in truths for s in truth.streamlines]
    coeffs, crossed = streamline_fodf(
        spec.extents, affine, reference, spec.l_max, 0.5 * spec.voxel_size)
    log.debug('phantom: %d bundles, %d streamlines, %d crossed voxels',
              len(truths), len(reference), crossed)
    return SHVolume(coeffs, spec.voxel_size, affine), GroundTruth(truths)


def ground_truth_tractogram(volume, truth):
    return Tractogram.like(volume, truth.streamlines())


def perturb_spec(spec, subject, jitter_mm=2.0):
    """A subject-specific variant with displaced control points."""
    rng = derive_rng(spec.seed, 7919, subject)
    bundles = [BundleSpec(b.name,
                          b.control_points + rng.uniform(
                              -jitter_mm, jitter_mm, b.control_points.shape),
                          b.radius, b.count, b.points)
               for b in spec.bundles]
    return PhantomSpec(bundles, spec.extents, spec.voxel_size, spec.l_max,
                       seed=spec.seed + subject)


def demo_phantom_spec(l_max=2, seed=0, count=200, points=32):
    """Three bundles in a 32^3 grid of 2 mm voxels: two straight bundles
    crossing at right angles and one curved bundle above them.
    """
    return PhantomSpec(
        bundles=[
            BundleSpec('cross_x', [[8.0, 31.0, 24.0], [54.0, 31.0, 24.0]],
                       radius=3.0, count=count, points=points),
            BundleSpec('cross_y', [[31.0, 8.0, 24.0], [31.0, 54.0, 24.0]],
                       radius=3.0, count=count, points=points),
            BundleSpec('arc', [[12.0, 16.0, 40.0], [31.0, 31.0, 50.0],
                               [50.0, 46.0, 40.0]],
                       radius=3.0, count=count, points=points)],
        extents=(32, 32, 32), voxel_size=2.0, l_max=l_max, seed=seed)
