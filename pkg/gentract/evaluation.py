"""
Ground-truth streamline filter and the metrics reported per run.

A streamline is retained (true positive) when its nearest bundle centroid by
minimum direct-flip distance lies within `tau` and its two endpoints fall in
that bundle's endpoint regions in either orientation. Everything else,
including streamlines flagged out of bounds at generation time, is a false
positive.
"""
import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, dataclass, fields

import numpy as np

from .errors import ShapeError
from .plotting import precision_time_scatter
from .streamlines import resample_streamline
from .utils import worker_count


def mdf(a, b):
    """Minimum over both orientations of the mean pointwise distance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError('streamlines differ in shape: %s vs %s' %
                         (a.shape, b.shape))
    direct = np.linalg.norm(a - b, axis=-1).mean()
    flipped = np.linalg.norm(a - b[::-1], axis=-1).mean()
    return float(min(direct, flipped))


def mdf_matrix(streamlines, centroids):
    """Pairwise MDF between (N, p, 3) streamlines and (K, p, 3) centroids.

    Returns:
        distances: (N, K) array.
        flipped: (N, K) boolean, True where the reversed orientation won.

    """
    s = np.asarray(streamlines)[:, None]
    c = np.asarray(centroids)[None]
    direct = np.linalg.norm(s - c, axis=-1).mean(axis=-1)
    reverse = np.linalg.norm(s - c[:, :, ::-1], axis=-1).mean(axis=-1)
    return np.minimum(direct, reverse), reverse < direct


@dataclass
class FilterResult:
    """Per-streamline filter outcome.

    Attributes:
        labels: Boolean array, True for TP.
        bundles: Name of the nearest bundle per streamline (None when the
            streamline was flagged before filtering).
        distances: MDF (mm) to the nearest centroid; inf when flagged.

    """
    labels: np.ndarray
    bundles: list
    distances: np.ndarray

    def __len__(self):
        return len(self.labels)

    @property
    def tp(self):
        return int(np.sum(self.labels))

    @property
    def fp(self):
        return len(self) - self.tp

    def tp_counts(self):
        counts = {}
        for label, name in zip(self.labels, self.bundles):
            if label:
                counts[name] = counts.get(name, 0) + 1
        return counts


def _common_points(streamlines, points):
    return np.stack([s if len(s) == points else
                     resample_streamline(s, points) for s in streamlines])


def filter_streamlines(tractogram, truth, tau, endpoint_radius=0.0,
                       flags=None):
    """Labels every streamline of `tractogram` against the ground truth.

    Args:
        tractogram: Streamlines in world millimeters.
        truth: GroundTruth.
        tau: MDF threshold in millimeters.
        endpoint_radius: Lower bound (mm) on the endpoint region radius.
        flags: Optional boolean per streamline; flagged streamlines are FP.

    """
    if len(tractogram) == 0:
        raise ValueError('cannot filter an empty tractogram')
    if tau <= 0:
        raise ValueError('tau should be positive, got %r' % tau)
    points = max(len(b.centroid) for b in truth.bundles)
    centroids = _common_points([b.centroid for b in truth.bundles], points)
    streamlines = _common_points(tractogram.streamlines, points)
    flags = np.zeros(len(streamlines), dtype=bool) if flags is None \
        else np.asarray(flags, dtype=bool)
    if len(flags) != len(streamlines):
        raise ShapeError('%d flags for %d streamlines' %
                         (len(flags), len(streamlines)))

    def job(chunk):
        distances, _ = mdf_matrix(streamlines[chunk], centroids)
        nearest = distances.argmin(axis=1)
        out = []
        for row, index, k in zip(distances, chunk, nearest):
            bundle = truth.bundles[k]
            passed = (not flags[index] and row[k] <= tau and
                      bundle.connects(tractogram.streamlines[index],
                                      endpoint_radius))
            out.append((passed, bundle.name, row[k]))
        return out

    chunks = np.array_split(np.arange(len(streamlines)),
                            worker_count(len(streamlines)))
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        rows = [r for part in pool.map(job, chunks) for r in part]
    labels = np.array([r[0] for r in rows], dtype=bool)
    bundles = [None if flags[i] else r[1] for i, r in enumerate(rows)]
    distances = np.array([np.inf if flags[i] else r[2]
                          for i, r in enumerate(rows)])
    return FilterResult(labels, bundles, distances)


def precision(result):
    """TP / (TP + FP)."""
    if len(result) == 0:
        raise ValueError('precision of an empty result is undefined')
    return result.tp / len(result)


def discovered_bundles(result, truth, k=20):
    """Names of the bundles holding at least `k` TP streamlines, in
    ground-truth order.
    """
    if k < 1:
        raise ValueError('k should be at least 1, got %r' % k)
    counts = result.tp_counts()
    return [name for name in truth.names if counts.get(name, 0) >= k]


def bundles_discovered(result, truth, k=20):
    return len(discovered_bundles(result, truth, k))


@dataclass
class MetricsReport:
    run_id: str
    objective: str
    M: int
    n: int
    steps: int
    count: int
    precision: float
    bundles_discovered: int
    bundle_total: int
    wall_clock_s: float
    seed: int
    config_hash: str
    discovered: str = ''
    endpoint_mm: str = ''

    def __post_init__(self):
        if not 0.0 <= self.precision <= 1.0:
            raise ValueError('precision outside [0, 1]: %r' % self.precision)
        if self.bundles_discovered > self.bundle_total:
            raise ValueError('more bundles discovered than exist')


COLUMNS = tuple(f.name for f in fields(MetricsReport))


def _format(value):
    if isinstance(value, float):
        return '%.17g' % value
    return str(value)


def write_report_csv(reports, path):
    with open(path, 'w', newline='') as fp:
        writer = csv.writer(fp, lineterminator='\n')
        writer.writerow(COLUMNS)
        for report in reports:
            writer.writerow([_format(v) for v in astuple(report)])


def read_report_csv(path):
    types = {f.name: f.type for f in fields(MetricsReport)}
    casts = {'int': int, 'float': float, 'str': str,
             int: int, float: float, str: str}
    reports = []
    with open(path, newline='') as fp:
        for row in csv.DictReader(fp):
            reports.append(MetricsReport(**{
                key: casts[types[key]](value) for key, value in row.items()}))
    return reports


def emit_report(reports, csv_path, svg_path=None):
    """Writes the metrics CSV and, when `svg_path` is given, the
    precision-versus-time scatter.
    """
    if not reports:
        raise ValueError('nothing to report')
    write_report_csv(reports, csv_path)
    if svg_path is not None:
        precision_time_scatter(reports, svg_path)
    return csv_path, svg_path


def make_report(result, truth, k, run_id, objective, layers, width, steps,
                wall_clock_s, seed, config_hash, endpoint_radius=0.0):
    """Summary row of one filtered tractogram. `endpoint_mm` records the
    endpoint radius each bundle was actually scored with.
    """
    names = discovered_bundles(result, truth, k)
    radii = ';'.join('%s:%g' % (b.name, b.endpoint_radius(endpoint_radius))
                     for b in truth.bundles)
    return MetricsReport(
        run_id=run_id, objective=objective, M=layers, n=width, steps=steps,
        count=len(result), precision=precision(result),
        bundles_discovered=len(names), bundle_total=len(truth.names),
        wall_clock_s=float(wall_clock_s), seed=seed,
        config_hash=config_hash, discovered=';'.join(names),
        endpoint_mm=radii)
