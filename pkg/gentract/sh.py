"""
Real symmetric spherical harmonics of even degree.

The basis follows the descoteaux convention used by diffusion MRI toolkits.
With N(l, k) = sqrt((2l + 1) / 4pi * (l - |k|)! / (l + |k|)!) and P the
associated Legendre function (Condon-Shortley phase included):

    Y(l, k) = sqrt(2) * N(l, |k|) * P(l, |k|, cos theta) * cos(|k| phi)  k < 0
    Y(l, 0) = N(l, 0) * P(l, 0, cos theta)                             k = 0
    Y(l, k) = sqrt(2) * N(l, k) * P(l, k, cos theta) * sin(k phi)      k > 0

Coefficients are stored by ascending even degree l and, within a degree,
by k from -l to l, so the flat index of (l, k) is l(l + 1)/2 + k.
"""
import math

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import gammaln, lpmv

from .errors import ConditioningError


MAX_CONDITION = 1e6


def sh_count(l_max):
    """Number of coefficients of an even-degree basis truncated at l_max."""
    if l_max < 0 or l_max % 2:
        raise ValueError('L_max should be even and non-negative: %r' % l_max)
    return (l_max + 1) * (l_max + 2) // 2


def sh_order(count):
    """Inverse of `sh_count`."""
    for l_max in range(0, 64, 2):
        if sh_count(l_max) == count:
            return l_max
        if sh_count(l_max) > count:
            break
    raise ValueError('%d is not a valid even-degree coefficient count' % count)


def sh_degrees(l_max):
    """Pairs (l, k) in storage order."""
    return [(l, k) for l in range(0, l_max + 1, 2) for k in range(-l, l + 1)]


def sh_index(l, k):
    return l * (l + 1) // 2 + k


def to_spherical(dirs):
    """Polar angle in [0, pi] and azimuth in [0, 2pi) of unit vectors."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    z = np.clip(dirs[:, 2], -1.0, 1.0)
    theta = np.arccos(z)
    phi = np.mod(np.arctan2(dirs[:, 1], dirs[:, 0]), 2 * np.pi)
    return theta, phi


def _normalization(l, k):
    k = abs(k)
    log_ratio = gammaln(l - k + 1) - gammaln(l + k + 1)
    return math.sqrt((2 * l + 1) / (4 * math.pi) * math.exp(log_ratio))


def _basis(l, k, theta, phi):
    norm = _normalization(l, k)
    legendre = lpmv(abs(k), l, np.cos(theta))
    if k < 0:
        return math.sqrt(2) * norm * legendre * np.cos(abs(k) * phi)
    if k == 0:
        return norm * legendre
    return math.sqrt(2) * norm * legendre * np.sin(k * phi)


def real_sh_basis(l, k, direction):
    """Value of the basis function (l, k) at a unit direction."""
    if l < 0 or l % 2 or abs(k) > l:
        raise ValueError('invalid SH degree/order (%r, %r)' % (l, k))
    theta, phi = to_spherical(direction)
    return float(_basis(l, k, theta, phi)[0])


def sh_basis_matrix(dirs, l_max):
    """Design matrix with one row per direction and one column per
    coefficient.
    """
    theta, phi = to_spherical(dirs)
    columns = [_basis(l, k, theta, phi) for l, k in sh_degrees(l_max)]
    return np.stack(columns, axis=-1)


def fibonacci_sphere(n):
    """Deterministic, nearly uniform unit directions."""
    if n < 1:
        raise ValueError('number of directions should be positive')
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    radius = np.sqrt(1.0 - z * z)
    golden_angle = np.pi * (3.0 - np.sqrt(5.0))
    phi = i * golden_angle
    return np.stack([radius * np.cos(phi), radius * np.sin(phi), z], axis=1)


def eval_fodf(coeffs, dirs):
    """Amplitude of the expansion at one or many directions.

    Coefficients may carry leading axes (e.g. a voxel grid); the result
    has those axes followed by one entry per direction.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    basis = sh_basis_matrix(dirs, sh_order(coeffs.shape[-1]))
    values = coeffs @ basis.T
    if np.ndim(dirs) == 1:
        return values[..., 0]
    return values


def condition_number(basis):
    return float(np.linalg.cond(basis))


def fit_sh(dirs, values, l_max, max_condition=MAX_CONDITION):
    """Least-squares SH coefficients of sampled amplitudes.

    Args:
        dirs: (N, 3) unit directions.
        values: (N,) amplitudes, or (..., N) for several functions at once.
        l_max: Even truncation degree.
        max_condition: Largest acceptable condition number of the design
            matrix.

    Returns:
        coeffs: (m,) or (..., m) coefficients.

    Raises:
        ValueError: Fewer samples than coefficients.
        ConditioningError: Directions do not determine the coefficients.

    """
    dirs = np.atleast_2d(dirs)
    m = sh_count(l_max)
    if len(dirs) < m:
        raise ValueError('%d samples cannot determine %d coefficients' %
                         (len(dirs), m))
    basis = sh_basis_matrix(dirs, l_max)
    cond = condition_number(basis)
    if cond > max_condition:
        raise ConditioningError(cond, max_condition)
    values = np.asarray(values, dtype=np.float64)
    flat = values.reshape(-1, values.shape[-1]).T
    coeffs, *_ = np.linalg.lstsq(basis, flat, rcond=None)
    return coeffs.T.reshape(values.shape[:-1] + (m,))


def peak_to_sh(direction, l_max):
    """Band-limited antipodally symmetric delta centered at +/-direction."""
    direction = np.asarray(direction, dtype=np.float64)
    plus = sh_basis_matrix(direction, l_max)[0]
    minus = sh_basis_matrix(-direction, l_max)[0]
    return (plus + minus) / 2


def degree_energy(coeffs):
    """Sum of squared coefficients per even degree, ascending."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    l_max = sh_order(coeffs.shape[-1])
    return np.stack([
        np.sum(coeffs[..., sh_index(l, -l):sh_index(l, l) + 1] ** 2, axis=-1)
        for l in range(0, l_max + 1, 2)], axis=-1)


def check_rotation(rotation, tol=1e-9):
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape != (3, 3):
        raise ValueError('rotation should be a 3x3 matrix')
    if not np.allclose(rotation @ rotation.T, np.eye(3), atol=tol, rtol=0):
        raise ValueError('matrix is not orthogonal')
    if abs(np.linalg.det(rotation) - 1.0) > tol:
        raise ValueError('matrix is not a proper rotation (det != +1)')
    return rotation


def rotation_about(axis, angle_deg):
    """Right-handed rotation matrix about 'x', 'y' or 'z'."""
    a = np.deg2rad(angle_deg)
    c, s = np.cos(a), np.sin(a)
    if axis == 'x':
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == 'y':
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    if axis == 'z':
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    raise ValueError('unknown rotation axis: %r' % axis)


def sh_rotation_matrix(rotation, l_max, n_dirs=None):
    """Matrix M such that M @ c are the coefficients of f(R^-1 d).

    The rotated function is sampled on spread directions and refit, which
    is exact because rotation preserves every degree subspace.
    """
    rotation = check_rotation(rotation)
    m = sh_count(l_max)
    dirs = fibonacci_sphere(n_dirs or max(4 * m, 64))
    basis = sh_basis_matrix(dirs, l_max)
    # row vectors: d @ R equals R^T d
    pulled = sh_basis_matrix(dirs @ rotation, l_max)
    return np.linalg.pinv(basis) @ pulled


def rotate_sh(coeffs, rotation):
    """Coefficients of the rotated function f(R^-1 d)."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    matrix = sh_rotation_matrix(rotation, sh_order(coeffs.shape[-1]))
    return coeffs @ matrix.T


def find_peaks(coeffs, n_dirs=4000, min_separation_deg=25.0,
               relative_threshold=0.5):
    """Local maxima of an antipodally symmetric fODF.

    Amplitudes are evaluated on a Fibonacci grid; a grid direction is a peak
    when no neighbour (antipodes included) exceeds it. Peaks below
    `relative_threshold` times the global maximum are dropped and peaks
    closer than `min_separation_deg` (up to sign) are merged.

    Returns:
        peaks: (K, 3) directions ordered by decreasing amplitude.
        values: (K,) amplitudes.

    """
    dirs = fibonacci_sphere(n_dirs)
    values = eval_fodf(coeffs, dirs)
    both = np.concatenate([dirs, -dirs])
    both_values = np.concatenate([values, values])
    spacing = np.sqrt(4 * np.pi / n_dirs)
    tree = cKDTree(both)
    neighbours = tree.query_ball_point(dirs, r=2.0 * spacing)

    candidates = [
        i for i, near in enumerate(neighbours)
        if values[i] >= both_values[near].max()]
    top = values.max()
    order = sorted(candidates, key=lambda i: -values[i])

    cos_limit = np.cos(np.deg2rad(min_separation_deg))
    peaks, amplitudes = [], []
    for i in order:
        if top <= 0 or values[i] < relative_threshold * top:
            break
        if any(abs(np.dot(dirs[i], p)) > cos_limit for p in peaks):
            continue
        peaks.append(dirs[i])
        amplitudes.append(values[i])
    return np.array(peaks).reshape(-1, 3), np.array(amplitudes)


def angle_between(a, b, antipodal=True):
    """Angle in degrees between directions, optionally sign-agnostic."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cos = np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b))
    if antipodal:
        cos = abs(cos)
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
