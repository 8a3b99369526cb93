import numpy as np
import pytest

from gentract.errors import ConditioningError
from gentract.sh import (
    angle_between, degree_energy, eval_fodf, fibonacci_sphere, find_peaks,
    fit_sh, peak_to_sh, real_sh_basis, rotate_sh, rotation_about,
    sh_basis_matrix, sh_count, sh_degrees, sh_index, sh_order)


@pytest.mark.parametrize('l_max,expected', [(0, 1), (2, 6), (4, 15), (6, 28),
                                            (8, 45)])
def test_coefficient_count(l_max, expected):
    assert sh_count(l_max) == expected
    assert sh_order(expected) == l_max


@pytest.mark.parametrize('l_max', [-2, 3])
def test_odd_or_negative_order_is_rejected(l_max):
    with pytest.raises(ValueError):
        sh_count(l_max)


def test_flat_index_follows_storage_order():
    degrees = sh_degrees(4)

    assert [sh_index(l, k) for l, k in degrees] == list(range(len(degrees)))


def test_constant_term_value():
    value = real_sh_basis(0, 0, [0.0, 0.0, 1.0])

    assert value == pytest.approx(1 / np.sqrt(4 * np.pi), abs=1e-15)


def test_invalid_degree_is_rejected():
    with pytest.raises(ValueError):
        real_sh_basis(2, 3, [1.0, 0.0, 0.0])


def test_fibonacci_directions_are_unit_vectors():
    dirs = fibonacci_sphere(500)

    assert np.max(np.abs(np.linalg.norm(dirs, axis=1) - 1)) < 1e-12


def test_basis_is_orthonormal_under_monte_carlo_integration():
    dirs = fibonacci_sphere(20000)
    basis = sh_basis_matrix(dirs, 6)

    gram = basis.T @ basis * (4 * np.pi / len(dirs))

    assert np.max(np.abs(gram - np.eye(sh_count(6)))) < 0.02


def test_fit_recovers_band_limited_coefficients(rng):
    coeffs = rng.standard_normal(sh_count(4))
    dirs = fibonacci_sphere(64)

    fitted = fit_sh(dirs, eval_fodf(coeffs, dirs), 4)

    assert np.max(np.abs(fitted - coeffs)) < 1e-9


def test_eval_after_fit_reproduces_samples(rng):
    dirs = fibonacci_sphere(100)
    values = eval_fodf(rng.standard_normal(sh_count(6)), dirs)

    refit = eval_fodf(fit_sh(dirs, values, 6), dirs)

    assert np.max(np.abs(refit - values)) < 1e-9


def test_fit_handles_a_grid_of_functions(rng):
    coeffs = rng.standard_normal((2, 3, sh_count(2)))
    dirs = fibonacci_sphere(40)

    fitted = fit_sh(dirs, eval_fodf(coeffs, dirs), 2)

    assert fitted.shape == coeffs.shape
    assert np.max(np.abs(fitted - coeffs)) < 1e-9


def test_fit_with_too_few_samples_is_rejected():
    with pytest.raises(ValueError):
        fit_sh(fibonacci_sphere(10), np.zeros(10), 4)


def test_fit_on_degenerate_directions_is_ill_conditioned():
    dirs = np.tile([[0.0, 0.0, 1.0]], (30, 1))

    with pytest.raises(ConditioningError):
        fit_sh(dirs, np.ones(30), 4)


def test_fodf_is_antipodally_symmetric(rng):
    coeffs = rng.standard_normal(sh_count(6))
    dirs = fibonacci_sphere(50)

    difference = eval_fodf(coeffs, dirs) - eval_fodf(coeffs, -dirs)

    assert np.max(np.abs(difference)) < 1e-12


def test_peak_coefficients_do_not_depend_on_sign():
    d = np.array([0.3, -0.4, 0.866])
    d /= np.linalg.norm(d)

    assert np.array_equal(peak_to_sh(d, 6), peak_to_sh(-d, 6))


def test_identity_rotation_keeps_coefficients(rng):
    coeffs = rng.standard_normal(sh_count(4))

    assert np.max(np.abs(rotate_sh(coeffs, np.eye(3)) - coeffs)) < 1e-10


def test_rotation_then_inverse_restores_coefficients(rng):
    coeffs = rng.standard_normal(sh_count(6))
    rotation = rotation_about('x', 37) @ rotation_about('z', -64)

    restored = rotate_sh(rotate_sh(coeffs, rotation), rotation.T)

    assert np.max(np.abs(restored - coeffs)) < 1e-8


def test_rotation_preserves_energy_per_degree(rng):
    coeffs = rng.standard_normal(sh_count(6))
    rotation = rotation_about('y', 113) @ rotation_about('x', 21)

    before = degree_energy(coeffs)
    after = degree_energy(rotate_sh(coeffs, rotation))

    assert np.max(np.abs(after - before)) < 1e-8


def test_rotation_composes(rng):
    coeffs = rng.standard_normal(sh_count(4))
    first, second = rotation_about('z', 40), rotation_about('y', -75)

    twice = rotate_sh(rotate_sh(coeffs, first), second)
    once = rotate_sh(coeffs, second @ first)

    assert np.max(np.abs(twice - once)) < 1e-8


def test_rotated_peak_points_along_rotated_direction():
    rotation = rotation_about('z', 90)

    rotated = rotate_sh(peak_to_sh([1.0, 0.0, 0.0], 6), rotation)
    peaks, _ = find_peaks(rotated)

    assert angle_between(peaks[0], [0.0, 1.0, 0.0]) < 3.0


@pytest.mark.parametrize('matrix', [
    np.diag([1.0, 1.0, -1.0]),
    np.array([[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
])
def test_improper_rotations_are_rejected(matrix):
    with pytest.raises(ValueError):
        rotate_sh(np.zeros(sh_count(2)), matrix)


def test_single_peak_is_recovered():
    direction = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)

    peaks, values = find_peaks(peak_to_sh(direction, 6))

    assert len(peaks) == 1
    assert angle_between(peaks[0], direction) < 3.0
    assert values[0] > 0


def test_crossing_fibers_give_two_peaks():
    crossing = peak_to_sh([1.0, 0.0, 0.0], 6) + peak_to_sh([0.0, 1.0, 0.0], 6)

    peaks, _ = find_peaks(crossing)

    assert len(peaks) == 2
    found = sorted(min(angle_between(p, axis) for p in peaks)
                   for axis in ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]))
    assert found[-1] < 5.0


def test_zonal_degree_two_value_at_pole():
    value = real_sh_basis(2, 0, [0.0, 0.0, 1.0])

    assert value == pytest.approx(np.sqrt(5 / (4 * np.pi)), abs=1e-14)


def test_isotropic_samples_fit_to_constant_coefficient():
    dirs = fibonacci_sphere(60)
    values = np.full(len(dirs), 1 / (2 * np.sqrt(np.pi)))

    coeffs = fit_sh(dirs, values, 4)

    expected = np.zeros(sh_count(4))
    expected[0] = 1.0
    assert np.max(np.abs(coeffs - expected)) < 1e-9


@pytest.mark.parametrize('direction', [
    [0.0, 0.0, 1.0], [0.6, 0.0, 0.8], [-0.3, 0.5, 0.81240384]])
def test_peak_coefficients_maximize_along_direction(direction):
    direction = np.asarray(direction) / np.linalg.norm(direction)
    grid = fibonacci_sphere(1000)

    values = eval_fodf(peak_to_sh(direction, 6), grid)

    assert peak_to_sh(direction, 6)[0] == pytest.approx(
        1 / (2 * np.sqrt(np.pi)), abs=1e-14)
    assert angle_between(grid[np.argmax(values)], direction) < 5.0
