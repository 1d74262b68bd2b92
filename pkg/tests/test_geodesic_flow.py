import numpy as np
import pytest

from helpers.field_classes import DiffeoField, DomainGrid, GeodesicError, MetricField
from helpers.geodesic_flow import (MetricInterpolant, PhasePoint, admissible_pair_check, exit_and_scatter, exp_map,
                                   flow, gamma_minus_fan, hamiltonian, integrate_geodesic, polar_coords,
                                   pullback_metric, reverse_phase_point, semi_geodesic_map, volume_element_polar)


def test_euclidean_rays_are_chords(euclid):
    x = gamma_minus_fan(euclid.grid, 8) + np.array([0.0, 1e-9])
    xi = np.tile([0.0, 1.0], (8, 1))
    scatter = exit_and_scatter(euclid, x, xi, step=1e-3)

    exit_y = np.sqrt(1.0 - x[:, 0] ** 2)
    np.testing.assert_allclose(scatter.exit_x[:, 0], x[:, 0], atol=1e-8)
    np.testing.assert_allclose(scatter.exit_x[:, 1], exit_y, atol=1e-8)
    np.testing.assert_allclose(scatter.length, exit_y - x[:, 1], atol=1e-8)
    np.testing.assert_allclose(scatter.exit_direction, xi, atol=1e-8)


def test_hamiltonian_is_conserved(conformal):
    interp = MetricInterpolant(conformal)
    start = PhasePoint([0.05, -np.sqrt(1.0 - 0.05 ** 2) + 1e-9], [0.0, 1.0])
    path = integrate_geodesic(conformal, start, 1e-3, interp=interp)
    energy = hamiltonian(interp, path.x, path.xi)
    assert np.max(np.abs(energy - 0.5)) <= 1e-8
    assert path.exit_time == pytest.approx(path.times[-1])
    # the bump bends the ray away from the straight chord
    assert abs(path.exit_point[0] - 0.05) > 1e-6


def test_non_unit_covector_is_rejected(euclid):
    with pytest.raises(GeodesicError, match="unit"):
        integrate_geodesic(euclid, PhasePoint([0.0, -0.5], [0.0, 2.0]), 1e-2)


def test_outward_covector_is_rejected(euclid):
    with pytest.raises(GeodesicError, match="inward"):
        exit_and_scatter(euclid, [[0.0, -1.0]], [[0.0, -1.0]], 1e-2)


def test_reversed_flow_retraces_the_path(conformal):
    interp = MetricInterpolant(conformal)
    start = PhasePoint(np.array([0.1, -0.6]), np.array([0.0, 1.0]))
    ahead = flow(conformal, start, 0.8, 1e-3, interp)
    back = flow(conformal, reverse_phase_point(ahead), 0.8, 1e-3, interp)
    np.testing.assert_allclose(back.x, start.x, atol=1e-9)
    np.testing.assert_allclose(-back.xi, start.xi, atol=1e-9)


def test_reverse_phase_point_copies():
    p = PhasePoint(np.array([0.1, 0.2]), np.array([1.0, 0.0]))
    q = reverse_phase_point(p)
    q.x[0] = 5.0
    assert p.x[0] == 0.1
    np.testing.assert_array_equal(q.xi, [-1.0, 0.0])


def test_euclidean_exp_map_follows_straight_lines(euclid):
    y = np.array([0.0, -1.1])
    r = np.array([0.5, 1.0, 1.5])
    angles = np.array([[0.3], [1.2], [2.0]])
    x, v = exp_map(euclid, y, r, angles, step=1e-2, with_velocity=True)
    theta = np.hstack([np.cos(angles), np.sin(angles)])
    np.testing.assert_allclose(x, y + r[:, None] * theta, atol=1e-10)
    np.testing.assert_allclose(v, theta, atol=1e-10)


def test_euclidean_polar_coordinates(euclid):
    y = np.array([0.0, -1.1])
    x = np.array([0.3, 0.2])
    r, angles = polar_coords(euclid, y, x, step=1e-2)
    assert r == pytest.approx(np.linalg.norm(x - y), abs=1e-10)
    assert angles[0] == pytest.approx(np.arctan2(1.3, 0.3), abs=1e-10)


def test_euclidean_polar_volume_element(euclid):
    y = np.array([0.0, -1.1])
    r = np.array([0.5, 1.0, 1.5])
    angles = np.full((3, 1), 0.5 * np.pi)
    alpha = volume_element_polar(euclid, y, r, angles, step=1e-2)
    np.testing.assert_allclose(alpha, r ** 2, rtol=1e-6)


def test_euclidean_3d_polar_volume_element():
    m = MetricField.euclidean(DomainGrid.ball(3, 16))
    y = np.array([0.0, 0.0, -1.1])
    angles = np.array([[0.6, 0.3], [1.2, 2.0]])
    r = np.array([0.5, 1.0])
    alpha = volume_element_polar(m, y, r, angles, step=1e-2)
    np.testing.assert_allclose(alpha, r ** 4 * np.sin(angles[:, 0]) ** 2, rtol=1e-5)


def test_block_metric_is_admissible_against_euclidean(euclid, block):
    report = admissible_pair_check(euclid, block)
    assert report.passed
    assert report.max_length_discrepancy <= 1e-6
    assert report.c0_difference > 0.0


def test_conformal_metric_changes_scattering(euclid, conformal):
    report = admissible_pair_check(euclid, conformal)
    assert not report.passed
    assert report.max_length_discrepancy > 1e-6
    assert report.collar_residual_g2 == 0.0


def test_pullback_under_identity(conformal):
    pulled = pullback_metric(conformal, DiffeoField.identity(conformal.grid))
    np.testing.assert_array_equal(pulled.g, conformal.g)


def test_euclidean_semi_geodesic_map_is_identity(euclid):
    psi = semi_geodesic_map(euclid)
    ident = np.stack(euclid.grid.coords, axis=-1)
    np.testing.assert_allclose(psi.psi, ident, atol=1e-11)
    assert psi.collar_residual < 1e-12


def test_semi_geodesic_pullback_has_unit_normal(conformal):
    psi = semi_geodesic_map(conformal)
    assert np.all(psi.det[conformal.grid.in_domain] > 0.0)
    pulled = pullback_metric(conformal, psi)
    g_nn = pulled.g[..., 1, 1][conformal.grid.in_domain]
    np.testing.assert_allclose(g_nn, 1.0, atol=1e-3)
