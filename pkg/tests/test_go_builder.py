import numpy as np
import pytest
from scipy.integrate import trapezoid

from helpers.field_classes import ConfigError, DomainGrid, FieldValidationError, MetricField
from helpers.go_builder import (Kappa, a3_transport_residual, aleph, check_resolution, default_delta, default_h,
                                eikonal_phase, probe_horizon, resolution_limit, source_point, transport_a1,
                                transport_a2, transport_a3, transport_residual)
from helpers.wave_dtn import WaveSolver


def test_kappa_has_unit_l2_norm():
    kappa = Kappa(0.4)
    s = np.linspace(-0.1, 0.5, 20001)
    assert trapezoid(kappa(s) ** 2, s) == pytest.approx(1.0, rel=1e-6)
    assert kappa(0.0) == 0.0 and kappa(0.4) == 0.0
    assert np.all(kappa(np.array([-0.2, 0.6])) == 0.0)


def test_kappa_derivatives_match_differences():
    kappa = Kappa(0.4)
    s = np.linspace(0.05, 0.35, 7)
    eps = 1e-6
    for order in (1, 2, 3):
        fd = (kappa(s + eps, order - 1) - kappa(s - eps, order - 1)) / (2.0 * eps)
        np.testing.assert_allclose(kappa(s, order), fd, rtol=1e-6, atol=1e-6 * np.max(np.abs(fd)))
    with pytest.raises(ValueError):
        kappa(s, 4)


def test_source_point_clears_the_domain(small_grid):
    delta = default_delta(small_grid)
    y = source_point(small_grid, delta, -0.5 * np.pi)
    assert y[0] == pytest.approx(0.0, abs=1e-15)
    assert small_grid.signed_distance(y) >= delta


def test_euclidean_phase_is_distance(euclid):
    grid = euclid.grid
    y = source_point(grid, default_delta(grid), -0.5 * np.pi)
    phase = eikonal_phase(euclid, y)
    exact = np.linalg.norm(grid.points - y, axis=-1).reshape(grid.shape)
    np.testing.assert_allclose(phase.phi, exact, atol=1e-9)
    assert phase.ray_residual <= 1e-9
    # θ is measured from the inward direction, which is straight up here
    x, yy = grid.coords
    np.testing.assert_allclose(phase.theta, np.arctan2(yy - y[1], x - y[0]) - 0.5 * np.pi, atol=1e-9)
    np.testing.assert_allclose(phase.alpha[grid.in_domain], exact[grid.in_domain] ** 2, rtol=1e-5)


def test_conformal_phase_arrives_with_unit_covector(conformal):
    y = source_point(conformal.grid, default_delta(conformal.grid), -0.5 * np.pi)
    phase = eikonal_phase(conformal, y)
    assert phase.ray_residual <= 1e-4
    assert probe_horizon(phase, Kappa(0.4)) == pytest.approx(phase.max_in_domain() + 0.8)


def test_eikonal_residual_drops_under_refinement():
    y = np.array([0.0, -1.6])
    residuals = []
    for n in (32, 64):
        m = MetricField.euclidean(DomainGrid.ball(2, n))
        residuals.append(eikonal_phase(m, y).eikonal_residual(m))
    assert residuals[1] <= 0.5 * residuals[0]


def test_phase_needs_exterior_source(euclid):
    with pytest.raises(ConfigError, match="outside"):
        eikonal_phase(euclid, [0.0, 0.0])


def test_phase_is_two_dimensional_only():
    grid = DomainGrid.ball(3, 16)
    with pytest.raises(ConfigError, match="2-D"):
        eikonal_phase(MetricField.euclidean(grid), [0.0, 0.0, -2.0])


def test_a3_vanishes_for_equal_metrics(euclid):
    y = source_point(euclid.grid, default_delta(euclid.grid), -0.5 * np.pi)
    phase = eikonal_phase(euclid, y)
    a2 = transport_a2(euclid, phase, Kappa(0.4))
    a3 = transport_a3(euclid, euclid, phase, phase, a2, h=0.125)
    assert np.all(a3.values(1.5) == 0.0)
    assert a3.support_window() == (0.0, 0.0)
    assert a3_transport_residual(euclid, euclid, a3, a2, phase, phase, 0.125, 1.5) == 0.0


def test_transport_residual_drops_under_refinement():
    y = np.array([0.0, -1.6])
    residuals = []
    for n in (32, 64):
        m = MetricField.euclidean(DomainGrid.ball(2, n))
        a1 = transport_a1(m, eikonal_phase(m, y), Kappa(0.4))
        assert a1.residual(1.6) == transport_residual(m, a1, a1.phase, 1.6)
        residuals.append(a1.residual(1.6))
    assert residuals[1] < 0.75 * residuals[0]


def test_polar_amplitude_rejects_foreign_metric(euclid):
    y = np.array([0.0, -1.6])
    other = MetricField.euclidean(DomainGrid.ball(2, 24))
    phase = eikonal_phase(euclid, y)
    with pytest.raises(FieldValidationError, match="different grids"):
        transport_a1(other, phase, Kappa(0.4))
    with pytest.raises(FieldValidationError, match="different grids"):
        transport_a2(other, phase, Kappa(0.4))
    assert transport_a2(euclid, phase, Kappa(0.4)).metric is euclid


def test_aleph_is_homogeneous(euclid):
    y = source_point(euclid.grid, default_delta(euclid.grid), -0.5 * np.pi)
    phase = eikonal_phase(euclid, y)
    solver = WaveSolver(euclid)
    base = aleph(transport_a1(euclid, phase, Kappa(0.4)), solver, 40)
    doubled = aleph(transport_a1(euclid, phase, Kappa(0.4), weight=lambda th: np.full_like(th, 2.0)), solver, 40)
    assert base > 0.0
    assert doubled == pytest.approx(2.0 * base, rel=1e-12)


def test_resolution_rule(small_grid):
    limit = resolution_limit(small_grid)
    assert limit == pytest.approx(8.0 * max(small_grid.spacing) / (2.0 * np.pi))
    check_resolution(small_grid, limit)
    with pytest.raises(ConfigError, match="under-resolved"):
        check_resolution(small_grid, 0.9 * limit)


def test_default_h_is_clipped(small_grid):
    limit = resolution_limit(small_grid)
    assert default_h(1e-12, small_grid) == limit
    assert default_h(1.0, small_grid, cap=0.125) == 0.125
    assert default_h(0.5 ** 4, small_grid) == pytest.approx(0.5)
