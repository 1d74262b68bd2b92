import numpy as np
import pytest

from helpers.field_classes import ConfigError, MetricField
from helpers.probe_pipeline import (UcpQuantities, band_masks, cutoff_field, direction_profile, identity_sides,
                                    measurement_value, minimal_constant, mu_weight, prepare_probe,
                                    run_backward_probe, run_forward_probe, ucp_quantities)
from helpers.wave_dtn import select_gamma_sharp


def _probe(g1, g2, h=0.125):
    setup = prepare_probe(g1, g2, h)
    fwd = run_forward_probe(setup)
    back = run_backward_probe(setup, direction_profile(0.0, 0.6))
    return setup, fwd, back, identity_sides(setup, back, fwd)


@pytest.fixture(scope="module")
def conformal_probe(grid48, conformal48):
    return _probe(conformal48, MetricField.euclidean(grid48))


@pytest.fixture(scope="module")
def control_probe(grid48):
    euclid = MetricField.euclidean(grid48)
    return _probe(euclid, euclid)


def test_bands_are_nested(grid48):
    o1, o2, o3 = band_masks(grid48)
    assert np.all(o1 >= o2) and np.all(o2 >= o3)
    assert np.any(o2 & ~o3)
    assert not np.any(o1 & ~grid48.in_domain)


def test_cutoff_vanishes_near_the_boundary(grid48):
    kap = cutoff_field(grid48)
    assert np.all(kap[grid48.boundary_index] == 0.0)
    assert np.all(kap[band_masks(grid48)[2].ravel()] == 0.0)
    centre = np.ravel_multi_index((24, 24), grid48.shape)
    assert kap[centre] == 1.0
    assert np.all((kap >= 0.0) & (kap <= 1.0))


def test_direction_profile():
    b = direction_profile(0.2, 0.5)
    assert b(0.2) == 1.0
    assert b(0.8) == 0.0 and b(-0.35) == 0.0
    assert b(0.45) == pytest.approx(0.5)
    np.testing.assert_allclose(mu_weight(np.array([0.0, np.pi / 3])), [1.0, 0.5])


def test_minimal_constant_cases():
    assert minimal_constant(UcpQuantities(1.0, 2.0, 1.0, 0.5), gamma=1.0, mu=0.0) == 0.0
    assert minimal_constant(UcpQuantities(1.0, 0.0, 0.0, 0.0), gamma=1.0, mu=0.0) == float("inf")
    assert minimal_constant(UcpQuantities(1.0, 2.0, 0.1, 0.1), gamma=4.0, mu=0.0) == pytest.approx(0.8)


def test_probe_needs_a_shared_grid(grid48, small_grid):
    with pytest.raises(ConfigError, match="different grids"):
        prepare_probe(MetricField.euclidean(grid48), MetricField.euclidean(small_grid), 0.125)


@pytest.mark.slow
def test_discrete_identity_holds(conformal_probe):
    setup, fwd, back, result = conformal_probe
    assert abs(result.rhs) > 0.0
    assert result.mismatch < 1e-6
    assert np.isfinite(result.pairing)
    assert set(result.as_dict()) >= {"lhs_re", "rhs_re", "mismatch"}


@pytest.mark.slow
def test_identity_control_case(conformal_probe, control_probe):
    *_, perturbed = conformal_probe
    *_, control = control_probe
    assert control.rhs == 0.0
    assert abs(control.lhs) <= 1e-6 * abs(perturbed.lhs)


@pytest.mark.slow
def test_measurement_and_ucp_quantities(conformal_probe):
    setup, fwd, back, result = conformal_probe
    value = measurement_value(result, setup.h, direction_profile(0.0, 0.6))
    assert np.isfinite(value)
    with pytest.raises(ConfigError):
        measurement_value(result, setup.h, direction_profile(3.0, 0.1))

    q = ucp_quantities(setup, fwd, select_gamma_sharp(setup.grid))
    assert q.band_l2 > 0.0
    assert q.h1 >= q.band_l2
    # the metrics agree on the outer band, so □_{g₁} u₂ is round-off there
    assert q.box_norm <= 1e-6 * q.h1
    assert set(q.as_dict()) == {"band_l2", "h1", "box_norm", "neumann_norm"}
