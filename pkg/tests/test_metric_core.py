import numpy as np
import pytest

from helpers.field_classes import FieldValidationError, MetricField, ScalarField
from helpers.metric_core import (LaplaceBeltrami, christoffel, green_identity_residual, inverse_metric,
                                 laplace_beltrami_apply, lower_metric_from_s, metric_difference_norms)
from helpers.metric_families import conformal_bump


def test_inverse_of_conformal_metric(conformal):
    inv = inverse_metric(conformal)
    prod = np.einsum("...ij,...jk->...ik", conformal.g, inv.g)
    np.testing.assert_allclose(prod, np.broadcast_to(np.eye(2), prod.shape), atol=1e-13)


def test_christoffel_vanishes_for_euclidean(euclid):
    assert np.max(np.abs(christoffel(euclid).gamma)) == 0.0


def test_christoffel_is_symmetric(conformal):
    gamma = christoffel(conformal).gamma
    np.testing.assert_allclose(gamma, np.swapaxes(gamma, -1, -2), atol=1e-14)


def test_christoffel_of_conformal_factor(conformal):
    # g = e^{2f} e gives Γ^k_ij = δ_ki ∂_j f + δ_kj ∂_i f − δ_ij ∂_k f
    gamma = christoffel(conformal).gamma
    assert np.max(np.abs(gamma)) > 0.0
    # Γ^0_11 = −∂_0 f and Γ^1_01 = ∂_0 f
    np.testing.assert_allclose(gamma[..., 0, 1, 1], -gamma[..., 1, 0, 1], atol=1e-14)


def test_euclidean_laplacian_of_quadratic(euclid):
    grid = euclid.grid
    x, y = grid.coords
    u = ScalarField(grid, x ** 2 + y ** 2)
    lap = laplace_beltrami_apply(euclid, u)
    np.testing.assert_allclose(lap.values[grid.interior_mask], 4.0, rtol=1e-10)


def test_laplacian_rejects_foreign_field(euclid):
    other = euclid.grid.refined(24)
    with pytest.raises(FieldValidationError):
        laplace_beltrami_apply(euclid, ScalarField(other, np.zeros(other.shape)))


def test_stiffness_is_symmetric(conformal):
    s = LaplaceBeltrami(conformal).stiffness
    assert abs(s - s.T).max() < 1e-12


def test_green_identity_holds_discretely(conformal, rng):
    n = conformal.grid.n_nodes
    w = rng.standard_normal(n)
    f = rng.standard_normal(n)
    assert green_identity_residual(conformal, w, f) < 1e-10


def test_metric_difference_norms_of_equal_metrics(conformal):
    norms = metric_difference_norms(conformal, conformal)
    assert norms == {"c0": 0.0, "c2": 0.0, "l2": 0.0}


def test_metric_difference_grows_with_epsilon(small_grid, euclid):
    small = metric_difference_norms(euclid, conformal_bump(small_grid, 0.02))
    large = metric_difference_norms(euclid, conformal_bump(small_grid, 0.04))
    assert large["l2"] == pytest.approx(2.0 * small["l2"], rel=1e-12)
    assert large["c0"] > small["c0"] > 0.0


def test_lower_metric_from_s_recovers_g2(euclid, conformal):
    s = inverse_metric(conformal).g - inverse_metric(euclid).g
    alpha = conformal.sqrt_det / euclid.sqrt_det
    g2, alpha_hat, diff = lower_metric_from_s(euclid, alpha[..., None, None] * s)
    np.testing.assert_allclose(g2, conformal.g, atol=1e-10)
    np.testing.assert_allclose(alpha_hat, alpha, atol=1e-10)
    np.testing.assert_allclose(diff, euclid.g - conformal.g, atol=1e-10)


def test_lower_metric_from_zero_tensor_is_identity(euclid):
    g2, alpha, diff = lower_metric_from_s(euclid, np.zeros(euclid.g.shape))
    np.testing.assert_allclose(g2, euclid.g)
    np.testing.assert_allclose(alpha, 1.0)
    assert np.max(np.abs(diff)) == 0.0


def test_metric_field_euclidean_det(euclid):
    assert isinstance(euclid, MetricField)
    np.testing.assert_allclose(euclid.sqrt_det, 1.0)
