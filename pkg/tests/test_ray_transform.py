import numpy as np
import pytest

from helpers.field_classes import ConfigError, FieldValidationError, SymTensorField2
from helpers.helper_methods import relative_error
from helpers.ray_transform import (RayTransformOperator, Sinogram, adjoint_ray_transform, make_fan_bundle,
                                   make_point_fan, normal_operator, ray_transform, s_invert)
from helpers.tensor_fields import SymmetricGradient, random_potential, smooth_phantom, solenoidal_decompose, tensor_inner


def test_bundle_layout(small_grid):
    bundle = make_fan_bundle(small_grid, 8, 6)
    assert bundle.n_rays == 48
    np.testing.assert_allclose(np.linalg.norm(bundle.directions, axis=-1), 1.0)
    assert np.all(bundle.mu > 0.0)
    np.testing.assert_allclose(np.linalg.norm(bundle.points - bundle.center, axis=-1), bundle.launch_radius)


@pytest.mark.parametrize("n_points, n_dirs", [(3, 8), (8, 2)])
def test_small_bundle_is_rejected(small_grid, n_points, n_dirs):
    with pytest.raises(ConfigError, match="at least 4"):
        make_fan_bundle(small_grid, n_points, n_dirs)


def test_point_fan_mu(small_grid):
    y = np.array([0.0, -1.2])
    angles = 0.5 * np.pi + np.array([-0.4, 0.0, 0.4])
    fan = make_point_fan(small_grid, y, angles)
    np.testing.assert_allclose(fan.mu, np.cos(angles - 0.5 * np.pi), atol=1e-14)
    assert fan.launch_radius == pytest.approx(1.2)


def test_sinogram_shape_is_checked(small_grid):
    bundle = make_fan_bundle(small_grid, 4, 4)
    with pytest.raises(FieldValidationError, match="values"):
        Sinogram(bundle, np.zeros(bundle.n_rays + 1))


def test_adjointness(conformal, rng):
    bundle = make_fan_bundle(conformal.grid, 16, 8)
    op = RayTransformOperator(conformal, bundle)
    t = smooth_phantom(conformal.grid, rng)
    s = Sinogram(bundle, rng.standard_normal(bundle.n_rays))
    lhs = op.forward(t).inner(s)
    rhs = tensor_inner(t, op.adjoint(s))
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs))


def test_normal_operator_composes_transform_and_adjoint(conformal, rng):
    bundle = make_fan_bundle(conformal.grid, 8, 8)
    t = smooth_phantom(conformal.grid, rng)
    sino = ray_transform(conformal, t, bundle)
    back = adjoint_ray_transform(conformal, sino, bundle)
    normal = normal_operator(conformal, t, bundle)
    np.testing.assert_allclose(normal.s, back.s, rtol=1e-12, atol=1e-14)
    assert tensor_inner(t, normal) == pytest.approx(sino.inner(sino), rel=1e-10)


def test_euclidean_transform_of_identity_is_chord_length(euclid):
    bundle = make_fan_bundle(euclid.grid, 8, 8)
    op = RayTransformOperator(euclid, bundle)
    ident = SymTensorField2(euclid.grid, np.broadcast_to(np.eye(2), euclid.grid.shape + (2, 2)).copy())
    values = op.forward(ident).values
    # chord of the unit disk at impact parameter p is 2√(1 − p²)
    offset = bundle.points - bundle.center
    p = np.abs(offset[:, 0] * bundle.directions[:, 1] - offset[:, 1] * bundle.directions[:, 0])
    chord = 2.0 * np.sqrt(np.clip(1.0 - p ** 2, 0.0, None))
    central = p <= 0.7
    assert np.any(central)
    assert np.max(np.abs(values - chord)[central]) <= 3.0 * max(euclid.grid.spacing)


def test_transform_rejects_foreign_tensor(euclid):
    op = RayTransformOperator(euclid, make_fan_bundle(euclid.grid, 4, 4))
    other = euclid.grid.refined(24)
    with pytest.raises(FieldValidationError):
        op.forward(SymTensorField2.zeros(other))


def test_s_invert_accepts_zero_lambda_on_zero_data(euclid):
    bundle = make_fan_bundle(euclid.grid, 4, 4)
    inv = s_invert(euclid, Sinogram(bundle, np.zeros(bundle.n_rays)), reg_lambda=0.0)
    assert inv.iterations == 0
    assert np.all(inv.t_sol.s == 0.0)


def test_s_invert_runs_unregularized_cg(conformal, rng):
    op = RayTransformOperator(conformal, make_fan_bundle(conformal.grid, 8, 8))
    data = op.forward(smooth_phantom(conformal.grid, rng))
    inv = s_invert(conformal, data, reg_lambda=0.0, cg_tol=1e-6, maxiter=5000, op=op)
    assert inv.iterations > 0
    assert np.isfinite(inv.data_residual) and inv.data_residual < 1.0


def test_s_invert_rejects_negative_lambda(euclid):
    bundle = make_fan_bundle(euclid.grid, 4, 4)
    with pytest.raises(ConfigError, match="non-negative"):
        s_invert(euclid, Sinogram(bundle, np.zeros(bundle.n_rays)), reg_lambda=-1e-3)


@pytest.mark.slow
def test_potential_fields_are_nearly_invisible(conformal48, rng):
    grid = conformal48.grid
    op = RayTransformOperator(conformal48, make_fan_bundle(grid, 64, 32))
    sym = SymmetricGradient(conformal48)
    eye = np.eye(2)
    for _ in range(20):
        _, pot = random_potential(conformal48, rng, sym)
        frob = np.linalg.norm(pot.s, axis=(-2, -1))
        reference = op.forward(SymTensorField2(grid, frob[..., None, None] * eye)).values
        ratio = np.max(np.abs(op.forward(pot).values)) / np.max(reference)
        assert ratio <= 3e-2


@pytest.mark.slow
def test_s_invert_recovers_solenoidal_phantom(conformal48, rng):
    grid = conformal48.grid
    truth = solenoidal_decompose(conformal48, smooth_phantom(grid, rng)).t_sol
    op = RayTransformOperator(conformal48, make_fan_bundle(grid, 64, 32))
    inv = s_invert(conformal48, op.forward(truth), reg_lambda=1e-6, op=op)
    mask = grid.in_domain[..., None, None]
    assert relative_error(inv.t_sol.s * mask, truth.s * mask) <= 0.10
