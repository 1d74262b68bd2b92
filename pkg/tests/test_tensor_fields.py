import numpy as np
import pytest

from helpers.field_classes import FieldValidationError, MetricField, SymTensorField2, VectorFieldV
from helpers.metric_families import bump_profile, support_radius_limit
from helpers.tensor_fields import (SymmetricGradient, divergence_sym, random_potential, recover_v_from_tsol,
                                   semi_geodesic_residual, smooth_phantom, solenoidal_decompose, sym_gradient,
                                   tensor_inner, tensor_norm, tensor_norms)


def test_potential_field_has_no_solenoidal_part(conformal, rng):
    op = SymmetricGradient(conformal)
    _, pot = random_potential(conformal, rng, op)
    split = solenoidal_decompose(conformal, pot, op=op)
    assert tensor_norms(split.t_sol)["l2"] <= 1e-5 * tensor_norms(pot)["l2"]


def test_decomposition_residuals(conformal, rng):
    t = smooth_phantom(conformal.grid, rng)
    split = solenoidal_decompose(conformal, t, cg_tol=1e-12)
    assert split.iterations > 0
    assert split.orthogonality_residual <= 1e-8
    assert split.divergence_residual <= 1e-8
    assert split.reassembly_residual <= 1e-12
    # the solenoidal part is divergence free as a field too
    div = divergence_sym(conformal, split.t_sol)
    assert np.linalg.norm(div.v) <= 1e-6 * np.linalg.norm(divergence_sym(conformal, t).v)


def test_zero_tensor_splits_trivially(conformal):
    split = solenoidal_decompose(conformal, SymTensorField2.zeros(conformal.grid))
    assert split.iterations == 0
    assert np.all(split.t_sol.s == 0.0)
    assert np.all(split.v.v == 0.0)


def test_sym_gradient_is_symmetric(conformal, rng):
    v, pot = random_potential(conformal, rng)
    np.testing.assert_allclose(pot.s, np.swapaxes(pot.s, -1, -2))
    assert tensor_inner(pot, pot) > 0.0
    np.testing.assert_allclose(sym_gradient(conformal, v).s, pot.s)


def test_tensor_norms_of_zero(small_grid):
    norms = tensor_norms(SymTensorField2.zeros(small_grid))
    assert norms == {"l2": 0.0, "c0": 0.0, "c2": 0.0, "h2": 0.0}


def test_tensor_norm_kinds(small_grid, rng):
    t = smooth_phantom(small_grid, rng)
    norms = tensor_norms(t)
    assert tensor_norm(t, "C2") == norms["c2"]
    assert norms["c2"] >= norms["c0"] > 0.0
    assert norms["h2"] >= norms["l2"] > 0.0
    with pytest.raises(FieldValidationError, match="unknown norm"):
        tensor_norm(t, "sup")


def test_recover_v_needs_semi_geodesic_metric(conformal):
    assert semi_geodesic_residual(conformal) > 1e-3
    with pytest.raises(FieldValidationError, match="semi-geodesic"):
        recover_v_from_tsol(conformal, SymTensorField2.zeros(conformal.grid))


def test_recover_v_of_zero_tensor(euclid):
    v = recover_v_from_tsol(euclid, SymTensorField2.zeros(euclid.grid))
    assert isinstance(v, VectorFieldV)
    assert np.all(v.v == 0.0)


def test_divergence_is_adjoint_of_sym_gradient(conformal, rng):
    grid = conformal.grid
    op = SymmetricGradient(conformal)
    v = op.vector_field(rng.standard_normal(op.n_unknowns))
    a = rng.standard_normal(grid.shape + (2, 2))
    t = SymTensorField2(grid, a + np.swapaxes(a, -1, -2))
    lhs = tensor_inner(sym_gradient(conformal, v, op), t)
    rhs = grid.cell_volume * np.sum(v.v * divergence_sym(conformal, t, op).v)
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_decomposition_is_idempotent(conformal, rng):
    op = SymmetricGradient(conformal)
    once = solenoidal_decompose(conformal, smooth_phantom(conformal.grid, rng), cg_tol=1e-12, op=op).t_sol
    twice = solenoidal_decompose(conformal, once, cg_tol=1e-12, op=op).t_sol
    assert tensor_norms(twice - once)["l2"] <= 1e-7 * tensor_norms(once)["l2"]


def test_euclidean_sym_gradient_of_position_is_identity(euclid):
    grid = euclid.grid
    v = VectorFieldV(grid, grid.points.reshape(grid.shape + (2,)))
    t = sym_gradient(euclid, v)
    deep = np.linalg.norm(grid.points, axis=-1).reshape(grid.shape) < 0.7
    np.testing.assert_allclose(t.s[deep], np.broadcast_to(np.eye(2), t.s[deep].shape), atol=1e-12)


def test_recover_v_on_box_with_unit_normal_component(unit_square):
    box = MetricField.euclidean(unit_square)
    s = np.zeros(unit_square.shape + (2, 2))
    s[..., 1, 1] = 1.0
    v = recover_v_from_tsol(box, SymTensorField2(unit_square, s))
    y = unit_square.points[:, 1].reshape(unit_square.shape)
    np.testing.assert_allclose(v.v[..., 1], -y, atol=1e-12)
    np.testing.assert_allclose(v.v[..., 0], 0.0, atol=1e-12)


def test_recover_v_returns_the_gauge_field(grid48):
    # t_sol = f e1⊗e1 − ∇_sym v* with v* vanishing near the boundary gives back v*
    euclid = MetricField.euclidean(grid48)
    op = SymmetricGradient(euclid)
    bump = bump_profile(grid48.points, grid48.center, 0.5).reshape(grid48.shape)
    v_star = VectorFieldV(grid48, bump[..., None] * np.array([0.3, -0.5]))
    s = np.zeros(grid48.shape + (2, 2))
    s[..., 0, 0] = bump
    t_sol = SymTensorField2(grid48, s) - sym_gradient(euclid, v_star, op)
    v = recover_v_from_tsol(euclid, t_sol)
    error = np.max(np.abs(v.v - v_star.v))
    assert error <= 0.1 * np.max(np.abs(v_star.v))



@pytest.mark.slow
def test_block_tensor_round_trip(grid48):
    # t = bump e1⊗e1 has t_jn = 0, so t_sol + ∇_sym v should give it back
    euclid = MetricField.euclidean(grid48)
    bump = bump_profile(grid48.points, grid48.center, 0.8 * support_radius_limit(grid48)).reshape(grid48.shape)
    s = np.zeros(grid48.shape + (2, 2))
    s[..., 0, 0] = bump
    t = SymTensorField2(grid48, s)
    op = SymmetricGradient(euclid)
    t_sol = solenoidal_decompose(euclid, t, op=op).t_sol
    v = recover_v_from_tsol(euclid, t_sol)
    t_hat = t_sol + sym_gradient(euclid, v, op)
    mask = grid48.in_domain[..., None, None]
    error = np.linalg.norm((t_hat.s - t.s) * mask) / np.linalg.norm(t.s * mask)
    assert error <= 0.15
