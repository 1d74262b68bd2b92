import numpy as np
import pytest

from helpers.field_classes import DomainGrid, FieldValidationError, MetricField, SolverError
from helpers.helper_methods import convergence_orders
from helpers.metric_families import conformal_bump
from helpers.wave_dtn import (BoundarySignal, DtnMatrix, WaveSolver, assemble_dtn, dtn_difference,
                              dtn_operator_norm_dense, h11_gram, make_dtn_basis, select_gamma_sharp,
                              solve_forward, solve_initial_value, solve_with_source)


def _sine_mode(grid):
    x, y = grid.coords
    return (np.sin(np.pi * x) * np.sin(np.pi * y)).ravel()


def test_eigenmode_frequency(unit_square):
    m = MetricField.euclidean(unit_square)
    u0 = _sine_mode(unit_square)
    solver = WaveSolver(m)
    run = solve_initial_value(m, u0, solver.n_steps_for(0.6), solver)
    c = run.history @ u0 / (u0 @ u0)
    k = int(np.argmax(c < 0.0))
    assert k > 0
    # first zero of cos(ωt) by linear interpolation
    t0 = run.dt * (k - 1 + c[k - 1] / (c[k - 1] - c[k]))
    omega = 0.5 * np.pi / t0
    assert omega == pytest.approx(np.pi * np.sqrt(2.0), rel=1e-2)


def test_energy_is_conserved(unit_square):
    m = MetricField.euclidean(unit_square)
    x, y = unit_square.coords
    u0 = (x * (1 - x) * y * (1 - y) * np.exp(x)).ravel()
    solver = WaveSolver(m)
    run = solve_initial_value(m, u0, solver.n_steps_for(2.0), solver)
    drift = np.max(np.abs(run.energies - run.energies[0])) / run.energies[0]
    assert drift <= 1e-3


def test_manufactured_solution_converges_at_second_order():
    errors, spacings = [], []
    for n in (21, 41):
        grid = DomainGrid.box([0.0, 0.0], [1.0, 1.0], n)
        m = MetricField.euclidean(grid)
        mode = _sine_mode(grid)
        solver = WaveSolver(m)
        n_steps = solver.n_steps_for(1.0)

        def source(k):
            t = k * solver.dt
            return (6.0 * t + 2.0 * np.pi ** 2 * t ** 3) * mode

        run = solve_with_source(m, source, n_steps, solver)
        t_end = n_steps * solver.dt
        inside = grid.interior_mask.ravel()
        errors.append(np.max(np.abs(run.history[-1] - t_end ** 3 * mode)[inside]))
        spacings.append(grid.spacing[0])
    assert convergence_orders(spacings, errors)[0] >= 1.8


def test_source_must_vanish_initially(unit_square):
    m = MetricField.euclidean(unit_square)
    mode = _sine_mode(unit_square)
    with pytest.raises(FieldValidationError, match="vanish"):
        solve_with_source(m, lambda k: mode, 4)


def test_cfl_violation_is_rejected(unit_square):
    m = MetricField.euclidean(unit_square)
    with pytest.raises(SolverError, match="CFL"):
        WaveSolver(m, dt=unit_square.spacing[0])


def test_boundary_signal_must_start_at_zero(small_grid):
    n_bnd = small_grid.boundary_index.size
    with pytest.raises(FieldValidationError, match="t = 0"):
        BoundarySignal(0.01, np.ones((5, n_bnd)))
    with pytest.raises(FieldValidationError):
        BoundarySignal(0.01, np.zeros(5))


def test_forward_solution_is_zero_before_the_pulse(euclid):
    solver = WaveSolver(euclid)
    basis = make_dtn_basis(euclid.grid, solver.dt, 1.0, 2, 2)
    late = basis[1]
    res = solve_forward(euclid, late, solver, report_ratio=True)
    first = int(np.argmax(np.any(late.values != 0.0, axis=1)))
    assert first > 1
    assert np.all(res.trace[:first] == 0.0)
    assert res.trace_ratio > 0.0


def test_gamma_sharp_selection(small_grid):
    gm = small_grid.gamma_minus()
    half = select_gamma_sharp(small_grid, 0.5)
    assert set(half.tolist()) <= set(gm.tolist())
    assert half.size == int(round(0.5 * gm.size))
    np.testing.assert_array_equal(select_gamma_sharp(small_grid, 1.0), gm)
    with pytest.raises(FieldValidationError):
        select_gamma_sharp(small_grid, 0.0)


def test_gamma_sharp_outside_gamma_minus_is_rejected(small_grid):
    outside = np.setdiff1d(np.arange(small_grid.boundary_index.size), small_grid.gamma_minus())
    with pytest.raises(FieldValidationError, match="Γ₋"):
        DtnMatrix(small_grid, 0.01, outside[:2], np.zeros((1, 3, 2)))


def test_equal_metrics_have_equal_dtn_maps(euclid):
    comp = dtn_difference(euclid, euclid, 1.0, 2, 2)
    assert comp.diff_norm == 0.0
    assert comp.method == "power"
    assert comp.base_norm > 0.0
    assert comp.relative == 0.0


def test_power_iteration_matches_dense_norm():
    grid = DomainGrid.ball(2, 24)
    e = MetricField.euclidean(grid)
    g = conformal_bump(grid, 0.1)
    T = 1.5
    comp = dtn_difference(g, e, T, 4, 2)
    basis = make_dtn_basis(grid, comp.dtn1.dt, T, 4, 2)
    dense = dtn_operator_norm_dense(comp.dtn1 - comp.dtn2, h11_gram(basis, grid))
    assert comp.diff_norm > 0.0
    assert comp.diff_norm == pytest.approx(dense.value, rel=1e-3)


def test_dtn_is_linear_in_the_input(euclid):
    solver = WaveSolver(euclid)
    basis = make_dtn_basis(euclid.grid, solver.dt, 1.0, 2, 1)
    gamma_sharp = select_gamma_sharp(euclid.grid)
    dtn = assemble_dtn(euclid, basis, gamma_sharp, solver)
    combined = BoundarySignal(solver.dt, basis[0].values + 2.0 * basis[1].values)
    trace = solve_forward(euclid, combined, solver, gamma_sharp).trace
    np.testing.assert_allclose(trace, dtn.outputs[0] + 2.0 * dtn.outputs[1], atol=1e-10)
