import numpy as np
import pytest

from helpers.helper_methods import (constant_spread, convergence_orders, fit_log_stability, loglog_slope,
                                    minimal_ratio_constant, pearson, phi_alpha_beta, relative_error, spearman)


def test_phi_vanishes_at_zero_and_increases():
    s = np.array([0.0, 1e-300, 1e-12, 1e-6, 1e-2, 1.0])
    phi = phi_alpha_beta(s, 0.5, 0.5)
    assert phi[0] == 0.0
    assert np.all(np.isfinite(phi))
    assert np.all(np.diff(phi) > 0.0)
    assert phi[-1] == pytest.approx(np.log(3.0) ** -0.5)


def test_stability_fit_on_exact_data():
    x = np.logspace(-8, -1, 12)
    y = 2.0 * phi_alpha_beta(x, 0.4, 0.6)
    fit = fit_log_stability(x, y)
    assert fit["fit_ok"]
    assert fit["residual"] <= 1e-2
    assert 0.0 < fit["beta"] < 1.0
    assert fit["C"] > 0.0


def test_stability_fit_needs_three_pairs():
    fit = fit_log_stability([0.0, 1e-3, 1e-2], [0.0, 0.1, 0.2])
    assert not fit["fit_ok"]
    assert np.isnan(fit["C"])


def test_loglog_slope():
    h = np.array([0.2, 0.1, 0.05])
    assert loglog_slope(h, 3.0 * h ** 2) == pytest.approx(2.0)
    assert np.isnan(loglog_slope([0.1], [1.0]))
    assert np.isnan(loglog_slope([0.1, 0.2], [0.0, 1.0]))


def test_convergence_orders():
    h = [0.1, 0.05, 0.025]
    np.testing.assert_allclose(convergence_orders(h, [1e-2, 2.5e-3, 6.25e-4]), [2.0, 2.0])


def test_ratio_constants():
    assert minimal_ratio_constant([1.0, 3.0], [1.0, 2.0]) == 1.5
    assert np.isnan(minimal_ratio_constant([1.0], [0.0]))
    assert constant_spread([2.0, 4.0], [1.0, 1.0]) == 2.0


def test_correlations():
    x = np.arange(6.0)
    assert spearman(x, x ** 3) == pytest.approx(1.0)
    assert pearson(x, 2.0 * x + 1.0) == pytest.approx(1.0)
    assert np.isnan(spearman([1.0, 2.0], [2.0, 1.0]))
    assert np.isnan(pearson(x, np.ones(6)))


def test_relative_error():
    truth = np.array([3.0, 4.0])
    assert relative_error(truth, truth) == 0.0
    assert relative_error(np.zeros(2), truth) == pytest.approx(1.0)
