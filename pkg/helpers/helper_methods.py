# helpers/helper_methods.py
import logging
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.optimize import least_squares

# Get a logger for this specific module
log = logging.getLogger(__name__)

ALPHA_BOUNDS = (1e-3, 1.0)
BETA_BOUNDS = (1e-3, 20.0)


# --- Log-type modulus of continuity ---

def phi_alpha_beta(s, alpha: float, beta: float) -> np.ndarray:
    """
    Φ_{α,β}(s) = (log(2 + s^{-α}))^{-β} for s > 0, and Φ(0) = 0.

    Written as exp(−β log log(2 + s^{-α})) with s^{-α} = exp(−α log s), so tiny s does not overflow.
    """
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0.0
    if np.any(pos):
        log_inv = -alpha * np.log(s[pos])
        # log(2 + e^x) = x + log1p(2 e^{-x}) for large x
        inner = np.where(log_inv > 30.0, log_inv + np.log1p(2.0 * np.exp(-np.minimum(log_inv, 700.0))),
                         np.log(2.0 + np.exp(np.minimum(log_inv, 30.0))))
        out[pos] = np.exp(-beta * np.log(inner))
    return out


def fit_log_stability(dtn_diff: Sequence[float], g_diff: Sequence[float]) -> dict:
    """
    Least-squares fit of g_diff ≈ C·Φ_{α,β}(dtn_diff) over the nonzero pairs.

    Returns:
        dict: C, alpha, beta, residual (max |misfit| relative to the data range), fit_ok, in_unit_box.
    """
    x = np.asarray(dtn_diff, dtype=float)
    y = np.asarray(g_diff, dtype=float)
    keep = (x > 0.0) & (y > 0.0)
    failed = {"C": float("nan"), "alpha": float("nan"), "beta": float("nan"), "residual": float("nan"),
              "fit_ok": False, "in_unit_box": False}
    if np.count_nonzero(keep) < 3:
        log.warning(f"Stability fit skipped: only {np.count_nonzero(keep)} usable pairs")
        return failed
    x, y = x[keep], y[keep]

    def _residual(p):
        c, a, b = p
        return c * phi_alpha_beta(x, a, b) - y

    c0 = float(np.max(y) / max(phi_alpha_beta(np.max(x), 0.5, 0.5), 1e-12))
    try:
        sol = least_squares(_residual, x0=[c0, 0.5, 0.5],
                            bounds=([0.0, ALPHA_BOUNDS[0], BETA_BOUNDS[0]], [np.inf, ALPHA_BOUNDS[1], BETA_BOUNDS[1]]))
    except (ValueError, np.linalg.LinAlgError) as e:
        log.error(f"Stability fit failed: {e}", exc_info=True)
        return failed

    c, a, b = (float(v) for v in sol.x)
    span = float(np.max(y) - np.min(y)) or float(np.max(y))
    residual = float(np.max(np.abs(sol.fun)) / span)
    return {
        "C": c,
        "alpha": a,
        "beta": b,
        "residual": residual,
        "fit_ok": bool(sol.success),
        "in_unit_box": bool(0.0 < a < 1.0 and 0.0 < b < 1.0),
    }


# --- Scaling studies ---

def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Slope of the least-squares line through (log x, log y); NaN when fewer than two positive pairs."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0.0) & (y > 0.0)
    if np.count_nonzero(keep) < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)
    return float(slope)


def convergence_orders(spacings: Sequence[float], errors: Sequence[float]) -> list:
    """Observed order between consecutive refinements."""
    h = np.asarray(spacings, dtype=float)
    e = np.asarray(errors, dtype=float)
    return [float(np.log(e[i] / e[i + 1]) / np.log(h[i] / h[i + 1])) for i in range(len(h) - 1)]


def minimal_ratio_constant(values: Sequence[float], model: Sequence[float]) -> float:
    """Smallest C with value ≤ C·model for every sample."""
    v = np.asarray(values, dtype=float)
    m = np.asarray(model, dtype=float)
    keep = m > 0.0
    if not np.any(keep):
        return float("nan")
    return float(np.max(v[keep] / m[keep]))


def constant_spread(values: Sequence[float], model: Sequence[float]) -> float:
    """max/min of value/model: 1 means the fitted constant is the same at every sample."""
    v = np.asarray(values, dtype=float)
    m = np.asarray(model, dtype=float)
    keep = (m > 0.0) & (v > 0.0)
    if np.count_nonzero(keep) < 2:
        return float("nan")
    ratio = v[keep] / m[keep]
    return float(np.max(ratio) / np.min(ratio))


# --- Correlations ---

def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) < 3:
        return float("nan")
    return float(stats.spearmanr(x, y).statistic)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3 or np.std(x) == 0.0 or np.std(y) == 0.0:
        return float("nan")
    return float(stats.pearsonr(x, y).statistic)


def relative_error(estimate: np.ndarray, truth: np.ndarray, weight: np.ndarray = None) -> float:
    """‖estimate − truth‖ / ‖truth‖ in a (weighted) l² sense; absolute error when truth vanishes."""
    diff = np.asarray(estimate) - np.asarray(truth)
    w = 1.0 if weight is None else np.asarray(weight)
    num = np.sqrt(np.sum(w * np.abs(diff) ** 2))
    den = np.sqrt(np.sum(w * np.abs(np.asarray(truth)) ** 2))
    return float(num / den) if den > 0.0 else float(num)
