"""Stationarity and rate measurement.

KKT residuals are proximal-gradient fixed-point residuals; the Moreau
envelope gradient norm is the composite analogue evaluated through the
reference prox.  `kkt_sandwich` converts between the two residual types.
`fit_rate` does the log-log least-squares used to verify the empirical
convergence exponents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .metric import Metric
from .prox import Regularizer, moreau_grad, prox


class DiagnosticsError(Exception):
    pass


def kkt_residual(x: np.ndarray, grad_F, r: Regularizer, alpha: float = 1.0) -> float:
    """||x - prox_{alpha r}(x - alpha grad F(x))||_2."""
    x = np.asarray(x, dtype=float)
    step = x - alpha * grad_F(x)
    return float(np.linalg.norm(x - prox(r, alpha, step)))


def kkt_sandwich(alpha_L: float, alpha_theta: float):
    """Two-sided factors relating the prox-gradient and composite residuals.

    Returns (lo, hi) = (1 -/+ alpha_L / (1 - alpha_theta)); valid for
    alpha_theta < 1.
    """
    if alpha_theta >= 1.0:
        raise DiagnosticsError("requires alpha * theta < 1")
    ratio = alpha_L / (1.0 - alpha_theta)
    return 1.0 - ratio, 1.0 + ratio


def me_grad_norm(x: np.ndarray, composite, rho_bar: float, metric: Metric, tol: float = 1e-10) -> float:
    """||rho_bar * M (x - prox of the composite at step 1/rho_bar)||_2."""
    g = moreau_grad(composite, rho_bar, metric, x, tol)
    return float(np.linalg.norm(g))


def dist_to_solution(x: np.ndarray, x_ref: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(x_ref, dtype=float)))


def fgap(x: np.ndarray, value_fn, phi_ref: float, clip_tol: float = 0.0) -> float:
    """phi(x) - phi_ref, clipped below at 0 when inside the reference tolerance."""
    gap = float(value_fn(x)) - phi_ref
    if gap < 0.0:
        if gap < -max(clip_tol, 0.0) - 1e-9 * max(abs(phi_ref), 1.0):
            raise DiagnosticsError(
                f"function gap {gap} below -reference tolerance: reference value is wrong"
            )
        return 0.0
    return gap


@dataclass(frozen=True)
class RateFit:
    k_min: int
    k_max: int
    slope: float
    intercept: float
    rms: float


def fit_rate(ks, values, window_fraction: float = 0.5) -> RateFit:
    """Least-squares slope of log(value) on log(k) over the last window.

    The window covers the final `window_fraction` of the log-k range.
    Requires at least 10 points and positive values inside the window.
    """
    ks = np.asarray(ks, dtype=float)
    values = np.asarray(values, dtype=float)
    if ks.shape != values.shape or ks.ndim != 1:
        raise DiagnosticsError("ks and values must be 1-d arrays of equal length")
    if not 0.0 < window_fraction <= 1.0:
        raise DiagnosticsError("window_fraction must lie in (0, 1]")
    lo = math.exp(
        math.log(ks[-1]) - window_fraction * (math.log(ks[-1]) - math.log(ks[0]))
    )
    mask = ks >= lo
    if int(np.sum(mask)) < 10:
        raise DiagnosticsError("need at least 10 points inside the fit window")
    kw, vw = ks[mask], values[mask]
    if np.any(vw <= 0.0):
        raise DiagnosticsError(
            "nonpositive metric values in the fit window (reference tolerance too loose)"
        )
    X = np.log(kw)
    Y = np.log(vw)
    slope, intercept = np.polyfit(X, Y, 1)
    resid = Y - (slope * X + intercept)
    return RateFit(
        k_min=int(kw[0]),
        k_max=int(kw[-1]),
        slope=float(slope),
        intercept=float(intercept),
        rms=float(np.sqrt(np.mean(resid**2))),
    )
