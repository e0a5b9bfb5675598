"""Proximal calculus: regularizers, Moreau envelopes, and reference solves.

The regularizer zoo is separable, so every prox is a coordinatewise closed
form.  `prox_oracle` is the high-accuracy reference minimizer of a composite
f(y) + ||y - x||_M^2 / (2 alpha) used to certify inexact solves and to
evaluate Moreau-envelope gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .metric import Metric, identity_metric


class ProxError(Exception):
    pass


# ---------------------------------------------------------------------------
# regularizers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Regularizer:
    """Separable penalty r(x).

    kinds: "zero"; "l1" (lam1 * ||x||_1); "mcp" with parameters (lam1, lam2),
    weakly convex with modulus 1/lam2; "sq_l2" (lam1/2 * ||x||_2^2).
    """

    kind: str
    lam1: float = 0.0
    lam2: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "l1", "mcp", "sq_l2"):
            raise ProxError(f"unknown regularizer kind {self.kind!r}")
        if self.kind in ("l1", "mcp", "sq_l2") and self.lam1 < 0:
            raise ProxError("lam1 must be nonnegative")
        if self.kind == "mcp" and self.lam2 <= 0:
            raise ProxError("mcp needs lam2 > 0")

    @property
    def theta_bar(self) -> float:
        """Weak-convexity modulus of r."""
        return 1.0 / self.lam2 if self.kind == "mcp" else 0.0

    def value(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return 0.0
        if self.kind == "l1":
            return self.lam1 * float(np.sum(np.abs(x)))
        if self.kind == "sq_l2":
            return 0.5 * self.lam1 * float(x @ x)
        a = np.abs(x)
        inner = self.lam1 * a - a * a / (2.0 * self.lam2)
        flat = 0.5 * self.lam2 * self.lam1**2
        return float(np.sum(np.where(a <= self.lam1 * self.lam2, inner, flat)))


def zero_reg() -> Regularizer:
    return Regularizer("zero")


def l1_reg(lam1: float) -> Regularizer:
    return Regularizer("l1", lam1=lam1)


def mcp_reg(lam1: float, lam2: float) -> Regularizer:
    return Regularizer("mcp", lam1=lam1, lam2=lam2)


def sq_l2_reg(lam: float) -> Regularizer:
    return Regularizer("sq_l2", lam1=lam)


def _check_alpha(r: Regularizer, alpha: float) -> None:
    if alpha <= 0:
        raise ProxError("prox step must be positive")
    if r.theta_bar > 0 and alpha >= 1.0 / r.theta_bar:
        raise ProxError(
            f"step {alpha} outside validity range (0, {1.0 / r.theta_bar}) "
            f"for weakly convex regularizer"
        )


def prox(r: Regularizer, alpha: float, x: np.ndarray) -> np.ndarray:
    """Unique minimizer of r(y) + ||y - x||^2 / (2 alpha), coordinatewise."""
    _check_alpha(r, alpha)
    x = np.asarray(x, dtype=float)
    if r.kind == "zero":
        return x.copy()
    if r.kind == "l1":
        t = alpha * r.lam1
        return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)
    if r.kind == "sq_l2":
        return x / (1.0 + alpha * r.lam1)
    # MCP firm threshold, valid for alpha < lam2.  Ties at both regime
    # boundaries resolve with <= toward the shrunken branch.
    a = np.abs(x)
    t = alpha * r.lam1
    shrunk = np.sign(x) * (a - t) * (r.lam2 / (r.lam2 - alpha))
    out = np.where(a <= t, 0.0, np.where(a <= r.lam1 * r.lam2, shrunk, x))
    return out


def moreau_env(r: Regularizer, alpha: float, x: np.ndarray) -> float:
    """Moreau envelope value r(p) + ||p - x||^2/(2 alpha) at p = prox."""
    p = prox(r, alpha, x)
    d = p - np.asarray(x, dtype=float)
    return r.value(p) + float(d @ d) / (2.0 * alpha)


def reg_subgradient_interval(r: Regularizer, x: np.ndarray):
    """Per-coordinate bounds [lo, hi] of the regular subdifferential of r."""
    x = np.asarray(x, dtype=float)
    if r.kind == "zero":
        z = np.zeros_like(x)
        return z, z.copy()
    if r.kind == "sq_l2":
        g = r.lam1 * x
        return g, g.copy()
    if r.kind == "l1":
        g = r.lam1 * np.sign(x)
        lo = np.where(x == 0.0, -r.lam1, g)
        hi = np.where(x == 0.0, r.lam1, g)
        return lo, hi
    # mcp: d/dt (lam1|t| - t^2/(2 lam2)) inside, 0 on the flat region
    a = np.abs(x)
    inner = r.lam1 * np.sign(x) - x / r.lam2
    g = np.where(a <= r.lam1 * r.lam2, inner, 0.0)
    lo = np.where(x == 0.0, -r.lam1, g)
    hi = np.where(x == 0.0, r.lam1, g)
    return lo, hi


# ---------------------------------------------------------------------------
# composite handles and the reference prox oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SmoothPlusProx:
    """Composite f(y) = smooth(y) + reg(y) with an L-smooth first part.

    smooth_value / smooth_grad are callables on vectors; L_smooth is a global
    Lipschitz constant of the gradient; tau_bar is the weak-convexity modulus
    of the composite (reg.theta_bar when the smooth part is convex).
    """

    smooth_value: callable
    smooth_grad: callable
    L_smooth: float
    reg: Regularizer
    tau_bar: float = 0.0

    def value(self, y: np.ndarray) -> float:
        return float(self.smooth_value(y)) + self.reg.value(y)


@dataclass(frozen=True)
class ProxQuery:
    """Validated prox request; rejects steps above the weak-convexity limit."""

    target: object  # Regularizer or composite handle
    alpha: float
    metric: Metric
    anchor: np.ndarray

    def __post_init__(self):
        theta = getattr(self.target, "theta_bar", None)
        if theta is None:
            theta = getattr(self.target, "tau_bar", 0.0)
        tau = self.metric.L**2 * theta
        if self.alpha <= 0:
            raise ProxError("step must be positive")
        if tau > 0 and self.alpha >= 1.0 / tau:
            raise ProxError(f"step {self.alpha} >= 1/tau = {1.0 / tau}: prox may be multivalued")


PROX_ORACLE_CAP = 1_000_000


def prox_oracle(
    f,
    alpha: float,
    metric: Metric,
    x_bar: np.ndarray,
    tol: float = 1e-10,
) -> np.ndarray:
    """High-accuracy minimizer of f(y) + ||y - x_bar||_M^2 / (2 alpha).

    Deterministic accelerated proximal-gradient loop on the smooth + prox
    split with a fixed step 1/(L_smooth + lambda_max(M)/alpha); terminates
    when the fixed-point residual certifies ||y - y*||_2 <= tol.  Composites
    without a smooth + prox split (composition losses) are dispatched to the
    certified dual solver.
    """
    x_bar = np.asarray(x_bar, dtype=float)
    if isinstance(f, Regularizer):
        if metric.kind == "identity":
            return prox(f, alpha, x_bar)
        f = SmoothPlusProx(lambda y: 0.0, lambda y: np.zeros_like(y), 0.0, f, f.theta_bar)
    if not isinstance(f, SmoothPlusProx):
        # composition-type composite: certified dual solve (lazy import)
        from .subproblem import solve_composition_prox

        return solve_composition_prox(f, alpha, metric, x_bar, tol)

    ProxQuery(f, alpha, metric, x_bar)
    lmax = metric.lambda_max()
    L_tot = f.L_smooth + lmax / alpha
    sigma = (1.0 - f.tau_bar * metric.L**2 * alpha) / alpha  # strong convexity, l2
    if sigma <= 0:
        raise ProxError("composite not strongly convex at this step")
    step = 1.0 / L_tot
    # fixed-point residual threshold ensuring ||y - y*|| <= tol
    fp_tol = tol * sigma * step / (1.0 + step * L_tot) * 0.9

    def grad_smooth_total(y):
        return f.smooth_grad(y) + metric.apply(y - x_bar) / alpha

    y = x_bar.copy()
    y_prev = y.copy()
    t_momentum = 1.0
    for it in range(PROX_ORACLE_CAP):
        z = y + ((t_momentum - 1.0) / t_momentum) * (y - y_prev) if it else y
        y_next = prox(f.reg, step, z - step * grad_smooth_total(z))
        res = float(np.linalg.norm(y_next - z))
        if res <= fp_tol and it:
            return y_next
        # gradient-mapping restart keeps the loop monotone enough
        if float((z - y_next) @ (y_next - y)) > 0:
            t_momentum = 1.0
        else:
            t_momentum = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_momentum**2))
        y_prev = y
        y = y_next
    raise ProxError("prox_oracle hit the iteration cap; step too close to 1/tau")


def composite_moreau_env(f, alpha: float, metric: Metric, x: np.ndarray, tol: float = 1e-11) -> float:
    """Envelope value f(p) + ||p - x||_M^2/(2 alpha) at the oracle prox p."""
    p = prox_oracle(f, alpha, metric, x, tol)
    d = p - np.asarray(x, dtype=float)
    return f.value(p) + metric.norm(d) ** 2 / (2.0 * alpha)


def moreau_grad(
    f,
    rho_bar: float,
    metric: Metric,
    x: np.ndarray,
    tol: float = 1e-11,
) -> np.ndarray:
    """Gradient of the Moreau envelope with step 1/rho_bar in the M-norm.

    Equals rho_bar * M (x - prox), with the prox computed by the oracle.
    """
    if rho_bar <= 0:
        raise ProxError("rho_bar must be positive")
    p = prox_oracle(f, 1.0 / rho_bar, metric, x, tol)
    return rho_bar * metric.apply(np.asarray(x, dtype=float) - p)
