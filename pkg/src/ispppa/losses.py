"""Loss families and their row-level convex calculus.

Each batch subproblem has a loss part of the form H(Az) with H separable
across rows, H(z) = sum_i w * h_i(z_i).  The dual inner solver needs, per
row family: values, gradients/subgradients, the prox of s*h, the convex
conjugate, and a numerically stable Fenchel gap h(z) + h*(xi) - z*xi.

Scalar helpers for the logistic loss live here too (log1p/exp with the
large-exponent branches handled explicitly).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

try:  # optional scalar-kernel acceleration
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - environment dependent
    _HAVE_NUMBA = False


def logistic_scalar(z):
    """log(1 + exp(z)) elementwise, overflow-safe."""
    return np.logaddexp(0.0, z)


def sigmoid(z):
    # exp(-z) stays inside float range after the clip; 1/(1+huge) underflows
    # gracefully to 0
    return 1.0 / (1.0 + np.exp(np.clip(-np.asarray(z, dtype=float), -700.0, 700.0)))


def _xlogx(q):
    q = np.asarray(q, dtype=float)
    out = np.zeros_like(q)
    pos = q > 0
    out[pos] = q[pos] * np.log(q[pos])
    return out


def _logistic_prox_loop(b, z, sw, t, tol):
    # safeguarded Newton per coordinate on phi'(t) = t - z - sw*b*sigmoid(-b t)
    for i in range(z.shape[0]):
        bi, zi, ti = b[i], z[i], t[i]
        lo = zi if bi > 0 else zi + sw * bi
        hi = zi + sw * bi if bi > 0 else zi
        if ti <= lo or ti >= hi:
            ti = 0.5 * (lo + hi)
        for _ in range(90):
            a = bi * ti
            if a > 700.0:
                a = 700.0
            elif a < -700.0:
                a = -700.0
            sig = 1.0 / (1.0 + math.exp(a))
            g = ti - zi - sw * bi * sig
            if abs(g) <= tol:
                break
            if g > 0.0:
                hi = ti
            else:
                lo = ti
            tn = ti - g / (sw * sig * (1.0 - sig) + 1.0)
            if tn <= lo or tn >= hi:
                tn = 0.5 * (lo + hi)
            ti = tn
        t[i] = ti
    return t


if _HAVE_NUMBA:
    _logistic_prox_loop = _njit(cache=True)(_logistic_prox_loop)


# ---------------------------------------------------------------------------
# row sets
# ---------------------------------------------------------------------------


class RowSet:
    """Separable convex loss on the batch image z = A x."""

    w: float  # common row weight
    exact_prox: bool = True  # closed-form prox (certificates may trust it)

    def value_rows(self, z: np.ndarray) -> np.ndarray:
        """Per-row values w * h_i(z_i)."""
        raise NotImplementedError

    def value(self, z: np.ndarray) -> float:
        return float(np.sum(self.value_rows(z)))

    def grad(self, z: np.ndarray) -> np.ndarray:
        """A gradient (or deterministic subgradient selection) of H at z."""
        raise NotImplementedError

    def prox(self, s: float, z: np.ndarray, init=None) -> np.ndarray:
        """prox of s*H at z, coordinatewise; `init` may warm-start iterative
        solves and is ignored by closed forms."""
        raise NotImplementedError

    def conj_value(self, xi: np.ndarray) -> float:
        """H*(xi); +inf outside the domain."""
        raise NotImplementedError

    def fenchel_gap(self, z: np.ndarray, xi: np.ndarray) -> float:
        """H(z) + H*(xi) - <z, xi>, computed rowwise (nonnegative)."""
        return self.value(z) + self.conj_value(xi) - float(z @ xi)

    def prox_conj(self, t: float, z: np.ndarray, init=None) -> np.ndarray:
        """prox of t*H* via the Moreau decomposition."""
        return z - t * self.prox(1.0 / t, z / t, init=init)

    def subgrad_project(self, z: np.ndarray, desired: np.ndarray) -> np.ndarray:
        """Element of dH(z) closest (coordinatewise) to `desired`."""
        return self.grad(z)

    def curvature_max(self) -> float:
        """Upper bound on the rowwise curvature of H (inf when nonsmooth);
        its reciprocal is the strong-convexity modulus of H*."""
        return math.inf


@dataclass
class ZeroRows(RowSet):
    """Absent loss part: H = 0 on an m-dimensional image."""

    m: int
    w: float = 0.0

    def value_rows(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def value(self, z):
        return 0.0

    def grad(self, z):
        return np.zeros_like(z)

    def prox(self, s, z, init=None):
        return np.asarray(z, dtype=float).copy()

    def conj_value(self, xi):
        return 0.0 if np.all(xi == 0.0) else math.inf

    def fenchel_gap(self, z, xi):
        return 0.0 if np.all(xi == 0.0) else math.inf

    def prox_conj(self, t, z, init=None):
        return np.zeros_like(z)


@dataclass
class SquaredRows(RowSet):
    """h_i(t) = 0.5 (t - b_i)^2 scaled by w."""

    b: np.ndarray
    w: float

    def value_rows(self, z):
        d = z - self.b
        return 0.5 * self.w * d * d

    def curvature_max(self):
        return self.w

    def grad(self, z):
        return self.w * (z - self.b)

    def prox(self, s, z, init=None):
        sw = s * self.w
        return (z + sw * self.b) / (1.0 + sw)

    def conj_value(self, xi):
        return float(np.sum(xi * xi / (2.0 * self.w) + self.b * xi))

    def fenchel_gap(self, z, xi):
        # rowwise 0.5*w*(z - b - xi/w)^2, exact and nonnegative
        d = z - self.b - xi / self.w
        return 0.5 * self.w * float(d @ d)


@dataclass
class LogisticRows(RowSet):
    """h_i(t) = log(1 + exp(-b_i t)) with labels b_i in {-1, +1}, scaled by w."""

    b: np.ndarray
    w: float
    exact_prox: bool = False

    def value_rows(self, z):
        return self.w * logistic_scalar(-self.b * z)

    def curvature_max(self):
        return 0.25 * self.w

    def grad(self, z):
        return self.w * (-self.b) * sigmoid(-self.b * z)

    def prox(self, s, z, init=None):
        # Minimize s w log(1+exp(-b t)) + (t - z)^2 / 2 by safeguarded Newton
        # in t.  The gradient is monotone with curvature >= 1, so the final
        # |phi'| bounds |t - t*| directly.  `init` warm-starts from a nearby
        # solve (successive dual iterations move u only slightly).
        sw = s * self.w
        z = np.asarray(z, dtype=float)
        t = np.array(init, dtype=float) if init is not None else z.copy()
        tol = 1e-12 * (1.0 + float(np.max(np.abs(z))) + sw)
        return _logistic_prox_loop(self.b, z, sw, t, tol)

    def conj_value(self, xi):
        q = -self.b * xi / self.w
        if np.any(q < -1e-12) or np.any(q > 1.0 + 1e-12):
            return math.inf
        q = np.clip(q, 0.0, 1.0)
        return self.w * float(np.sum(_xlogx(q) + _xlogx(1.0 - q)))

    def fenchel_gap(self, z, xi):
        q = -self.b * xi / self.w
        if np.any(q < -1e-12) or np.any(q > 1.0 + 1e-12):
            return math.inf
        q = np.clip(q, 0.0, 1.0)
        t = self.b * z
        per_row = logistic_scalar(-t) + _xlogx(q) + _xlogx(1.0 - q) + t * q
        return self.w * float(np.sum(np.maximum(per_row, 0.0)))


@dataclass
class AbsShiftRows(RowSet):
    """h_i(t) = |t + d_i| scaled by w (prox-linear phase-retrieval rows)."""

    shift: np.ndarray
    w: float
    kink_tol: float = 1e-12

    def value_rows(self, z):
        return self.w * np.abs(z + self.shift)

    def grad(self, z):
        # 0 selected inside the kink, per the deterministic selection rule
        return self.w * np.sign(z + self.shift)

    def prox(self, s, z, init=None):
        t = s * self.w
        u = z + self.shift
        return np.sign(u) * np.maximum(np.abs(u) - t, 0.0) - self.shift

    def conj_value(self, xi):
        if np.any(np.abs(xi) > self.w * (1.0 + 1e-12)):
            return math.inf
        return -float(self.shift @ xi)

    def fenchel_gap(self, z, xi):
        if np.any(np.abs(xi) > self.w * (1.0 + 1e-12)):
            return math.inf
        u = z + self.shift
        per_row = self.w * np.abs(u) - u * xi
        return float(np.sum(np.maximum(per_row, 0.0)))

    def prox_conj(self, t, z, init=None):
        return np.clip(z + t * self.shift, -self.w, self.w)

    def subgrad_project(self, z, desired):
        u = z + self.shift
        g = self.w * np.sign(u)
        at_kink = np.abs(u) <= self.kink_tol
        return np.where(at_kink, np.clip(desired, -self.w, self.w), g)


@dataclass
class MaxQuadRows(RowSet):
    """h_i(t) = max(2 t^2 - b_i, b_i) scaled by w.

    This is |t^2 - b| + t^2, the convexified row of the phase-retrieval
    proximal-point subproblem (the -t^2 part moves into the quadratic).
    """

    b: np.ndarray
    w: float
    kink_tol: float = 1e-12

    def value_rows(self, z):
        return self.w * np.maximum(2.0 * z * z - self.b, self.b)

    def grad(self, z):
        on_quad = z * z >= self.b  # max(2z^2-b, b) switches branch at |z| = sqrt(b)
        return self.w * np.where(on_quad, 4.0 * z, 0.0)

    def curvature_max(self):
        return math.inf  # kinked rows: no dual strong convexity

    def prox(self, s, z, init=None):
        sw = s * self.w
        quad = z / (1.0 + 4.0 * sw)
        root = np.sqrt(np.maximum(self.b, 0.0))
        out = np.where(
            np.abs(quad) >= root,
            quad,
            np.clip(z, -root, root),
        )
        return out

    def conj_value(self, xi):
        u = xi / self.w
        root = np.sqrt(np.maximum(self.b, 0.0))
        outer = u * u / 8.0 + self.b
        inner = root * np.abs(u) - self.b
        per_row = np.where((np.abs(u) >= 4.0 * root) | (self.b <= 0), outer, inner)
        return self.w * float(np.sum(per_row))

    def fenchel_gap(self, z, xi):
        per_h = np.maximum(2.0 * z * z - self.b, self.b)
        u = xi / self.w
        root = np.sqrt(np.maximum(self.b, 0.0))
        per_conj = np.where(
            (np.abs(u) >= 4.0 * root) | (self.b <= 0),
            u * u / 8.0 + self.b,
            root * np.abs(u) - self.b,
        )
        per_row = self.w * (per_h + per_conj) - z * xi
        return float(np.sum(np.maximum(per_row, 0.0)))

    def subgrad_project(self, z, desired):
        root = np.sqrt(np.maximum(self.b, 0.0))
        g = self.grad(z)
        at_pos = np.abs(z - root) <= self.kink_tol * (1.0 + root)
        at_neg = np.abs(z + root) <= self.kink_tol * (1.0 + root)
        hi = 4.0 * self.w * root
        g = np.where(at_pos, np.clip(desired, 0.0, hi), g)
        g = np.where(at_neg, np.clip(desired, -hi, 0.0), g)
        return g


@dataclass
class CurvedRows(RowSet):
    """Base rows plus a per-row quadratic: w h_i(z) + tau/2 (z - c_i)^2.

    Folds the Gram part of the metric-weighted proximal term into the row
    losses, so preconditioned subproblems reuse the identity-metric dual.
    The prox reduces to the base prox with a rescaled step and shifted
    argument.
    """

    base: RowSet
    tau: float
    center: np.ndarray

    def __post_init__(self):
        self.w = self.base.w
        self.exact_prox = self.base.exact_prox

    def value_rows(self, z):
        d = z - self.center
        return self.base.value_rows(z) + 0.5 * self.tau * d * d

    def grad(self, z):
        return self.base.grad(z) + self.tau * (z - self.center)

    def curvature_max(self):
        return self.base.curvature_max() + self.tau

    def prox(self, s, z, init=None):
        st = s * self.tau
        zp = (z + st * self.center) / (1.0 + st)
        return self.base.prox(s / (1.0 + st), zp, init=init)

    def grad_inverse(self, xi, init=None):
        """Solve grad(t) = xi rowwise (the conjugate's gradient)."""
        return self.base.prox(1.0 / self.tau, self.center + xi / self.tau, init=init)

    def conj_value(self, xi):
        t = self.grad_inverse(xi)
        return float(xi @ t - np.sum(self.value_rows(t)))

    def fenchel_gap(self, z, xi):
        t = self.grad_inverse(xi)
        g = self.grad(t)
        per_row = self.value_rows(z) - self.value_rows(t) - g * (z - t)
        return float(np.sum(np.maximum(per_row, 0.0)))

    def subgrad_project(self, z, desired):
        quad = self.tau * (z - self.center)
        return self.base.subgrad_project(z, desired - quad) + quad


# ---------------------------------------------------------------------------
# full-batch smooth losses (for references and diagnostics)
# ---------------------------------------------------------------------------


def logistic_full_value(A, b, x, scale=1.0):
    return scale * float(np.sum(logistic_scalar(-b * (A @ x))))

def logistic_full_grad(A, b, x, scale=1.0):
    return scale * (A.T @ (-b * sigmoid(-b * (A @ x))))


def squared_full_value(A, b, x, scale=1.0):
    r = A @ x - b
    return 0.5 * scale * float(r @ r)

def squared_full_grad(A, b, x, scale=1.0):
    return scale * (A.T @ (A @ x - b))


def phase_retrieval_full_value(A, b, x, scale=1.0):
    z = A @ x
    return scale * float(np.sum(np.abs(z * z - b)))

def phase_retrieval_full_subgrad(A, b, x, scale=1.0):
    """Deterministic subgradient: the 0 element of d|.| at kinks."""
    z = A @ x
    return scale * (A.T @ (np.sign(z * z - b) * 2.0 * z))
