"""Variable-metric (preconditioner) algebra.

A metric M is a self-adjoint positive-definite operator defining the inner
product <x, y>_M = <x, My> used by the proximal steps.  Three families are
supported: the identity, positive diagonals, and the subsampled-Gram family
M = I + c * B^T B built from a batch of data rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class MetricError(Exception):
    """Raised on dimension mismatches or failed M^{-1} solves."""


DENSE_SOLVE_MAX_DIM = 2000
CG_TOL = 1e-12


def _power_iteration(gram_matvec, dim: int, tol: float = 1e-8, max_iter: int = 500):
    """Largest eigenvalue of a PSD operator given through its matvec."""
    rng = np.random.Generator(np.random.Philox(0x5EED_0001))
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = gram_matvec(v)
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
    return lam


def spectral_norm(A: np.ndarray, tol: float = 1e-8) -> float:
    """||A||_2 estimated by power iteration on the smaller Gram side."""
    A = np.asarray(A, dtype=float)
    n, d = A.shape
    if min(n, d) <= 64:
        # eigvalsh on the small Gram side is exact and cheap
        G = A @ A.T if n <= d else A.T @ A
        return math.sqrt(max(float(np.linalg.eigvalsh(G)[-1]), 0.0))
    if n <= d:
        lam = _power_iteration(lambda v: A @ (A.T @ v), n, tol)
    else:
        lam = _power_iteration(lambda v: A.T @ (A @ v), d, tol)
    return math.sqrt(max(lam, 0.0))


@dataclass(frozen=True)
class Metric:
    """Immutable preconditioner; rebuilt each iteration from the batch.

    kind      -- "identity", "diagonal" or "gram" (M = I + c * B^T B)
    d         -- ambient dimension
    c         -- nonnegative Gram scale (alpha * tau)
    B         -- Gram factor, shape (rows, d); only for kind="gram"
    diag      -- positive diagonal; only for kind="diagonal"
    """

    kind: str
    d: int
    c: float = 0.0
    B: np.ndarray | None = None
    diag: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("identity", "diagonal", "gram"):
            raise MetricError(f"unknown metric kind {self.kind!r}")
        if self.d <= 0:
            raise MetricError("dimension must be positive")
        if self.kind == "gram":
            if self.B is None or self.B.ndim != 2 or self.B.shape[1] != self.d:
                raise MetricError("gram metric needs a (rows x d) factor")
            if self.c < 0:
                raise MetricError("gram scale must be nonnegative")
        if self.kind == "diagonal":
            if self.diag is None or self.diag.shape != (self.d,):
                raise MetricError("diagonal metric needs a length-d diagonal")
            if np.any(self.diag <= 0):
                raise MetricError("diagonal entries must be positive")

    def _check_dim(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise MetricError(f"vector of dim {x.shape} incompatible with d={self.d}")
        return x

    def apply(self, x: np.ndarray) -> np.ndarray:
        """M x."""
        x = self._check_dim(x)
        if self.kind == "identity":
            return x
        if self.kind == "diagonal":
            return self.diag * x
        return x + self.c * (self.B.T @ (self.B @ x))

    def norm(self, x: np.ndarray) -> float:
        """M-norm sqrt(<x, Mx>)."""
        x = self._check_dim(x)
        if self.kind == "identity":
            return float(np.linalg.norm(x))
        if self.kind == "diagonal":
            return math.sqrt(float(np.sum(self.diag * x * x)))
        Bx = self.B @ x
        return math.sqrt(max(float(x @ x) + self.c * float(Bx @ Bx), 0.0))

    def inv_apply(self, x: np.ndarray) -> np.ndarray:
        """M^{-1} x by a cached factorization (Woodbury / dense / CG)."""
        x = self._check_dim(x)
        if self.kind == "identity":
            return x
        if self.kind == "diagonal":
            return x / self.diag
        rows = self.B.shape[0]
        if self.c == 0.0:
            return x
        try:
            if rows <= self.d:
                # Woodbury: M^{-1} = I - B^T (I/c + B B^T)^{-1} B
                K = self._cache.get("woodbury")
                if K is None:
                    K = self.B @ self.B.T + np.eye(rows) / self.c
                    np.linalg.cholesky(K)  # PD check up front
                    self._cache["woodbury"] = K
                return x - self.B.T @ np.linalg.solve(K, self.B @ x)
            if self.d <= DENSE_SOLVE_MAX_DIM:
                M = self._cache.get("dense")
                if M is None:
                    M = np.eye(self.d) + self.c * (self.B.T @ self.B)
                    self._cache["dense"] = M
                return np.linalg.solve(M, x)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
            raise MetricError(f"M^-1 solve failed: {exc}") from exc
        return self._cg_solve(x)

    def _cg_solve(self, x: np.ndarray) -> np.ndarray:
        y = np.zeros_like(x)
        r = x - self.apply(y)
        p = r.copy()
        rs = float(r @ r)
        bnorm = math.sqrt(float(x @ x))
        for _ in range(10 * self.d):
            Ap = self.apply(p)
            denom = float(p @ Ap)
            if denom <= 0:
                raise MetricError("CG breakdown: operator not positive-definite")
            a = rs / denom
            y += a * p
            r -= a * Ap
            rs_new = float(r @ r)
            if math.sqrt(rs_new) <= CG_TOL * max(bnorm, 1.0):
                return y
            p = r + (rs_new / rs) * p
            rs = rs_new
        raise MetricError("CG did not converge; metric is ill-conditioned")

    def inv_norm(self, x: np.ndarray) -> float:
        """M^{-1}-norm sqrt(<x, M^{-1}x>)."""
        x = self._check_dim(x)
        return math.sqrt(max(float(x @ self.inv_apply(x)), 0.0))

    def lambda_max(self) -> float:
        """Largest eigenvalue of M (upper bound for Lipschitz estimates)."""
        if self.kind == "identity":
            return 1.0
        if self.kind == "diagonal":
            return float(np.max(self.diag))
        v = self._cache.get("lmax")
        if v is None:
            v = 1.0 + self.c * spectral_norm(self.B) ** 2
            self._cache["lmax"] = v
        return v

    @property
    def mu(self) -> float:
        """mu with mu * ||x||_M <= ||x||_2."""
        if self.kind == "identity":
            return 1.0
        if self.kind == "diagonal":
            return float(np.max(self.diag)) ** -0.5
        return self.lambda_max() ** -0.5

    @property
    def L(self) -> float:
        """L with ||x||_2 <= L * ||x||_M."""
        if self.kind == "identity":
            return 1.0
        if self.kind == "diagonal":
            lo = float(np.min(self.diag))
            return max(lo, 1e-300) ** -0.5
        # gram metrics dominate the identity, so L = 1
        return 1.0


def identity_metric(d: int) -> Metric:
    return Metric(kind="identity", d=d)


def diagonal_metric(diag: np.ndarray) -> Metric:
    diag = np.asarray(diag, dtype=float)
    return Metric(kind="diagonal", d=diag.shape[0], diag=diag)


def build_subsampled(rows: np.ndarray, alpha: float, tau: float) -> Metric:
    """Gram-augmented metric I + alpha*tau * A_S^T A_S from batch rows."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.size == 0:
        raise MetricError("empty batch")
    if alpha <= 0 or tau <= 0:
        raise MetricError("alpha and tau must be positive")
    return Metric(kind="gram", d=rows.shape[1], c=alpha * tau, B=rows)


@dataclass(frozen=True)
class MetricSchedule:
    """Subsampled-Gram schedule alpha_k = alpha0 k^-beta, tau_k = tau0 k^eta.

    Validity needs eta < beta - 1 so that alpha_k * tau_k is summable; the
    accumulated metric-ratio product then stays below nu_bound().
    """

    alpha0: float
    beta: float
    tau0: float
    eta: float
    norm_A: float  # spectral norm of the full data matrix

    def __post_init__(self):
        if self.alpha0 <= 0 or self.tau0 <= 0:
            raise MetricError("alpha0 and tau0 must be positive")
        if not 0.0 <= self.beta <= 1.0:
            raise MetricError("beta must lie in [0, 1]")
        if not self.eta < self.beta - 1.0:
            raise MetricError("schedule requires eta < beta - 1")
        if self.norm_A < 0:
            raise MetricError("norm_A must be nonnegative")

    def alpha_at(self, k: int) -> float:
        return self.alpha0 * float(k) ** (-self.beta)

    def tau_at(self, k: int) -> float:
        return self.tau0 * float(k) ** self.eta

    def alpha_tau(self, k: int) -> float:
        return self.alpha0 * self.tau0 * float(k) ** (self.eta - self.beta)

    def log_ratio_factor(self, k: int) -> float:
        """log of the step-k norm-ratio factor (1 + alpha_k tau_k ||A||^2)^{1/2}."""
        return 0.5 * math.log1p(self.alpha_tau(k) * self.norm_A**2)

    def rho(self, k: int) -> float:
        """Cross-step ratio bound between the M_{k-1}- and M_k-norms (rho_1 = 1)."""
        if k <= 1:
            return 1.0
        return math.exp(self.log_ratio_factor(k - 1))

    def log_nu_bound(self, n_terms: int = 1_000_000) -> float:
        """log of the upper bound exp(||A||^2/2 * sum_k alpha_k tau_k)."""
        p = self.beta - self.eta  # > 1
        ks = np.arange(1, n_terms + 1, dtype=float)
        partial = float(np.sum(ks ** (-p)))
        tail = n_terms ** (1.0 - p) / (p - 1.0)
        series = self.alpha0 * self.tau0 * (partial + tail)
        return 0.5 * self.norm_A**2 * series

    def nu_bound(self) -> float:
        """Finite upper bound on the limiting ratio product nu_infinity.

        Overflows to +inf when the log-space bound exceeds float range; use
        log_nu_bound() for comparisons at experiment scale.
        """
        lb = self.log_nu_bound()
        if lb > 700.0:
            return math.inf
        return math.exp(lb)

    def mu_inf(self) -> float:
        """Uniform lower equivalence constant (1 + alpha0 tau0 ||A||^2)^{-1/2}."""
        return (1.0 + self.alpha0 * self.tau0 * self.norm_A**2) ** -0.5
