"""Outer stochastic loop: sampling, schedules, dispatch, trace recording.

Each iteration draws an i.i.d. minibatch, builds the per-iteration metric,
solves the proximal subproblem to the scheduled accuracy, and logs a thinned
trace.  Runs are deterministic given (problem, schedule, K, m, seed): the
generator is counter-based (Philox) keyed by the seed entropy.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .metric import Metric, build_subsampled, identity_metric
from .models import Problem
from .subproblem import SubproblemError, SubproblemInstance, solve_closed_form, solve_dual

STEPSIZE_KINDS = ("constant", "polynomial", "lipschitz_regularized")
EPS_KINDS = ("quadratic", "three_halves", "zero")
PRECOND_KINDS = ("identity", "subsampled")


class SolverError(Exception):
    pass


@dataclass(frozen=True)
class Schedule:
    """Stepsize, inner accuracy, and preconditioner schedules."""

    stepsize: str
    alpha0: float
    beta: float = 0.0
    eps_kind: str = "quadratic"
    gamma: float = 0.0
    precond: str = "identity"
    tau0: float = 0.0
    eta: float = 0.0

    def __post_init__(self):
        if self.stepsize not in STEPSIZE_KINDS:
            raise SolverError(f"unknown stepsize kind {self.stepsize!r}")
        if self.eps_kind not in EPS_KINDS:
            raise SolverError(f"unknown eps kind {self.eps_kind!r}")
        if self.precond not in PRECOND_KINDS:
            raise SolverError(f"unknown preconditioner kind {self.precond!r}")
        if self.alpha0 <= 0:
            raise SolverError("alpha0 must be positive")
        if self.stepsize != "constant" and not 0.0 <= self.beta <= 1.0:
            raise SolverError("beta must lie in [0, 1]")
        if self.gamma < 0:
            raise SolverError("gamma must be nonnegative")
        if self.precond == "subsampled":
            if self.tau0 <= 0:
                raise SolverError("subsampled preconditioner needs tau0 > 0")
            if not self.eta < self.beta - 1.0:
                raise SolverError("subsampled preconditioner needs eta < beta - 1")


def stepsize_at(schedule: Schedule, k: int, x_norm: float = 0.0, g_lip=None) -> float:
    if k < 1:
        raise SolverError("iterations are 1-indexed")
    if schedule.stepsize == "constant":
        return schedule.alpha0
    base = schedule.alpha0 * float(k) ** (-schedule.beta)
    if schedule.stepsize == "polynomial":
        return base
    growth = g_lip(x_norm) if g_lip is not None else x_norm
    return base / max(1.0, growth)


def eps_at(schedule: Schedule, alpha_k: float) -> float:
    if schedule.eps_kind == "zero":
        return 0.0
    if schedule.eps_kind == "quadratic":
        return schedule.gamma * alpha_k**2
    return schedule.gamma * alpha_k**1.5


@dataclass
class IterateTrace:
    """Thinned per-iteration log plus the final iterate.

    Snapshots hold x_k as it enters iteration k; `store_all` runs keep every
    iterate (needed by stepsize-weighted output sampling).
    """

    ks: np.ndarray
    alphas: np.ndarray
    epss: np.ndarray
    inner_iters: np.ndarray
    wall_ms: np.ndarray
    log_nu: np.ndarray
    batch_indices: list
    snapshots: dict
    x_final: np.ndarray
    K: int
    m: int
    seed: object
    schedule: Schedule
    max_x_norm: float
    alphas_full: np.ndarray | None = None
    snapshots_all: np.ndarray | None = None

    def snapshot(self, k: int) -> np.ndarray:
        if k in self.snapshots:
            return self.snapshots[k]
        if self.snapshots_all is not None:
            return self.snapshots_all[k - 1]
        raise SolverError(f"iterate {k} not stored (thinned trace)")


def record_points(K: int, dense_upto: int = 100, log_points: int = 300) -> np.ndarray:
    """All k <= dense_upto plus ~log_points geometrically spaced beyond."""
    ks = np.arange(1, min(dense_upto, K) + 1)
    if K > dense_upto:
        tail = np.unique(np.geomspace(dense_upto + 1, K, log_points).astype(int))
        ks = np.unique(np.concatenate([ks, tail, [K]]))
    return ks


def run(
    problem: Problem,
    schedule: Schedule,
    m: int,
    K: int,
    seed,
    x1: np.ndarray | None = None,
    store_all: bool = False,
    record_dense: int = 100,
    record_log: int = 300,
) -> IterateTrace:
    """Model-based inexact stochastic preconditioned proximal point loop."""
    if K < 1 or m < 1:
        raise SolverError("K and m must be >= 1")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    n, d = problem.n, problem.d
    x = np.zeros(d) if x1 is None else np.asarray(x1, dtype=float).copy()
    g_lip = problem.model.g_lip
    norm_A = problem.norm_A if schedule.precond == "subsampled" else 0.0

    rec = set(int(k) for k in record_points(K, record_dense, record_log))
    ks, alphas, epss, inner, wall, lognus, batches = [], [], [], [], [], [], []
    snapshots: dict[int, np.ndarray] = {}
    alphas_full = np.zeros(K) if store_all else None
    snaps_all = np.zeros((K, d)) if store_all else None
    log_nu = 0.0
    max_norm = 0.0
    closed_form_ok = problem.model.kind == "subgradient" and schedule.precond == "identity"
    if schedule.eps_kind == "zero" and not closed_form_ok:
        raise SolverError("exact mode (eps = 0) needs a closed-form subproblem")
    t0 = time.perf_counter()

    for k in range(1, K + 1):
        idx = rng.integers(0, n, size=m)
        x_norm = float(np.linalg.norm(x))
        max_norm = max(max_norm, x_norm)
        alpha_k = stepsize_at(schedule, k, x_norm, g_lip)
        eps_k = eps_at(schedule, alpha_k)
        if schedule.precond == "subsampled":
            tau_k = schedule.tau0 * float(k) ** schedule.eta
            metric = build_subsampled(problem.A[idx], alpha_k, tau_k)
            log_nu += 0.5 * math.log1p(alpha_k * tau_k * norm_A**2)
        else:
            metric = identity_metric(d)

        if store_all:
            alphas_full[k - 1] = alpha_k
            snaps_all[k - 1] = x
        if k in rec:
            ks.append(k)
            alphas.append(alpha_k)
            epss.append(eps_k)
            lognus.append(log_nu)
            batches.append(idx.copy())
            snapshots[k] = x.copy()

        try:
            inst = SubproblemInstance(mb=problem.minibatch(x, idx), reg=problem.reg,
                                      metric=metric, alpha=alpha_k)
        except SubproblemError as exc:
            raise SolverError(f"stepsize infeasible at k={k}: {exc}") from exc
        if closed_form_ok:
            x = solve_closed_form(inst)
            it_count = 0
        else:
            x, cert = solve_dual(inst, eps_k)
            it_count = cert.iterations
        if k in rec:
            inner.append(it_count)
            wall.append((time.perf_counter() - t0) * 1e3)

    return IterateTrace(
        ks=np.array(ks, dtype=int),
        alphas=np.array(alphas),
        epss=np.array(epss),
        inner_iters=np.array(inner, dtype=int),
        wall_ms=np.array(wall),
        log_nu=np.array(lognus),
        batch_indices=batches,
        snapshots=snapshots,
        x_final=x.copy(),
        K=K,
        m=m,
        seed=seed,
        schedule=schedule,
        max_x_norm=max(max_norm, float(np.linalg.norm(x))),
        alphas_full=alphas_full,
        snapshots_all=snaps_all,
    )


def sample_output(trace: IterateTrace, seed) -> np.ndarray:
    """Draw x_{k*} with P{k* = k} proportional to alpha_k over k in [K]."""
    if trace.alphas_full is None or trace.snapshots_all is None:
        raise SolverError("output sampling needs a run with store_all=True")
    w = trace.alphas_full / np.sum(trace.alphas_full)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    i = int(rng.choice(trace.K, p=w))
    return trace.snapshots_all[i].copy()
