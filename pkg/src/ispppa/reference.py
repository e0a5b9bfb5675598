"""Deterministic full-batch reference solver.

Produces the approximate solution x_hat and value phi_hat that the fgap and
distance diagnostics compare against.  Convex problems run an accelerated
proximal-gradient loop with adaptive restart to a KKT tolerance; the
(nonconvex) MCP problem runs proximal gradient from several seeded starts
and keeps the best value, with the proximal-gradient residual as the
stopping metric.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diagnostics import kkt_residual
from .models import Problem
from .prox import prox

REF_MAGIC = b"ISPR1"
REF_CAP = 200_000


class ReferenceError(Exception):
    pass


@dataclass(frozen=True)
class Reference:
    x_hat: np.ndarray
    phi_hat: float
    kkt: float
    kkt_alpha: float


def _fista(problem: Problem, x0: np.ndarray, tol: float, kkt_alpha: float, cap: int = REF_CAP):
    L = problem.L_smooth_full() + (problem.reg.lam1 if problem.reg.kind == "sq_l2" else 0.0)
    theta = problem.reg.theta_bar
    if theta > 0:
        L += theta  # keep the composite step inside the prox validity range
    step = 1.0 / L
    if theta > 0 and step >= 1.0 / theta:
        step = 0.5 / theta
    x = x0.copy()
    y = x0.copy()
    t_mom = 1.0
    check_every = 25
    for it in range(cap):
        g = problem.smooth_grad(y)
        x_next = prox(problem.reg, step, y - step * g)
        if float((y - x_next) @ (x_next - x)) > 0:
            t_mom = 1.0
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom**2))
        y = x_next + ((t_mom - 1.0) / t_next) * (x_next - x)
        x, t_mom = x_next, t_next
        if it % check_every == 0:
            res = kkt_residual(x, problem.smooth_grad, problem.reg, kkt_alpha)
            if res <= tol:
                return x, res
    res = kkt_residual(x, problem.smooth_grad, problem.reg, kkt_alpha)
    if res <= tol:
        return x, res
    raise ReferenceError(f"reference solve stalled at KKT residual {res:.3e} > tol {tol:.3e}")


def reference_solve(
    problem: Problem,
    tol: float = 1e-9,
    kkt_alpha: float | None = None,
    restarts: int = 10,
    seed: int = 0,
) -> Reference:
    """Solve the full-batch problem to a KKT-certified point.

    kkt_alpha defaults to 1 for convex regularizers and to a step inside the
    prox validity range for MCP.
    """
    d = problem.d
    theta = problem.reg.theta_bar
    if kkt_alpha is None:
        kkt_alpha = 1.0 if theta == 0.0 else 0.5 / theta
    if theta == 0.0:
        x, res = _fista(problem, np.zeros(d), tol, kkt_alpha)
        return Reference(x_hat=x, phi_hat=problem.value(x), kkt=res, kkt_alpha=kkt_alpha)
    # weakly convex: multistart, keep the best objective value
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    best = None
    for trial in range(max(restarts, 1)):
        x0 = np.zeros(d) if trial == 0 else rng.standard_normal(d)
        try:
            x, res = _fista(problem, x0, tol, kkt_alpha)
        except ReferenceError:
            continue
        val = problem.value(x)
        if best is None or val < best[1]:
            best = (x, val, res)
    if best is None:
        raise ReferenceError("all reference restarts stalled")
    x, val, res = best
    return Reference(x_hat=x, phi_hat=val, kkt=res, kkt_alpha=kkt_alpha)


def save_reference(ref: Reference, path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(REF_MAGIC)
        fh.write(struct.pack("<Q", ref.x_hat.shape[0]))
        fh.write(struct.pack("<ddd", ref.phi_hat, ref.kkt, ref.kkt_alpha))
        fh.write(np.asarray(ref.x_hat, dtype="<f8").tobytes())


def load_reference(path) -> Reference:
    raw = Path(path).read_bytes()
    if raw[:5] != REF_MAGIC:
        raise ReferenceError("bad magic bytes: not a reference container")
    (d,) = struct.unpack_from("<Q", raw, 5)
    phi_hat, kkt, kkt_alpha = struct.unpack_from("<ddd", raw, 13)
    x_hat = np.frombuffer(raw, dtype="<f8", count=d, offset=13 + 24).copy()
    return Reference(x_hat=x_hat, phi_hat=phi_hat, kkt=kkt, kkt_alpha=kkt_alpha)
