"""Jitted inner dual loop for smooth-row subproblems.

Mirrors subproblem._solve_dual_form operation for operation, restricted to
the structures that dominate experiment runtime: logistic or squared rows
(optionally carrying the folded Gram curvature) with a separable regularizer
prox and an optional affine shift.  The generic numpy loop remains the
reference implementation and the fallback when numba is unavailable; a
parity test pins the two together.

Row codes: 1 = squared, 2 = logistic.  Regularizer codes: 0 = zero, 1 = l1,
2 = sq_l2, 3 = mcp.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - environment dependent
    HAVE_NUMBA = False

    def njit(*a, **k):  # noqa: D103
        def wrap(fn):
            return fn

        return wrap


@njit(cache=True)
def _prox_reg(code, p1, p2, alpha, v, out):
    # p1, p2: (lam1, lam2) for mcp; lam1 for l1/sq_l2
    d = v.shape[0]
    if code == 0:
        for i in range(d):
            out[i] = v[i]
    elif code == 1:
        t = alpha * p1
        for i in range(d):
            a = abs(v[i]) - t
            out[i] = (a if a > 0.0 else 0.0) * (1.0 if v[i] >= 0 else -1.0)
    elif code == 2:
        c = 1.0 / (1.0 + alpha * p1)
        for i in range(d):
            out[i] = c * v[i]
    else:
        t = alpha * p1
        flat = p1 * p2
        c = p2 / (p2 - alpha)
        for i in range(d):
            a = abs(v[i])
            if a <= t:
                out[i] = 0.0
            elif a <= flat:
                out[i] = (a - t) * c * (1.0 if v[i] >= 0 else -1.0)
            else:
                out[i] = v[i]
    return out


@njit(cache=True)
def _row_grad(code, b, w, tau, center, z, out):
    m = z.shape[0]
    for i in range(m):
        if code == 1:
            g = w * (z[i] - b[i])
        else:
            a = b[i] * z[i]
            if a > 700.0:
                a = 700.0
            elif a < -700.0:
                a = -700.0
            g = w * (-b[i]) / (1.0 + math.exp(a))
        if tau > 0.0:
            g += tau * (z[i] - center[i])
        out[i] = g
    return out


@njit(cache=True)
def _row_val(code, b, w, tau, center, z, out):
    m = z.shape[0]
    for i in range(m):
        if code == 1:
            d = z[i] - b[i]
            v = 0.5 * w * d * d
        else:
            a = -b[i] * z[i]
            if a > 33.0:
                v = w * a
            elif a < -33.0:
                v = w * math.exp(a)
            else:
                v = w * math.log1p(math.exp(a))
        if tau > 0.0:
            dc = z[i] - center[i]
            v += 0.5 * tau * dc * dc
        out[i] = v
    return out


@njit(cache=True)
def _row_prox(code, b, w, tau, center, s, z, t, tol_scale):
    # prox of s * (w h + tau/2 (. - c)^2) at z; t carries the warm start in
    # and the solution out
    m = z.shape[0]
    for i in range(m):
        zi = z[i]
        si = s
        if tau > 0.0:
            st = s * tau
            zi = (zi + st * center[i]) / (1.0 + st)
            si = s / (1.0 + st)
        if code == 1:
            sw = si * w
            t[i] = (zi + sw * b[i]) / (1.0 + sw)
        else:
            sw = si * w
            bi = b[i]
            lo = zi if bi > 0 else zi + sw * bi
            hi = zi + sw * bi if bi > 0 else zi
            ti = t[i]
            if ti <= lo or ti >= hi:
                ti = 0.5 * (lo + hi)
            tol = 1e-12 * (1.0 + abs(zi) + sw) * tol_scale
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


@njit(cache=True)
def dual_loop(
    A,            # (m, d) C-contiguous
    AT,           # (d, m) C-contiguous copy of A.T
    x_bar,        # (d,)
    row_code,     # 1 squared, 2 logistic
    b,            # (m,) row targets
    w,            # row weight
    tau,          # folded Gram curvature (0 for identity metric)
    center,       # (m,) curvature center A @ x_bar
    reg_code, reg_p1, reg_p2,
    shift,        # (d,) affine part of p (zeros when absent)
    alpha, step, omega_sc,
    thr_gap, thr_scc, cap,
    xi,           # (m,) starting dual point (modified in place)
):
    """Certified dual loop; returns (status, iters, gap, resid, x_tilde).

    status: 0 = SCB fired, 1 = SCC fired, 2 = stalled, 3 = cap reached.
    """
    m, d = A.shape
    xi_prev = xi.copy()
    zeta = np.empty(m)
    v = np.empty(d)
    x_work = np.empty(d)
    arg = np.empty(m)
    inner = np.empty(m)
    xi_cert = np.empty(m)
    val_z = np.empty(m)
    val_in = np.empty(m)
    resid_m = np.empty(m)
    x_tilde = np.empty(d)

    t_mom = 1.0
    best_gap = np.inf
    prev_gap = np.inf
    since_improve = 0
    gap = np.inf
    resid_norm = np.inf
    stride = 1
    inner[:] = 0.0

    for it in range(cap):
        if it == 0:
            omega = 0.0
        elif omega_sc > 0.0:
            omega = omega_sc
        else:
            omega = (t_mom - 1.0) / t_mom
        for i in range(m):
            zeta[i] = xi[i] + omega * (xi[i] - xi_prev[i])

        # v_z = x_bar - alpha * (A^T zeta + shift); x_z = prox_reg(v_z)
        tmp_d = np.dot(AT, zeta)
        for i in range(d):
            v[i] = x_bar[i] - alpha * (tmp_d[i] + shift[i])
        _prox_reg(reg_code, reg_p1, reg_p2, alpha, v, x_work)
        tmp_m = np.dot(A, x_work)
        for i in range(m):
            arg[i] = zeta[i] + step * tmp_m[i]  # grad of psi is -A x_z

        # xi_new = prox of step*H~* via Moreau; `inner` carries the warm start
        if it == 0:
            for i in range(m):
                inner[i] = arg[i] / step
        _row_prox(row_code, b, w, tau, center, 1.0 / step, arg / step, inner, 1.0)
        for i in range(m):
            xi_old = xi[i]
            xi[i] = arg[i] - step * inner[i]
            xi_prev[i] = xi_old

        check = it < 3 or it % stride == 0
        if check:
            _row_grad(row_code, b, w, tau, center, inner, xi_cert)
            tmp_d = np.dot(AT, xi_cert)
            for i in range(d):
                v[i] = x_bar[i] - alpha * (tmp_d[i] + shift[i])
            _prox_reg(reg_code, reg_p1, reg_p2, alpha, v, x_tilde)
            z = np.dot(A, x_tilde)
            _row_val(row_code, b, w, tau, center, z, val_z)
            _row_val(row_code, b, w, tau, center, inner, val_in)
            gap = 0.0
            for i in range(m):
                br = val_z[i] - val_in[i] - xi_cert[i] * (z[i] - inner[i])
                if br > 0.0:
                    gap += br
            if gap <= thr_gap:
                return 0, it + 1, gap, resid_norm, x_tilde
            _row_grad(row_code, b, w, tau, center, z, resid_m)
            for i in range(m):
                resid_m[i] -= xi_cert[i]
            resid_d = np.dot(AT, resid_m)
            resid_norm = 0.0
            for i in range(d):
                resid_norm += resid_d[i] * resid_d[i]
            resid_norm = math.sqrt(resid_norm)
            if resid_norm <= thr_scc:
                return 1, it + 1, gap, resid_norm, x_tilde

            if gap <= 1e3 * thr_gap or resid_norm <= 1e2 * thr_scc:
                # primal-anchored certificate pair (see the generic loop)
                _row_grad(row_code, b, w, tau, center, z, xi_cert)
                tmp_d = np.dot(AT, xi_cert)
                for i in range(d):
                    v[i] = x_bar[i] - alpha * (tmp_d[i] + shift[i])
                _prox_reg(reg_code, reg_p1, reg_p2, alpha, v, x_work)
                z_alt = np.dot(A, x_work)
                _row_val(row_code, b, w, tau, center, z_alt, val_in)
                gap_alt = 0.0
                for i in range(m):
                    br = val_in[i] - val_z[i] - xi_cert[i] * (z_alt[i] - z[i])
                    if br > 0.0:
                        gap_alt += br
                if gap_alt <= thr_gap:
                    for i in range(d):
                        x_tilde[i] = x_work[i]
                    return 0, it + 1, gap_alt, resid_norm, x_tilde
                _row_grad(row_code, b, w, tau, center, z_alt, resid_m)
                for i in range(m):
                    resid_m[i] -= xi_cert[i]
                resid_d = np.dot(AT, resid_m)
                ra = 0.0
                for i in range(d):
                    ra += resid_d[i] * resid_d[i]
                ra = math.sqrt(ra)
                if ra <= thr_scc:
                    for i in range(d):
                        x_tilde[i] = x_work[i]
                    return 1, it + 1, gap_alt, ra, x_tilde
                if gap_alt < gap:
                    gap = gap_alt
            stride = 4 if (gap > 1e4 * thr_gap and resid_norm > 1e2 * thr_scc) else 1

            if gap <= best_gap * (1.0 - 1e-6):
                since_improve = 0
            else:
                since_improve += 1
            if gap < best_gap:
                best_gap = gap
            if since_improve > 3000:
                return 2, it + 1, best_gap, resid_norm, x_tilde
            if gap > prev_gap:
                t_mom = 1.0
            prev_gap = gap

        t_mom = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))

    return 3, cap, best_gap, resid_norm, x_tilde
