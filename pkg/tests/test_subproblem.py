import numpy as np
import pytest

import ispppa._fastpath as fastpath
from ispppa.metric import build_subsampled, identity_metric
from ispppa.models import make_problem
from ispppa.prox import l1_reg, mcp_reg, sq_l2_reg, zero_reg
from ispppa.subproblem import (
    SubproblemError,
    SubproblemInstance,
    check_criterion,
    dual_objective,
    solve_closed_form,
    solve_dual,
    solve_reference,
)


def make_instance(
    rng,
    family="squared",
    reg=None,
    metric_kind="identity",
    model_kind="proximal_point",
    m=4,
    d=3,
    alpha=0.5,
    scale=1.0,
    tau_precond=0.8,
):
    A = rng.standard_normal((m, d))
    if family == "logistic":
        b = np.where(rng.standard_normal(m) >= 0, 1.0, -1.0)
    elif family == "phase_retrieval_abs":
        b = np.abs(rng.standard_normal(m)) * 2
    else:
        b = rng.standard_normal(m)
    reg = reg if reg is not None else zero_reg()
    prob = make_problem(A, b, family, reg, model_kind, scale)
    metric = (
        build_subsampled(A, alpha, tau_precond)
        if metric_kind == "gram"
        else identity_metric(d)
    )
    mb = prob.minibatch(rng.standard_normal(d), np.arange(m))
    return SubproblemInstance(mb=mb, reg=reg, metric=metric, alpha=alpha)


# ---------------------------------------------------------------------------
# closed form
# ---------------------------------------------------------------------------


def test_closed_form_gradient_step():
    prob = make_problem(np.array([[1.0, 0.0]]), np.array([0.0]), "squared",
                        zero_reg(), "subgradient", 1.0)
    inst = SubproblemInstance(
        mb=prob.minibatch(np.array([1.0, 0.0]), np.array([0])),
        reg=zero_reg(), metric=identity_metric(2), alpha=0.5,
    )
    assert np.allclose(solve_closed_form(inst), [0.5, 0.0])


def test_closed_form_pure_prox():
    # zero loss realized through a zero-gradient sample
    prob = make_problem(np.array([[0.0, 0.0]]), np.array([0.0]), "squared",
                        l1_reg(1.0), "subgradient", 1.0)
    inst = SubproblemInstance(
        mb=prob.minibatch(np.array([2.0, 0.0]), np.array([0])),
        reg=l1_reg(1.0), metric=identity_metric(2), alpha=1.0,
    )
    assert np.allclose(solve_closed_form(inst), [1.0, 0.0])


def test_closed_form_mcp_flat_region():
    prob = make_problem(np.array([[1.0]]), np.array([0.0]), "squared",
                        mcp_reg(1.0, 4.0), "subgradient", 1.0)
    # gradient step from x=6 with small alpha lands in the flat region |t|>4
    inst = SubproblemInstance(
        mb=prob.minibatch(np.array([6.0]), np.array([0])),
        reg=mcp_reg(1.0, 4.0), metric=identity_metric(1), alpha=0.1,
    )
    x = solve_closed_form(inst)
    step = 6.0 - 0.1 * 6.0
    # firm-threshold grid oracle
    t = np.linspace(0, 8, 800001)
    r = np.where(t <= 4.0, 1.0 * t - t * t / 8.0, 0.5 * 4.0)
    obj = r + (t - step) ** 2 / 0.2
    assert abs(x[0] - t[np.argmin(obj)]) <= 1e-4
    assert x[0] == pytest.approx(step)  # flat region leaves it unchanged


def test_closed_form_requires_structure():
    rng = np.random.default_rng(0)
    inst = make_instance(rng, model_kind="proximal_point")
    with pytest.raises(SubproblemError):
        solve_closed_form(inst)


# ---------------------------------------------------------------------------
# dual objective
# ---------------------------------------------------------------------------


def test_dual_objective_zero_case():
    # H = 0 (zero-gradient sample), r = 0, anchor 0: Psi(0) = 0
    prob = make_problem(np.array([[0.0, 0.0]]), np.array([0.0]), "squared",
                        zero_reg(), "subgradient", 1.0)
    inst = SubproblemInstance(
        mb=prob.minibatch(np.zeros(2), np.array([0])),
        reg=zero_reg(),
        metric=build_subsampled(np.array([[0.0, 0.0]]) + 1e-12, 1.0, 1.0),
        alpha=1.0,
    )
    assert dual_objective(inst, np.zeros(1)) == pytest.approx(0.0, abs=1e-12)


def test_dual_objective_quadratic_hand_assembly():
    # scalar instance H(y) = 0.5 (y - b)^2, r = 0: closed-form envelopes
    rng = np.random.default_rng(1)
    a = np.array([[1.3]])
    b = np.array([0.7])
    alpha, tau = 0.6, 0.9
    prob = make_problem(a, b, "squared", zero_reg(), "proximal_point", 1.0)
    x_bar = np.array([0.4])
    inst = SubproblemInstance(
        mb=prob.minibatch(x_bar, np.array([0])), reg=zero_reg(),
        metric=build_subsampled(a, alpha, tau / alpha), alpha=alpha,
    )
    xi = np.array([0.25])
    got = dual_objective(inst, xi)
    # hand assembly: e_{tau^-1 H}(u) for H = 0.5(y-b)^2 is quadratic
    u = float(a @ x_bar) + xi[0] / tau
    y_star = (tau * u + b[0]) / (tau + 1.0)
    env_h = 0.5 * (y_star - b[0]) ** 2 + 0.5 * tau * (y_star - u) ** 2
    v = x_bar - alpha * a[0] * xi[0]
    env_p = 0.0  # zero regularizer
    want = 0.5 * tau * u**2 - env_h + float(v @ v) / (2 * alpha) - env_p
    assert got == pytest.approx(want, rel=1e-12)


def test_dual_objective_gradient_finite_differences():
    rng = np.random.default_rng(2)
    inst = make_instance(rng, family="logistic", reg=l1_reg(0.3),
                         metric_kind="gram", alpha=0.4)
    xi = rng.standard_normal(4) * 0.1
    h = 1e-6
    g_fd = np.zeros(4)
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        g_fd[i] = (dual_objective(inst, xi + e) - dual_objective(inst, xi - e)) / (2 * h)
    # analytic gradient: prox_{tau^-1 H}(u) - A prox_{alpha r}(v)
    from ispppa.losses import LogisticRows
    from ispppa.prox import prox

    A = inst.mb.rows
    tau = inst.metric.c / inst.alpha
    rows = LogisticRows(b=inst.mb.targets, w=inst.mb.scale / 4)
    u = A @ inst.mb.center + xi / tau
    y = rows.prox(1.0 / tau, u)
    v = inst.mb.center - inst.alpha * (A.T @ xi)
    g = y - A @ prox(inst.reg, inst.alpha, v)
    assert np.linalg.norm(g_fd - g) <= 1e-6 * max(1.0, np.linalg.norm(g))


# ---------------------------------------------------------------------------
# certified dual solve
# ---------------------------------------------------------------------------


def test_solve_dual_immediate_on_loose_eps():
    rng = np.random.default_rng(3)
    inst = make_instance(rng, family="squared", reg=l1_reg(0.2))
    eps = 10.0 * max(inst.metric.norm(inst.mb.center), 1.0)
    x, cert = solve_dual(inst, eps)
    assert cert.iterations <= 3


def test_solve_dual_small_logistic_batch_vs_oracle():
    rng = np.random.default_rng(4)
    inst = make_instance(rng, family="logistic", reg=l1_reg(0.2), m=4, d=3,
                         metric_kind="gram", alpha=0.7)
    x, cert = solve_dual(inst, 1e-3)
    ref = solve_reference(inst, tol=1e-9)
    assert inst.metric.norm(x - ref) <= 1e-3


def test_solve_dual_quadratic_matches_linear_system():
    # squared loss + sq_l2: the subproblem is a linear system
    rng = np.random.default_rng(5)
    m, d, alpha = 5, 4, 0.6
    A = rng.standard_normal((m, d))
    b = rng.standard_normal(m)
    lam = 0.7
    prob = make_problem(A, b, "squared", sq_l2_reg(lam), "proximal_point", 1.0)
    x_bar = rng.standard_normal(d)
    inst = SubproblemInstance(
        mb=prob.minibatch(x_bar, np.arange(m)), reg=sq_l2_reg(lam),
        metric=identity_metric(d), alpha=alpha,
    )
    eps = 1e-6
    x, cert = solve_dual(inst, eps)
    H = A.T @ A / m + lam * np.eye(d) + np.eye(d) / alpha
    x_ref = np.linalg.solve(H, A.T @ b / m + x_bar / alpha)
    assert np.linalg.norm(x - x_ref) <= eps


@pytest.mark.parametrize("metric_kind", ["identity", "gram"])
@pytest.mark.parametrize("family", ["logistic", "squared"])
def test_solve_dual_randomized_against_oracle(metric_kind, family):
    rng = np.random.default_rng(hash((metric_kind, family)) % 2**32)
    for trial in range(6):
        reg = [l1_reg(0.3), sq_l2_reg(0.5), zero_reg()][trial % 3]
        inst = make_instance(rng, family=family, reg=reg, metric_kind=metric_kind,
                             alpha=0.3 + 0.2 * (trial % 3), scale=1.0 + trial)
        eps = 10.0 ** (-2 - trial % 3)
        x, cert = solve_dual(inst, eps)
        ref = solve_reference(inst, tol=eps / 200)
        assert inst.metric.norm(x - ref) <= eps
        assert cert.kind in ("SCB", "SCC")
        if cert.scb_gap is not None:
            assert cert.scb_gap >= -1e-10  # weak duality


def test_solve_dual_phase_retrieval_prox_linear():
    rng = np.random.default_rng(6)
    inst = make_instance(rng, family="phase_retrieval_abs",
                         model_kind="prox_linear", alpha=0.05, m=5, d=4)
    x, cert = solve_dual(inst, 1e-6)
    ref = solve_reference(inst, tol=1e-8)
    assert inst.metric.norm(x - ref) <= 1e-6


def test_solve_dual_phase_retrieval_proximal_point():
    rng = np.random.default_rng(7)
    inst = make_instance(rng, family="phase_retrieval_abs",
                         model_kind="proximal_point", alpha=0.02, m=5, d=4)
    x, cert = solve_dual(inst, 1e-6)
    ref = solve_reference(inst, tol=1e-8)
    assert inst.metric.norm(x - ref) <= 1e-6


def test_solve_dual_rejects_exact_mode():
    rng = np.random.default_rng(8)
    inst = make_instance(rng)
    with pytest.raises(SubproblemError):
        solve_dual(inst, 0.0)


def test_gram_metric_must_match_batch():
    rng = np.random.default_rng(9)
    A = rng.standard_normal((4, 3))
    prob = make_problem(A, rng.standard_normal(4), "squared", zero_reg(),
                        "proximal_point", 1.0)
    other = build_subsampled(rng.standard_normal((3, 3)), 0.5, 1.0)
    inst = SubproblemInstance(mb=prob.minibatch(np.zeros(3), np.arange(4)),
                              reg=zero_reg(), metric=other, alpha=0.5)
    with pytest.raises(SubproblemError):
        solve_dual(inst, 1e-3)


def test_mcp_with_gram_metric_rejected():
    rng = np.random.default_rng(10)
    with pytest.raises(SubproblemError):
        inst = make_instance(rng, family="squared", reg=mcp_reg(0.5, 4.0),
                             metric_kind="gram", alpha=0.3)
        solve_dual(inst, 1e-3)


def test_stepsize_beyond_weak_convexity_rejected():
    rng = np.random.default_rng(11)
    with pytest.raises(SubproblemError):
        make_instance(rng, family="squared", reg=mcp_reg(0.5, 2.0), alpha=2.5)


def test_fastpath_parity_with_generic_loop():
    if not fastpath.HAVE_NUMBA:
        pytest.skip("numba not available")
    rng = np.random.default_rng(12)
    for trial in range(12):
        family = ["logistic", "squared"][trial % 2]
        reg = [l1_reg(0.3), sq_l2_reg(0.4), zero_reg(), mcp_reg(0.5, 4.0)][trial % 4]
        mk = "identity" if reg.kind == "mcp" else ["gram", "identity"][(trial // 2) % 2]
        inst = make_instance(rng, family=family, reg=reg, metric_kind=mk, alpha=0.3)
        fastpath.HAVE_NUMBA = True
        x_fast, c_fast = solve_dual(inst, 1e-4)
        fastpath.HAVE_NUMBA = False
        x_gen, c_gen = solve_dual(inst, 1e-4)
        fastpath.HAVE_NUMBA = True
        assert np.linalg.norm(x_fast - x_gen) <= 1e-9
        assert c_fast.kind == c_gen.kind
        assert c_fast.iterations == c_gen.iterations


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def test_exact_solution_passes_all_criteria():
    rng = np.random.default_rng(13)
    inst = make_instance(rng, family="squared", reg=l1_reg(0.3), alpha=0.5)
    ref = solve_reference(inst, tol=1e-12)
    eps = 1e-3
    for kind in ("SCA", "SCB", "SCC"):
        assert check_criterion(kind, inst, ref, eps) is not None


def test_sca_rejects_two_eps_perturbation():
    rng = np.random.default_rng(14)
    inst = make_instance(rng, family="squared", reg=l1_reg(0.3), alpha=0.5)
    ref = solve_reference(inst, tol=1e-12)
    eps = 1e-3
    delta = rng.standard_normal(3)
    delta *= 2 * eps / inst.metric.norm(delta)
    assert check_criterion("SCA", inst, ref + delta, eps) is None


def test_implication_chain_on_random_instances():
    rng = np.random.default_rng(15)
    checked = 0
    for trial in range(25):
        family = ["logistic", "squared"][trial % 2]
        reg = [l1_reg(0.3), mcp_reg(0.5, 4.0)][trial % 2]
        inst = make_instance(rng, family=family, reg=reg, m=3, d=4,
                             alpha=0.2 + 0.1 * (trial % 3))
        ref = solve_reference(inst, tol=1e-12)
        eps = 10.0 ** (-2 - trial % 2)
        # candidates: perturb along the assembled subgradient direction
        for scale in (0.0, 0.05, 0.4, 2.0):
            cand = ref + scale * eps * rng.standard_normal(4)
            c_scc = check_criterion("SCC", inst, cand, eps)
            if c_scc is not None:
                checked += 1
                c_scb = check_criterion("SCB", inst, cand, eps)
                assert c_scb is not None, "SCC passed but SCB failed"
                c_sca = check_criterion("SCA", inst, cand, eps)
                assert c_sca is not None, "SCB passed but SCA failed"
    assert checked >= 10


def test_scc_rejected_for_nonsmooth_loss():
    rng = np.random.default_rng(16)
    inst = make_instance(rng, family="phase_retrieval_abs",
                         model_kind="proximal_point", alpha=0.02, m=4, d=3)
    with pytest.raises(SubproblemError):
        check_criterion("SCC", inst, np.zeros(3), 1e-3)


def test_strong_convexity_growth_around_solution():
    rng = np.random.default_rng(17)
    inst = make_instance(rng, family="squared", reg=l1_reg(0.4), alpha=0.5)
    ref = solve_reference(inst, tol=1e-12)
    f_ref = inst.objective(ref)
    sigma = (1.0 - inst.tau * inst.alpha) / inst.alpha
    for _ in range(20):
        y = ref + 0.3 * rng.standard_normal(3)
        lhs = inst.objective(y) - f_ref
        rhs = 0.5 * sigma * inst.metric.norm(y - ref) ** 2
        assert lhs >= rhs - 1e-9
