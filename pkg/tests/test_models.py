import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ispppa.losses import logistic_scalar
from ispppa.models import (
    AbsCompositeHandle,
    MinibatchModel,
    ModelError,
    ModelFunction,
    empirical_eta,
    eval_minibatch,
    eval_model,
    make_model,
    make_problem,
    minibatch_subgradient,
)
from ispppa.prox import l1_reg, zero_reg


def _loss(family, a, b, scale, x):
    t = float(a @ x)
    if family == "logistic":
        return scale * float(logistic_scalar(-b * t))
    if family == "squared":
        return 0.5 * scale * (t - b) ** 2
    return scale * abs(t * t - b)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_anchoring_exact(seed):
    rng = np.random.default_rng(seed)
    family = ["logistic", "squared", "phase_retrieval_abs"][seed % 3]
    kind = ["subgradient", "prox_linear", "proximal_point"][(seed // 3) % 3]
    d = 4
    a = rng.standard_normal(d)
    b = 1.0 if family == "logistic" else float(rng.standard_normal())
    if family == "phase_retrieval_abs":
        b = abs(b)
    scale = float(rng.uniform(0.5, 4.0))
    m = make_model(kind, family, a[None, :], scale)
    x = rng.standard_normal(d)
    got = eval_model(m, x, x, (a, b, scale))
    want = _loss(family, a, b, scale, x)
    assert got == pytest.approx(want, rel=1e-14, abs=1e-14)


def test_subgradient_model_is_first_order_taylor():
    a = np.array([1.0, 2.0])
    b = 0.5
    m = make_model("subgradient", "squared", a[None, :], 1.0)
    x0 = np.array([1.0, -1.0])
    delta = np.array([0.3, 0.1])
    got = eval_model(m, x0, x0 + delta, (a, b, 1.0))
    t0 = float(a @ x0)
    want = 0.5 * (t0 - b) ** 2 + (t0 - b) * float(a @ delta)
    assert got == pytest.approx(want, rel=1e-14)


def test_prox_linear_phase_retrieval_hand_value():
    a = np.array([1.0, 0.0])
    m = make_model("prox_linear", "phase_retrieval_abs", a[None, :], 1.0)
    v = eval_model(m, np.array([1.0, 0.0]), np.array([2.0, 0.0]), (a, 1.0, 1.0))
    # |c(x) + <grad c(x), y - x>| with c = <a,.>^2 - 1: |0 + 2*1*1| = 2
    assert v == pytest.approx(2.0)
    # symbolic expansion oracle: c(y) - <a, y-x>^2
    y = np.array([2.0, 0.0])
    x = np.array([1.0, 0.0])
    lin = (float(a @ y) ** 2 - 1.0) - float(a @ (y - x)) ** 2
    assert v == pytest.approx(abs(lin))


def test_proximal_point_model_equals_loss():
    rng = np.random.default_rng(0)
    a = rng.standard_normal(3)
    m = make_model("proximal_point", "phase_retrieval_abs", a[None, :], 2.0)
    x, y = rng.standard_normal(3), rng.standard_normal(3)
    assert eval_model(m, x, y, (a, 1.3, 2.0)) == pytest.approx(
        _loss("phase_retrieval_abs", a, 1.3, 2.0, y)
    )


def test_minibatch_mean_and_permutation_invariance():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((3, 4))
    b = rng.standard_normal(3)
    model = make_model("proximal_point", "squared", A, 1.0)
    mb = MinibatchModel(model=model, center=np.zeros(4), rows=A, targets=b, scale=1.0)
    y = rng.standard_normal(4)
    vals = [_loss("squared", A[i], b[i], 1.0, y) for i in range(3)]
    assert eval_minibatch(mb, y) == pytest.approx(np.mean(vals))
    perm = np.array([2, 0, 1])
    mb2 = MinibatchModel(model=model, center=np.zeros(4), rows=A[perm], targets=b[perm], scale=1.0)
    assert eval_minibatch(mb2, y) == pytest.approx(eval_minibatch(mb, y))


def test_minibatch_of_identical_samples():
    a = np.array([[1.0, 1.0], [1.0, 1.0]])
    b = np.array([0.3, 0.3])
    model = make_model("proximal_point", "squared", a, 1.0)
    mb = MinibatchModel(model=model, center=np.zeros(2), rows=a, targets=b, scale=1.0)
    y = np.array([0.5, 0.2])
    assert eval_minibatch(mb, y) == pytest.approx(_loss("squared", a[0], 0.3, 1.0, y))


def test_empty_batch_rejected():
    model = make_model("proximal_point", "squared", np.ones((1, 2)), 1.0)
    with pytest.raises(ModelError):
        MinibatchModel(model=model, center=np.zeros(2), rows=np.zeros((0, 2)),
                       targets=np.zeros(0), scale=1.0)


def test_proximal_point_eta_is_zero():
    with pytest.raises(ModelError):
        ModelFunction(kind="proximal_point", family="squared", eta_bar=1.0, tau_bar=0.0)


def test_empirical_eta_proximal_point_zero():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((5, 3))
    b = rng.standard_normal(5)
    m = make_model("proximal_point", "squared", A, 1.0)
    assert empirical_eta(m, A, b, 1.0, trials=50, radius=2.0, seed=0) == 0.0


def test_empirical_eta_subgradient_squared_bound():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((6, 4))
    b = rng.standard_normal(6)
    m = make_model("subgradient", "squared", A, 1.0)
    eta = empirical_eta(m, A, b, 1.0, trials=300, radius=2.0, seed=1)
    # exact second-order remainder: 0.5 (a' delta)^2 <= 0.5 |a|^2 |delta|^2
    assert eta <= np.max(np.sum(A * A, axis=1)) + 1e-12
    assert eta > 0.0


def test_empirical_eta_subgradient_logistic_curvature_bound():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((6, 4))
    b = np.where(rng.standard_normal(6) >= 0, 1.0, -1.0)
    m = make_model("subgradient", "logistic", A, 1.0)
    eta = empirical_eta(m, A, b, 1.0, trials=300, radius=2.0, seed=2)
    # dense Hessian-norm oracle: sup |f''| = 0.25 |a|^2
    assert eta <= 0.25 * np.max(np.sum(A * A, axis=1)) + 1e-12


def test_empirical_eta_prox_linear_phase_retrieval_bound():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((6, 4))
    b = np.abs(rng.standard_normal(6)) * 2
    m = make_model("prox_linear", "phase_retrieval_abs", A, 1.0)
    eta = empirical_eta(m, A, b, 1.0, trials=300, radius=2.0, seed=3)
    assert eta <= 2.0 * np.max(np.sum(A * A, axis=1)) + 1e-12


def test_minibatch_subgradient_matches_fd_on_smooth_losses():
    rng = np.random.default_rng(6)
    A = rng.standard_normal((4, 3))
    b = np.where(rng.standard_normal(4) >= 0, 1.0, -1.0)
    prob = make_problem(A, b, "logistic", zero_reg(), "proximal_point", 2.0)
    mb = prob.minibatch(rng.standard_normal(3), np.arange(4))
    x = rng.standard_normal(3)
    g = minibatch_subgradient(mb, x)
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (eval_minibatch(mb, x + e) - eval_minibatch(mb, x - e)) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-6)


def test_problem_value_and_grad_consistency():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((8, 3))
    b = rng.standard_normal(8)
    prob = make_problem(A, b, "squared", l1_reg(0.2), "proximal_point", 8.0)
    x = rng.standard_normal(3)
    assert prob.value(x) == pytest.approx(
        0.5 * float(np.sum((A @ x - b) ** 2)) + 0.2 * float(np.sum(np.abs(x)))
    )
    g = prob.smooth_grad(x)
    assert np.allclose(g, A.T @ (A @ x - b))


def test_abs_composite_handle_value():
    rng = np.random.default_rng(8)
    A = rng.standard_normal((5, 3))
    b = np.abs(rng.standard_normal(5))
    h = AbsCompositeHandle(A=A, b=b, w=0.2)
    y = rng.standard_normal(3)
    assert h.value(y) == pytest.approx(0.2 * float(np.sum(np.abs((A @ y) ** 2 - b))))
