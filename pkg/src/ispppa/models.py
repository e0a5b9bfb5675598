"""Stochastic model functions f_x(.; s) and minibatch aggregation.

A model function is a convex-in-y surrogate of a per-sample loss anchored at
the current iterate: the subgradient model is the first-order expansion, the
prox-linear model linearizes only inside the outer convex function, and the
proximal-point model is the loss itself.  Each carries its one-sided
quadratic-error constant eta_bar and the composite weak-convexity constant
tau_bar used by stepsize feasibility and certificate thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses
from .metric import spectral_norm
from .prox import Regularizer

MODEL_KINDS = ("subgradient", "prox_linear", "proximal_point")
LOSS_FAMILIES = ("logistic", "squared", "phase_retrieval_abs")


class ModelError(Exception):
    pass


def _loss_value(family: str, a, b, scale, x) -> float:
    t = float(a @ x)
    if family == "logistic":
        return scale * float(losses.logistic_scalar(-b * t))
    if family == "squared":
        return 0.5 * scale * (t - b) ** 2
    return scale * abs(t * t - b)


def _sigmoid_scalar(t: float) -> float:
    import math

    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def _loss_subgrad(family: str, a, b, scale, x) -> np.ndarray:
    t = float(a @ x)
    if family == "logistic":
        return scale * (-b * _sigmoid_scalar(-b * t)) * a
    if family == "squared":
        return scale * (t - b) * a
    # phase retrieval: sign(t^2 - b) * 2 t a, with 0 selected at the kink
    return scale * float(np.sign(t * t - b)) * 2.0 * t * a


@dataclass(frozen=True)
class ModelFunction:
    """One-sided stochastic model of a per-sample loss.

    eta_bar bounds 2|f_x(y;s) - f(y;s)| / ||y-x||^2; tau_bar is the weak
    convexity of the composite model f_x + r; g_lip maps ||x|| to the local
    Lipschitz growth factor of the model family.
    """

    kind: str
    family: str
    eta_bar: float
    tau_bar: float
    g_lip: callable = field(default=lambda t: 1.0)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}")
        if self.family not in LOSS_FAMILIES:
            raise ModelError(f"unknown loss family {self.family!r}")
        if self.kind == "proximal_point" and self.eta_bar != 0.0:
            raise ModelError("proximal_point model has eta_bar = 0 exactly")


def eval_model(m: ModelFunction, center: np.ndarray, y: np.ndarray, sample) -> float:
    """f_center(y; sample) for one data row (a, b, scale)."""
    a, b, scale = sample
    if m.kind == "proximal_point":
        return _loss_value(m.family, a, b, scale, y)
    if m.kind == "subgradient":
        g = _loss_subgrad(m.family, a, b, scale, center)
        return _loss_value(m.family, a, b, scale, center) + float(g @ (y - center))
    # prox-linear: h(c(x) + <grad c(x), y - x>); for losses with affine inner
    # maps this coincides with the loss itself
    if m.family == "phase_retrieval_abs":
        t = float(a @ center)
        lin = (t * t - b) + 2.0 * t * float(a @ (y - center))
        return scale * abs(lin)
    return _loss_value(m.family, a, b, scale, y)


@dataclass(frozen=True)
class MinibatchModel:
    """Mean of per-sample models anchored at a common center."""

    model: ModelFunction
    center: np.ndarray
    rows: np.ndarray      # (m, d) batch slice of A
    targets: np.ndarray   # (m,) batch slice of b
    scale: float          # per-sample scale (n for sum-form objectives)

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[0] == 0:
            raise ModelError("empty batch")

    def tau_batch(self) -> float:
        """Weak convexity of this batch's model part (tighter than the
        uniform per-sample bound carried by the model)."""
        if self.model.kind != "proximal_point" or self.model.family != "phase_retrieval_abs":
            return self.model.tau_bar if self.model.kind == "proximal_point" else 0.0
        lam = spectral_norm(self.rows) ** 2
        return 2.0 * self.scale * lam / self.rows.shape[0]


def eval_minibatch(mb: MinibatchModel, y: np.ndarray) -> float:
    vals = [
        eval_model(mb.model, mb.center, y, (mb.rows[i], mb.targets[i], mb.scale))
        for i in range(mb.rows.shape[0])
    ]
    return float(np.mean(vals))


def minibatch_subgradient(mb: MinibatchModel, at: np.ndarray) -> np.ndarray:
    g = np.zeros_like(np.asarray(at, dtype=float))
    for i in range(mb.rows.shape[0]):
        g += _loss_subgrad(mb.model.family, mb.rows[i], mb.targets[i], mb.scale, at)
    return g / mb.rows.shape[0]


def empirical_eta(
    m: ModelFunction,
    rows: np.ndarray,
    targets: np.ndarray,
    scale: float,
    trials: int,
    radius: float,
    seed: int,
) -> float:
    """max over sampled (x, y, s) of 2 |f_x(y;s) - f(y;s)| / ||y - x||^2."""
    if trials < 1:
        raise ModelError("trials must be >= 1")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    d = rows.shape[1]
    worst = 0.0
    for _ in range(trials):
        i = int(rng.integers(0, rows.shape[0]))
        x = rng.standard_normal(d) * radius
        y = x + rng.standard_normal(d) * radius
        denom = float((y - x) @ (y - x))
        if denom == 0.0:
            continue
        s = (rows[i], targets[i], scale)
        err = abs(eval_model(m, x, y, s) - _loss_value(m.family, *s, y))
        worst = max(worst, 2.0 * err / denom)
    return worst


# ---------------------------------------------------------------------------
# problem bundle
# ---------------------------------------------------------------------------


def model_constants(kind: str, family: str, rows: np.ndarray, scale: float):
    """(eta_bar, tau_bar, g_lip) for a model family on the given data."""
    max_row_sq = float(np.max(np.sum(rows * rows, axis=1))) if rows.size else 0.0
    if family == "phase_retrieval_abs":
        curvature = 2.0 * scale * max_row_sq
        g_lip = lambda t: t
        if kind == "subgradient":
            return curvature, 0.0, g_lip
        if kind == "prox_linear":
            return curvature, 0.0, g_lip
        return 0.0, curvature, g_lip
    if family == "logistic":
        smooth = 0.25 * scale * max_row_sq
        g_lip = lambda t: 1.0
    else:  # squared
        smooth = scale * max_row_sq
        g_lip = lambda t: t
    if kind == "subgradient":
        return smooth, 0.0, g_lip
    # prox_linear == proximal_point for affine inner maps
    return 0.0, 0.0, g_lip


@dataclass(frozen=True)
class Problem:
    """Full problem instance: data, loss family, regularizer, model choice."""

    A: np.ndarray
    b: np.ndarray
    family: str
    reg: Regularizer
    model: ModelFunction
    sample_scale: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @property
    def norm_A(self) -> float:
        v = self._cache.get("norm_A")
        if v is None:
            v = spectral_norm(self.A)
            self._cache["norm_A"] = v
        return v

    @property
    def tau_bar(self) -> float:
        """Weak convexity of the composite model (model part + regularizer)."""
        return self.model.tau_bar + self.reg.theta_bar

    def smooth_value(self, x: np.ndarray) -> float:
        """Full-batch mean-over-samples loss value E[f(x; s)]."""
        s = self.sample_scale / self.n
        if self.family == "logistic":
            return losses.logistic_full_value(self.A, self.b, x, s)
        if self.family == "squared":
            return losses.squared_full_value(self.A, self.b, x, s)
        return losses.phase_retrieval_full_value(self.A, self.b, x, s)

    def smooth_grad(self, x: np.ndarray) -> np.ndarray:
        s = self.sample_scale / self.n
        if self.family == "logistic":
            return losses.logistic_full_grad(self.A, self.b, x, s)
        if self.family == "squared":
            return losses.squared_full_grad(self.A, self.b, x, s)
        return losses.phase_retrieval_full_subgrad(self.A, self.b, x, s)

    def L_smooth_full(self) -> float:
        s = self.sample_scale / self.n
        if self.family == "logistic":
            return 0.25 * s * self.norm_A**2
        if self.family == "squared":
            return s * self.norm_A**2
        raise ModelError("phase-retrieval loss is not smooth")

    def value(self, x: np.ndarray) -> float:
        return self.smooth_value(x) + self.reg.value(x)

    def minibatch(self, center: np.ndarray, idx: np.ndarray) -> MinibatchModel:
        return MinibatchModel(
            model=self.model,
            center=center,
            rows=self.A[idx],
            targets=self.b[idx],
            scale=self.sample_scale,
        )


def make_model(kind: str, family: str, rows: np.ndarray, scale: float) -> ModelFunction:
    eta_bar, tau_bar, g_lip = model_constants(kind, family, rows, scale)
    return ModelFunction(kind=kind, family=family, eta_bar=eta_bar, tau_bar=tau_bar, g_lip=g_lip)


@dataclass(frozen=True)
class AbsCompositeHandle:
    """Full composite w * sum_i |(a_i' y)^2 - b_i| (no separable regularizer).

    Has no smooth + prox split; its exact prox is obtained through the
    certified dual solve after convexifying the rows.
    """

    A: np.ndarray
    b: np.ndarray
    w: float

    @property
    def tau_bar(self) -> float:
        return 2.0 * self.w * spectral_norm(self.A) ** 2

    def value(self, y: np.ndarray) -> float:
        z = self.A @ y
        return self.w * float(np.sum(np.abs(z * z - self.b)))


def make_problem(A, b, family: str, reg: Regularizer, model_kind: str, sample_scale: float = 1.0) -> Problem:
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    model = make_model(model_kind, family, A, sample_scale)
    return Problem(A=A, b=b, family=family, reg=reg, model=model, sample_scale=sample_scale)
