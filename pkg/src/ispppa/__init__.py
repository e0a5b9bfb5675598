"""Inexact stochastic preconditioned proximal point optimization toolkit."""

from .data import Dataset, DatasetSpec, gen_synthetic, load_dataset, save_dataset
from .diagnostics import RateFit, fit_rate, kkt_residual, kkt_sandwich, me_grad_norm
from .metric import Metric, MetricSchedule, build_subsampled, identity_metric, spectral_norm
from .models import MinibatchModel, ModelFunction, Problem, make_model, make_problem
from .prox import Regularizer, moreau_env, moreau_grad, prox, prox_oracle
from .reference import Reference, reference_solve
from .solver import IterateTrace, Schedule, run, sample_output, stepsize_at
from .subproblem import (
    SubproblemCertificate,
    SubproblemInstance,
    check_criterion,
    dual_objective,
    solve_closed_form,
    solve_dual,
)

__version__ = "0.1.0"
