"""Experiment orchestration: config files, trial averaging, CSV/SVG artifacts.

Config format is plain text "key = value" under [section] headers.  The
resolved-config echo written next to the results contains every derived
quantity (actual regularization weights, spectral norms, trial seeds), and
loading it reproduces the identical run byte for byte.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .data import Dataset, DatasetSpec, gen_synthetic
from .metric import identity_metric
from .models import AbsCompositeHandle, Problem, make_problem
from .prox import Regularizer, SmoothPlusProx
from .reference import Reference, reference_solve
from .solver import Schedule, run

CSV_COLUMNS = ("k", "alpha", "eps", "fgap", "kkt", "me_grad", "dist2", "inner_iters", "wall_ms")
DIAG_CHOICES = ("fgap", "kkt", "me_grad", "dist2", "wall_ms")


class ConfigError(Exception):
    pass


def parse_config_text(text: str) -> dict:
    sections: dict[str, dict[str, str]] = {}
    current = None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line or current is None:
            raise ConfigError(f"malformed config line: {raw!r}")
        key, val = line.split("=", 1)
        sections[current][key.strip()] = val.strip()
    return sections


def load_config(path) -> dict:
    return parse_config_text(Path(path).read_text())


def dump_config(sections: dict) -> str:
    out = []
    for name in sections:
        out.append(f"[{name}]")
        for key, val in sections[name].items():
            out.append(f"{key} = {val}")
        out.append("")
    return "\n".join(out)


def _get(sec: dict, key: str, default=None, cast=str):
    if key not in sec:
        if default is None:
            raise ConfigError(f"missing config key {key!r}")
        return default
    return cast(sec[key])


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec
    reg_kind: str
    loss: str
    model_kind: str
    sample_scale_mode: str  # "sum" | "mean"
    schedule: Schedule
    m: int
    K: int
    trials: int
    seed: int
    diag_list: tuple
    kkt_alpha: float | None
    rho_bar: float | None
    me_tol: float
    record_dense: int
    record_log: int
    ref_tol: float
    lam1: float | None = None
    lam2: float | None = None
    lambda_c: float | None = None
    lambda_c1: float | None = None
    lambda_c2: float | None = None
    fit_window: float = 0.5

    def resolve_reg(self, A: np.ndarray, b: np.ndarray) -> Regularizer:
        if self.reg_kind == "zero":
            return Regularizer("zero")
        atb = float(np.max(np.abs(A.T @ b)))
        if self.reg_kind == "l1":
            lam1 = self.lam1 if self.lam1 is not None else self.lambda_c * atb
            self.lam1 = lam1
            return Regularizer("l1", lam1=lam1)
        if self.reg_kind == "sq_l2":
            if self.lam1 is None:
                raise ConfigError("sq_l2 needs an explicit lam1")
            return Regularizer("sq_l2", lam1=self.lam1)
        lam1 = self.lam1 if self.lam1 is not None else self.lambda_c1 * atb
        lam2 = self.lam2 if self.lam2 is not None else self.lambda_c2 * atb
        self.lam1, self.lam2 = lam1, lam2
        return Regularizer("mcp", lam1=lam1, lam2=lam2)


def config_from_sections(sections: dict) -> ExperimentConfig:
    ds = sections.get("dataset", {})
    pr = sections.get("problem", {})
    sc = sections.get("schedule", {})
    rn = sections.get("run", {})
    spec = DatasetSpec(
        n=_get(ds, "n", cast=int),
        d=_get(ds, "d", cast=int),
        kind=_get(ds, "kind"),
        sigma=_get(ds, "sigma", 0.0, float),
        rho_s=_get(ds, "rho_s", 0.1, float),
        seed=_get(ds, "seed", 0, int),
    )
    schedule = Schedule(
        stepsize=_get(sc, "stepsize"),
        alpha0=_get(sc, "alpha0", cast=float),
        beta=_get(sc, "beta", 0.0, float),
        eps_kind=_get(sc, "eps", "quadratic"),
        gamma=_get(sc, "gamma", 0.0, float),
        precond=_get(sc, "precond", "identity"),
        tau0=_get(sc, "tau0", 0.0, float),
        eta=_get(sc, "eta", 0.0, float),
    )
    diag_list = tuple(
        s.strip() for s in _get(rn, "diagnostics", "fgap,kkt").split(",") if s.strip()
    )
    for name in diag_list:
        if name not in DIAG_CHOICES:
            raise ConfigError(f"unknown diagnostic {name!r}")
    cfg = ExperimentConfig(
        dataset=spec,
        reg_kind=_get(pr, "reg", "zero"),
        loss=_get(pr, "loss"),
        model_kind=_get(pr, "model"),
        sample_scale_mode=_get(pr, "sample_scale", "sum"),
        schedule=schedule,
        m=_get(rn, "m", cast=int),
        K=_get(rn, "K", cast=int),
        trials=_get(rn, "trials", 1, int),
        seed=_get(rn, "seed", 0, int),
        diag_list=diag_list,
        kkt_alpha=float(rn["kkt_alpha"]) if "kkt_alpha" in rn else None,
        rho_bar=float(rn["rho_bar"]) if "rho_bar" in rn else None,
        me_tol=_get(rn, "me_tol", 1e-8, float),
        record_dense=_get(rn, "record_dense", 100, int),
        record_log=_get(rn, "record_log", 300, int),
        ref_tol=_get(rn, "ref_tol", 1e-9, float),
        lam1=float(pr["lam1"]) if "lam1" in pr else None,
        lam2=float(pr["lam2"]) if "lam2" in pr else None,
        lambda_c=float(pr["lambda_c"]) if "lambda_c" in pr else None,
        lambda_c1=float(pr["lambda_c1"]) if "lambda_c1" in pr else None,
        lambda_c2=float(pr["lambda_c2"]) if "lambda_c2" in pr else None,
        fit_window=_get(rn, "fit_window", 0.5, float),
    )
    return cfg


def echo_sections(cfg: ExperimentConfig, problem: Problem) -> dict:
    ds, sch = cfg.dataset, cfg.schedule
    sections = {
        "dataset": {
            "n": str(ds.n), "d": str(ds.d), "kind": ds.kind,
            "sigma": repr(ds.sigma), "rho_s": repr(ds.rho_s), "seed": str(ds.seed),
        },
        "problem": {
            "loss": cfg.loss, "reg": cfg.reg_kind, "model": cfg.model_kind,
            "sample_scale": cfg.sample_scale_mode,
        },
        "schedule": {
            "stepsize": sch.stepsize, "alpha0": repr(sch.alpha0), "beta": repr(sch.beta),
            "eps": sch.eps_kind, "gamma": repr(sch.gamma), "precond": sch.precond,
            "tau0": repr(sch.tau0), "eta": repr(sch.eta),
        },
        "run": {
            "m": str(cfg.m), "K": str(cfg.K), "trials": str(cfg.trials),
            "seed": str(cfg.seed), "diagnostics": ",".join(cfg.diag_list),
            "me_tol": repr(cfg.me_tol), "record_dense": str(cfg.record_dense),
            "record_log": str(cfg.record_log), "ref_tol": repr(cfg.ref_tol),
            "fit_window": repr(cfg.fit_window),
        },
        "resolved": {
            "norm_A": repr(problem.norm_A),
            "sample_scale_value": repr(problem.sample_scale),
            "eta_bar": repr(problem.model.eta_bar),
            "tau_bar": repr(problem.tau_bar),
        },
    }
    if cfg.lam1 is not None:
        sections["problem"]["lam1"] = repr(cfg.lam1)
    if cfg.lam2 is not None:
        sections["problem"]["lam2"] = repr(cfg.lam2)
    if cfg.kkt_alpha is not None:
        sections["run"]["kkt_alpha"] = repr(cfg.kkt_alpha)
    if cfg.rho_bar is not None:
        sections["run"]["rho_bar"] = repr(cfg.rho_bar)
    return sections


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------

FAMILY_BY_LOSS = {"logistic": "logistic", "squared": "squared",
                  "phase_retrieval": "phase_retrieval_abs"}


def build_problem(cfg: ExperimentConfig, dataset: Dataset) -> Problem:
    family = FAMILY_BY_LOSS.get(cfg.loss)
    if family is None:
        raise ConfigError(f"unknown loss {cfg.loss!r}")
    reg = cfg.resolve_reg(dataset.A, dataset.b)
    scale = float(dataset.A.shape[0]) if cfg.sample_scale_mode == "sum" else 1.0
    return make_problem(dataset.A, dataset.b, family, reg, cfg.model_kind, scale)


def default_rho_bar(problem: Problem) -> float:
    return 2.0 * (problem.model.eta_bar + problem.tau_bar) + 1.0


def _me_handle(problem: Problem):
    if problem.family == "phase_retrieval_abs":
        if problem.reg.kind != "zero":
            raise ConfigError("me_grad on phase retrieval needs the zero regularizer")
        return AbsCompositeHandle(A=problem.A, b=problem.b, w=problem.sample_scale / problem.n)
    return SmoothPlusProx(
        smooth_value=problem.smooth_value,
        smooth_grad=problem.smooth_grad,
        L_smooth=problem.L_smooth_full(),
        reg=problem.reg,
        tau_bar=problem.reg.theta_bar,
    )


def compute_diagnostics(cfg: ExperimentConfig, problem: Problem, trace, ref: Reference | None):
    """Per-record diagnostic values for one trace."""
    out = {}
    ks = trace.ks
    xs = [trace.snapshot(int(k)) for k in ks]
    if "fgap" in cfg.diag_list or "dist2" in cfg.diag_list:
        if ref is None:
            raise ConfigError("fgap/dist2 need a reference solution")
    if "fgap" in cfg.diag_list:
        clip = 10.0 * max(ref.kkt, 1e-15)
        out["fgap"] = np.array([diag.fgap(x, problem.value, ref.phi_hat, clip) for x in xs])
    if "kkt" in cfg.diag_list:
        a = cfg.kkt_alpha if cfg.kkt_alpha is not None else 1.0
        out["kkt"] = np.array(
            [diag.kkt_residual(x, problem.smooth_grad, problem.reg, a) for x in xs]
        )
    if "me_grad" in cfg.diag_list:
        rho = cfg.rho_bar if cfg.rho_bar is not None else default_rho_bar(problem)
        handle = _me_handle(problem)
        metric = identity_metric(problem.d)
        out["me_grad"] = np.array(
            [diag.me_grad_norm(x, handle, rho, metric, cfg.me_tol) for x in xs]
        )
    if "dist2" in cfg.diag_list:
        out["dist2"] = np.array([diag.dist_to_solution(x, ref.x_hat) ** 2 for x in xs])
    return out


@dataclass
class ExperimentResult:
    ks: np.ndarray
    columns: dict          # column name -> averaged series
    traces: list
    reference: Reference | None
    fits: dict = field(default_factory=dict)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    dataset = gen_synthetic(cfg.dataset)
    problem = build_problem(cfg, dataset)
    ref = None
    if "fgap" in cfg.diag_list or "dist2" in cfg.diag_list:
        ref = reference_solve(problem, tol=cfg.ref_tol,
                              kkt_alpha=cfg.kkt_alpha)

    def one_trial(t):
        return run(problem, cfg.schedule, cfg.m, cfg.K, seed=(cfg.seed, t),
                   record_dense=cfg.record_dense, record_log=cfg.record_log)

    workers = int(os.environ.get("ISPPPA_THREADS", "1") or "1")
    if workers > 1 and cfg.trials > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(one_trial, range(cfg.trials)))
    else:
        traces = [one_trial(t) for t in range(cfg.trials)]

    ks = traces[0].ks
    columns = {
        "alpha": np.mean([tr.alphas for tr in traces], axis=0),
        "eps": np.mean([tr.epss for tr in traces], axis=0),
        "inner_iters": np.mean([tr.inner_iters for tr in traces], axis=0),
    }
    per_trial = [compute_diagnostics(cfg, problem, tr, ref) for tr in traces]
    for name in cfg.diag_list:
        if name == "wall_ms":
            columns["wall_ms"] = np.mean([tr.wall_ms for tr in traces], axis=0)
            continue
        columns[name] = np.mean([pt[name] for pt in per_trial], axis=0)

    result = ExperimentResult(ks=ks, columns=columns, traces=traces, reference=ref)
    for name in cfg.diag_list:
        if name == "wall_ms":
            continue
        try:
            result.fits[name] = diag.fit_rate(ks, columns[name], cfg.fit_window)
        except diag.DiagnosticsError:
            result.fits[name] = None

    if out_dir is not None:
        write_artifacts(cfg, problem, result, out_dir)
    return result


def format_csv(ks: np.ndarray, columns: dict) -> str:
    names = [c for c in CSV_COLUMNS if c == "k" or c in columns]
    lines = [",".join(names)]
    for i, k in enumerate(ks):
        row = []
        for c in names:
            if c == "k":
                row.append(str(int(k)))
            else:
                row.append(repr(float(columns[c][i])))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def fit_report_text(fits: dict) -> str:
    lines = []
    for name in sorted(fits):
        f = fits[name]
        if f is None:
            lines.append(f"{name}: fit unavailable")
        else:
            lines.append(
                f"{name}: slope {f.slope:.6f} intercept {f.intercept:.6f} "
                f"window [{f.k_min}, {f.k_max}] rms {f.rms:.6f}"
            )
    return "\n".join(lines) + "\n"


def write_artifacts(cfg: ExperimentConfig, problem: Problem, result: ExperimentResult, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "series.csv").write_text(format_csv(result.ks, result.columns))
    (out / "fit_report.txt").write_text(fit_report_text(result.fits))
    (out / "resolved.cfg").write_text(dump_config(echo_sections(cfg, problem)))
    from .svgplot import write_loglog_svg

    plot_cols = {n: result.columns[n] for n in cfg.diag_list
                 if n != "wall_ms" and np.all(result.columns[n] > 0)}
    if plot_cols:
        guides = [f.slope for f in result.fits.values() if f is not None]
        write_loglog_svg(out / "series.svg", result.ks, plot_cols, guides=guides,
                         title="convergence diagnostics", xlabel="k", ylabel="value")
