"""Command-line harness: gen, ref, run, fit, plot.

Every subcommand takes --config PATH; --seed, --trials, and --out override
the corresponding config values.  Trial parallelism is capped by the
ISPPPA_THREADS environment variable.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .data import gen_synthetic, save_dataset
from .diagnostics import fit_rate
from .experiment import (
    build_problem,
    config_from_sections,
    fit_report_text,
    load_config,
    run_experiment,
)
from .reference import reference_solve, save_reference


def _load_cfg(args):
    cfg = config_from_sections(load_config(args.config))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "trials", None) is not None:
        cfg.trials = args.trials
    return cfg


def cmd_gen(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = gen_synthetic(cfg.dataset)
    save_dataset(ds, out / "dataset.bin")
    print(f"wrote {out / 'dataset.bin'} ({ds.A.shape[0]} x {ds.A.shape[1]}, kind {ds.kind})")
    return 0


def cmd_ref(args) -> int:
    cfg = _load_cfg(args)
    dataset = gen_synthetic(cfg.dataset)
    problem = build_problem(cfg, dataset)
    ref = reference_solve(problem, tol=args.tol if args.tol else cfg.ref_tol,
                          kkt_alpha=cfg.kkt_alpha)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_reference(ref, out / "reference.bin")
    print(f"phi_hat = {ref.phi_hat!r}  kkt = {ref.kkt:.3e}  -> {out / 'reference.bin'}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    result = run_experiment(cfg, out_dir=args.out)
    print(f"ran {cfg.trials} trial(s), K = {cfg.K}; artifacts in {args.out}")
    for name, fit in result.fits.items():
        if fit is not None:
            print(f"  {name}: slope {fit.slope:.4f} over [{fit.k_min}, {fit.k_max}]")
    return 0


def _read_csv(path):
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    return header, data


def cmd_fit(args) -> int:
    header, data = _read_csv(args.csv)
    ks = data[:, header.index("k")]
    fits = {}
    for i, name in enumerate(header):
        if name in ("k", "alpha", "eps", "inner_iters", "wall_ms"):
            continue
        vals = data[:, i]
        try:
            fits[name] = fit_rate(ks, vals, args.window)
        except Exception:
            fits[name] = None
    text = fit_report_text(fits)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "fit_report.txt").write_text(text)
    return 0


def cmd_plot(args) -> int:
    from .svgplot import write_loglog_svg

    header, data = _read_csv(args.csv)
    ks = data[:, header.index("k")]
    series = {}
    for i, name in enumerate(header):
        if name in ("k", "alpha", "eps", "inner_iters", "wall_ms"):
            continue
        if np.all(data[:, i] > 0):
            series[name] = data[:, i]
    out = Path(args.out) if args.out else Path(args.csv).with_suffix(".svg")
    if out.is_dir():
        out = out / (Path(args.csv).stem + ".svg")
    write_loglog_svg(out, ks, series)
    print(f"wrote {out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ispppa",
                                     description="stochastic preconditioned proximal point benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate and persist a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("ref", help="compute and persist the reference solution")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float)
    p.set_defaults(func=cmd_ref)

    p = sub.add_parser("run", help="run the experiment described by a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("fit", help="fit log-log slopes from a series CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--window", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("plot", help="render a series CSV as a log-log SVG")
    p.add_argument("--csv", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_plot)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
