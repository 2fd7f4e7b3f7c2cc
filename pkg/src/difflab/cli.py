"""Command-line entry points.

Subcommands: sample, train-amed, pca, align, bound-check, eval.  The default
output directory may be set through the DIFFLAB_OUTDIR environment variable;
everything else comes from flags or a JSON config file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .amed import TrainConfig, save_predictor, train
from .geometry import (
    BoundParams,
    cumulative_variance,
    grid_align,
    mc_shell_check,
    projection_error,
    write_alignment_csv,
)
from .harness import ENV_OUTDIR, load_run_config, nfe_to_steps, run_experiment
from .rng import stream
from .schedules import make_schedule, write_schedule_csv
from .score_models import load_model, oracle_solve
from .solvers import parse_solver_spec, sample
from .trajectory import read_trajectory_csv, write_trajectory_csv


def _parse_schedule_spec(spec: str):
    """'kind[,N[,rho]]', e.g. 'polynomial,6,7' or 'uniform,8'."""
    parts = [p.strip() for p in spec.split(",")]
    kind = parts[0]
    n = int(parts[1]) if len(parts) > 1 and parts[1] else None
    rho = float(parts[2]) if len(parts) > 2 and parts[2] else 7.0
    return kind, n, rho


def _out_path(path: str) -> str:
    outdir = os.environ.get(ENV_OUTDIR)
    if outdir and not os.path.isabs(path):
        os.makedirs(outdir, exist_ok=True)
        return os.path.join(outdir, path)
    return path


def _cmd_sample(args) -> int:
    model = load_model(args.model)
    solver = parse_solver_spec(args.solver, afs=args.afs)
    kind, n, rho = _parse_schedule_spec(args.schedule)
    if args.nfe is not None:
        n = nfe_to_steps(solver, args.nfe, args.afs)
    if n is None:
        raise SystemExit("schedule spec carries no N and --nfe not given")
    schedule = make_schedule(kind, n, args.t_min, args.t_max, rho=rho)
    if args.schedule_out:
        write_schedule_csv(schedule, _out_path(args.schedule_out))
    x_T = stream(args.seed, "x_T").standard_normal(model.dim) * schedule.t_max
    traj = sample(model, solver, schedule, x_T)
    write_trajectory_csv(traj, _out_path(args.out))
    print(f"wrote {args.out}: {len(traj.nodes)} nodes, nfe={traj.nfe}")
    return 0


def _cmd_train_amed(args) -> int:
    model = load_model(args.model)
    teacher = parse_solver_spec(args.teacher)
    student = None if args.student == "amed" else parse_solver_spec(args.student)
    cfg = TrainConfig(
        teacher=teacher,
        student=student,
        m=args.M,
        batch=args.batch,
        images=args.images,
        lr=args.lr,
        seed=args.seed,
        learn_time_scale=args.time_scale,
    )
    schedule = make_schedule(args.schedule_kind, args.N, args.t_min, args.t_max, rho=args.rho)
    result = train(model, cfg, schedule)
    save_predictor(result.params, _out_path(args.out))
    if args.loss_out:
        np.savetxt(_out_path(args.loss_out), result.losses, delimiter=",")
    print(
        f"trained on {args.images} images ({result.losses.shape[0]} loops); "
        f"first-loop mean loss {result.losses[0].mean():.6g}, "
        f"last-loop mean loss {result.losses[-1].mean():.6g}; wrote {args.out}"
    )
    return 0


def _cmd_pca(args) -> int:
    paths = [args.infile] if args.infile else []
    if args.batch_dir:
        paths += sorted(
            os.path.join(args.batch_dir, p)
            for p in os.listdir(args.batch_dir)
            if p.endswith(".csv")
        )
    if not paths:
        raise SystemExit("nothing to analyze: pass --in and/or --batch")
    errs, cums, times = [], [], None
    for p in paths:
        traj = read_trajectory_csv(p)
        errs.append(projection_error(traj, min(2, traj.states.shape[1])))
        cums.append(cumulative_variance(traj))
        times = traj.times
    err = np.mean(np.stack(errs), axis=0)
    cum = np.mean(np.stack(cums), axis=0)
    with open(_out_path(args.out), "w") as f:
        f.write("t,rel_projection_error_k2\n")
        for t, e in zip(times, err):
            f.write(f"{float(t)!r},{float(e)!r}\n")
    print(f"wrote {args.out} (averaged over {len(paths)} trajectories)" if len(paths) > 1 else f"wrote {args.out}")
    print("cumulative variance by k: " + ", ".join(f"{v:.6f}" for v in cum))
    return 0


def _cmd_align(args) -> int:
    model = load_model(args.model)
    base = parse_solver_spec(args.solver)
    lo, hi, step = (float(v) for v in args.grid.split(":"))
    grid = np.arange(lo, hi + 0.5 * step, step)
    schedule = make_schedule(args.schedule_kind, args.N, args.t_min, args.t_max, rho=args.rho)
    x_T = stream(args.seed, "align").standard_normal((args.batch, model.dim)) * schedule.t_max
    oracle = oracle_solve(model, x_T, schedule, substeps=args.oracle_substeps)
    result = grid_align(model, base, schedule, grid, oracle)
    write_alignment_csv(result, _out_path(args.out))
    print(f"wrote {args.out}; mean alignment per step: "
          + ", ".join(f"{v:.6g}" for v in result.mean_alignment))
    return 0


def _cmd_bound_check(args) -> int:
    params = BoundParams(a=args.a, b=args.b, d=args.d) if args.a else BoundParams.default(args.d)
    rep = mc_shell_check(params, args.s, args.t, trials=args.trials, seed=args.seed,
                         substeps=args.substeps)
    doc = {
        "mean_norm": rep.mean_norm,
        "rel_std": rep.rel_std,
        "shell_radius": rep.radius,
        "ratio": rep.mean_norm / rep.radius,
        "trials": rep.trials,
        "substeps": rep.substeps,
    }
    print(json.dumps(doc, indent=2))
    return 0


def _cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    report = run_experiment(cfg)
    for e in report.entries:
        print(
            f"{e.solver:>14s}  nfe={e.nfe:<3d} endpoint_l2={e.mean_endpoint_l2:.6g} "
            f"sliced_w2={e.sliced_w2:.6g}"
        )
    for label, order in report.orders.items():
        if order is not None:
            print(f"{label:>14s}  empirical order {order:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="difflab")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_schedule_flags(p, default_n=None):
        p.add_argument("--schedule-kind", default="polynomial",
                       choices=("polynomial", "logsnr", "uniform"))
        p.add_argument("--rho", type=float, default=7.0)
        p.add_argument("--t-min", type=float, default=0.002)
        p.add_argument("--t-max", type=float, default=80.0)
        if default_n is not None:
            p.add_argument("--N", type=int, default=default_n)

    p = sub.add_parser("sample", help="run one solver and dump the trajectory CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--solver", required=True)
    p.add_argument("--schedule", default="polynomial,8,7",
                   help="kind[,N[,rho]]; N may be overridden by --nfe")
    p.add_argument("--nfe", type=int, default=None)
    p.add_argument("--afs", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-min", type=float, default=0.002)
    p.add_argument("--t-max", type=float, default=80.0)
    p.add_argument("--out", default="traj.csv")
    p.add_argument("--schedule-out", default=None)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("train-amed", help="distill the step predictor")
    p.add_argument("--model", required=True)
    p.add_argument("--student", default="amed", help="'amed' or a base solver spec")
    p.add_argument("--teacher", required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--M", type=int, default=2)
    p.add_argument("--images", type=int, default=10_000)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--time-scale", action="store_true")
    p.add_argument("--out", default="predictor.json")
    p.add_argument("--loss-out", default=None)
    add_schedule_flags(p)
    p.set_defaults(func=_cmd_train_amed)

    p = sub.add_parser("pca", help="planarity analysis of trajectory CSV dumps")
    p.add_argument("--in", dest="infile", default=None)
    p.add_argument("--batch", dest="batch_dir", default=None)
    p.add_argument("--out", default="pca.csv")
    p.set_defaults(func=_cmd_pca)

    p = sub.add_parser("align", help="greedy split-point grid search vs the reference")
    p.add_argument("--model", required=True)
    p.add_argument("--solver", required=True)
    p.add_argument("--grid", default="0.1:1.0:0.1", help="lo:hi:step")
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle-substeps", type=int, default=128)
    p.add_argument("--out", default="align.csv")
    add_schedule_flags(p, default_n=6)
    p.set_defaults(func=_cmd_align)

    p = sub.add_parser("bound-check", help="Monte-Carlo check of the shell radius")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--trials", type=int, default=4096)
    p.add_argument("--substeps", type=int, default=200)
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--b", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_bound_check)

    p = sub.add_parser("eval", help="batch experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_eval)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
