"""Train the step predictor and report held-out endpoint error across budgets.

For each evaluation budget the script trains the learned single-step solver
(or the wrapped form of a base solver) against its refined-schedule teacher
and compares trained vs untrained held-out endpoint error against the
reference integrator, mirroring the low-budget sweep tables.
"""

import argparse
import sys

import numpy as np

import difflab as dl
from difflab import amed


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default=None, help="model JSON; a built-in 4-mode mixture if omitted")
    ap.add_argument("--base", default="amed", help="'amed' or a base solver to wrap")
    ap.add_argument("--teacher", default=None, help="defaults: dpm2 for amed, the base itself otherwise")
    ap.add_argument("--nfe", type=int, nargs="+", default=[4, 6, 8])
    ap.add_argument("--M", type=int, nargs="+", default=None,
                    help="teacher refinement; several values give a sensitivity table")
    ap.add_argument("--images", type=int, default=10_000)
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--lr", type=float, default=None)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--time-scale", action="store_true")
    ap.add_argument("--held-out", type=int, default=256)
    ap.add_argument("--rho", type=float, default=7.0)
    ap.add_argument("--t-min", type=float, default=0.002)
    ap.add_argument("--t-max", type=float, default=80.0)
    args = ap.parse_args(argv)

    if args.model:
        model = dl.load_model(args.model)
    else:
        rng = dl.stream(9, "gmm")
        means = rng.uniform(-6, 6, (4, 16))
        w = rng.uniform(0.5, 1.5, 4)
        w /= w.sum()
        model = dl.GaussianMixture(weights=w, means=means, stds=rng.uniform(0.1, 0.3, 4))

    single = args.base == "amed"
    student = None if single else dl.SolverKind(args.base)
    teacher_spec = args.teacher or ("dpm2" if single else args.base)
    teacher = dl.SolverKind(teacher_spec)
    m_values = args.M if args.M is not None else [1 if teacher.tag == "dpm2" else 2]
    lr = args.lr if args.lr is not None else (1e-3 if single else 3e-3)
    held = dl.stream(77, "held").standard_normal((args.held_out, model.dim)) * args.t_max

    label = "learned single-step" if single else f"wrapped {student.tag}"
    print(f"{label}; teacher {teacher.tag}, {args.images} images, lr {lr:g}")
    for m in m_values:
        print(f"M = {m}:")
        for nfe in args.nfe:
            n = nfe // 2 + 1
            sch = dl.make_schedule("polynomial", n, args.t_min, args.t_max, rho=args.rho)
            untrained = float(np.mean(amed.endpoint_errors(
                model, amed.PredictorParams.zeros(), sch, held, base=student)))
            cfg = amed.TrainConfig(
                teacher=teacher, student=student, m=m, batch=args.batch,
                images=args.images, lr=lr, seed=args.seed, learn_time_scale=args.time_scale,
            )
            result = amed.train(model, cfg, sch)
            trained = float(np.mean(amed.endpoint_errors(model, result.params, sch, held, base=student)))
            gain = (untrained - trained) / untrained * 100.0
            print(f"  NFE {nfe:2d} (N={n}): untrained {untrained:9.4f}  trained {trained:9.4f}  ({gain:+.1f}%)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
