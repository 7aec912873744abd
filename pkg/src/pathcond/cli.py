"""Command-line entry point: ``pathcond <subcommand> ...``.

Exit codes: 0 on success, 1 on a configuration error (bad flags, missing or
malformed files), 2 on a numerical failure (degenerate or overflowing path
diagonal, non-finite results).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import experiments as ex
from .netgraph import GraphError, incidence, load_params, load_spec, save_params
from .nncore import InitConfig, TrainConfig, gaussian_blobs, init, read_dataset, teacher_student
from .pathdiag import diag_g_fast, summary
from .pathoracle import path_count_fast
from .regimes import (A_VALUES, PathCondConfig, rank_correlation, regime_report,
                      sample_architectures)
from .rescale import DegenerateDiagonalError, enorm, objective_F, pathcond

log = logging.getLogger("pathcond")


class ConfigError(Exception):
    """Raised for anything the user can fix by changing the invocation."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: error: {message}")


def _widths(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _outdir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite values in the result")


# -- subcommands ----------------------------------------------------------------

def cmd_toy(args) -> int:
    out = _outdir(args.out)
    rows, summ = ex.toy_flow(lr=args.lr, steps=args.steps, seed=args.seed, n=args.n,
                             record_every=args.record_every)
    ex.write_toy_csv(os.path.join(out, "metrics.csv"), rows)
    ex.write_json(os.path.join(out, "report.json"), {"inits": summ})
    ex.write_json(os.path.join(out, "manifest.json"), ex.manifest("toy", vars_of(args)))
    print(json.dumps({s["init_id"]: s["loss_at_5000"] for s in summ}))
    return 0


def _dataset(args, widths):
    if args.data:
        X, Y = read_dataset(args.data)
    elif args.dataset == "teacher":
        X, Y = teacher_student(widths, args.n, seed=args.seed, noise=args.noise)
    else:
        X, Y = gaussian_blobs(args.n, widths[0], widths[-1], seed=args.seed)
    if X.shape[1] != widths[0] or Y.shape[1] != widths[-1]:
        raise ConfigError(f"data shape {X.shape[1]}->{Y.shape[1]} does not match widths {widths}")
    return X, Y


def cmd_train(args) -> int:
    out = _outdir(args.out)
    if args.net:
        net = load_spec(args.net)
        widths, with_bias = net.widths, net.with_bias
    else:
        widths, with_bias = args.widths, not args.no_bias
    X, Y = _dataset(args, widths)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                      loss=args.loss, seed=args.seed)
    init_cfg = InitConfig(args.init, a=args.init_a, seed=args.seed)
    rows, summ = ex.train_compare(widths, X, Y, methods=args.methods, cfg=cfg, init_cfg=init_cfg,
                                  with_bias=with_bias, target_frac=args.target_frac,
                                  pathcond_every=args.pathcond_every)
    _finite([r[3] for r in rows])
    ex.write_metrics_csv(os.path.join(out, "metrics.csv"), rows)
    ex.write_json(os.path.join(out, "report.json"), summ)
    config = ex.config_dict(args=vars_of(args), train=cfg, init=init_cfg, widths=list(widths))
    ex.write_json(os.path.join(out, "manifest.json"), ex.manifest("train_compare", config))
    print(json.dumps({m: v["epochs_to_target"] for m, v in summ["methods"].items()}))
    return 0


def cmd_regimes(args) -> int:
    out = _outdir(args.out)
    archs = sample_architectures(args.count, depth=args.depth, mean_width=args.mean_width,
                                 n_in=args.n_in, n_out=args.n_out, seed=args.seed)
    cfg = PathCondConfig(tol=args.tol, max_sweeps=args.max_sweeps)
    rows = regime_report(archs, args.a, seed=args.seed, with_bias=args.with_bias, cfg=cfg)
    with open(os.path.join(out, "regimes.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["arch_id", "width_ratio", "a", "log_rescale_inf", "expected_spread"])
        for r in rows:
            wr.writerow([r["arch_id"]] + [ex._fmt(r[k]) for k in
                                          ("width_ratio", "a", "log_rescale_inf", "expected_spread")])
    corr = {str(a): rank_correlation(rows, a) for a in args.a}
    ex.write_json(os.path.join(out, "report.json"),
                  {"architectures": archs, "rank_correlation": corr, "rows": rows})
    ex.write_json(os.path.join(out, "manifest.json"), ex.manifest("regimes", vars_of(args)))
    print(json.dumps(corr))
    return 0


def cmd_rescale(args) -> int:
    net = load_spec(args.net)
    theta = load_params(args.params, net)
    report = {"method": args.method}
    if args.method == "pathcond":
        cfg = PathCondConfig(tol=args.tol, max_sweeps=args.max_sweeps)
        new, sol = pathcond(net, theta, cfg)
        u = sol.u
        report.update({
            "u": {"min": float(u.min(initial=0)), "max": float(u.max(initial=0)),
                  "mean": float(u.mean()) if u.size else 0.0,
                  "abs_max": float(np.abs(u).max(initial=0))},
            "log_rescale_inf": sol.log_rescale_inf,
            "sweeps": sol.sweeps,
            "converged": sol.converged,
            "objective_trace": sol.objective_trace,
            "skipped_neurons": sol.skipped,
        })
    else:
        new = enorm(net, theta, args.cycles)
        with np.errstate(divide="ignore"):
            logd = np.log(np.abs(new)) - np.log(np.abs(theta))
        logd = logd[np.isfinite(logd)]
        g0, g1 = diag_g_fast(net, theta), diag_g_fast(net, new)
        inc = incidence(net)
        report.update({
            "cycles": args.cycles,
            "log_rescale_inf": float(np.abs(logd).max(initial=0)),
            "objective_before": objective_F(np.zeros(inc.H), g0, inc),
            "objective_after": objective_F(np.zeros(inc.H), g1, inc),
        })
    _finite(new)
    save_params(new, args.out, net, binary=args.binary)
    report_dir = os.path.dirname(os.path.abspath(args.report))
    os.makedirs(report_dir, exist_ok=True)
    ex.write_json(args.report, report)
    ex.write_json(os.path.join(report_dir, "manifest.json"), ex.manifest("rescale", vars_of(args)))
    print(f"log_rescale_inf={report['log_rescale_inf']:.6g}")
    return 0


def cmd_pathcount(args) -> int:
    count = path_count_fast(load_spec(args.net))
    print(int(round(count)) if count < 2**53 else f"{count:.17g}")
    return 0


def cmd_diag(args) -> int:
    net = load_spec(args.net)
    if args.params:
        theta = load_params(args.params, net)
    else:
        theta = init(net, InitConfig(args.init, a=args.init_a, seed=args.seed))
    g = diag_g_fast(net, theta)
    _finite(g)
    print(json.dumps(summary(net, g), indent=2))
    return 0


def vars_of(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pathcond", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("toy", help="gradient descent on the one-neuron model, raw vs rescaled")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--n", type=int, default=256, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--record-every", type=int, default=10)
    p.add_argument("--out", default="runs/toy")
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("train", help="compare baseline, PathCond-at-init and ENorm under SGD")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--net", help="graph spec JSON")
    src.add_argument("--widths", type=_widths, default=[16, 32, 8, 32, 1])
    p.add_argument("--no-bias", action="store_true")
    p.add_argument("--dataset", choices=("teacher", "blobs"), default="teacher")
    p.add_argument("--data", help="CSV with x_* and y_* columns (overrides --dataset)")
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--methods", type=lambda s: tuple(s.split(",")), default=ex.METHODS)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--loss", choices=("mse", "cross_entropy"), default="mse")
    p.add_argument("--init", choices=("kaiming_uniform", "gaussian_scaled"), default="gaussian_scaled")
    p.add_argument("--init-a", type=float, default=0.05)
    p.add_argument("--target-frac", type=float, default=0.1)
    p.add_argument("--pathcond-every", type=int, default=0,
                   help="also rescale every k epochs (0: only at init)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("regimes", help="width ratio vs log-rescaling over Dirichlet architectures")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--mean-width", type=int, default=32)
    p.add_argument("--n-in", type=int, default=32)
    p.add_argument("--n-out", type=int, default=32)
    p.add_argument("--a", type=_floats, default=list(A_VALUES))
    p.add_argument("--with-bias", action="store_true")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-sweeps", type=int, default=20_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/regimes")
    p.set_defaults(func=cmd_regimes)

    p = sub.add_parser("rescale", help="rescale a parameter file")
    p.add_argument("--net", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--method", choices=("pathcond", "enorm"), default="pathcond")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-sweeps", type=int, default=50)
    p.add_argument("--cycles", type=int, default=1, help="ENorm cycles")
    p.add_argument("--binary", action="store_true", help="write raw f8 plus a JSON sidecar")
    p.add_argument("--out", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_rescale)

    p = sub.add_parser("pathcount", help="print the number of paths")
    p.add_argument("--net", required=True)
    p.set_defaults(func=cmd_pathcount)

    p = sub.add_parser("diag", help="print a summary of the path-Gram diagonal")
    p.add_argument("--net", required=True)
    p.add_argument("--params")
    p.add_argument("--init", choices=("kaiming_uniform", "gaussian_scaled"), default="kaiming_uniform")
    p.add_argument("--init-a", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_diag)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DegenerateDiagonalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, GraphError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
