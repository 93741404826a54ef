"""Command line entry point: ``racedc run --experiment lasso ...``."""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (
    ConfigError, ExcessiveFailures, ExperimentConfig, emit_csv, emit_plotdata, full_scale,
    run_experiment, trace_session,
)

MEAN_MODES = {"iid": "identical", "noniid": "batch_means"}

# experiment -> batch counts used when --batches is not given
DEFAULT_BATCHES = {
    "lasso": (50, 100, 200, 400),
    "ridge": (50, 100, 200, 400),
    "pce": (50, 100, 200, 400),
    "nonlinear": (50, 100, 200, 400),
}


def _int_list(text):
    try:
        vals = tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty batch list")
    return vals


def build_parser():
    ap = argparse.ArgumentParser(prog="racedc", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one simulation design and write metrics")
    run.add_argument("--experiment", required=True, choices=["lasso", "ridge", "pce", "nonlinear"])
    run.add_argument("--n", type=int, help="total sample size (default 4000)")
    run.add_argument("--batches", type=_int_list, help="comma-separated batch counts N")
    run.add_argument("--reps", type=int, help="Monte Carlo replications (default 100)")
    run.add_argument("--projections", type=int, help="projection draws R (default 50)")
    run.add_argument("--k1", type=float, default=0.1)
    run.add_argument("--k2", type=float, default=0.1)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--mean-mode", choices=sorted(MEAN_MODES), default="iid")
    run.add_argument("--tuning", choices=["hk", "cv"], default="hk")
    run.add_argument("--pce-rank", type=int, default=5)
    run.add_argument("--threshold", choices=["none", "hard", "soft", "both"], default=None,
                     help="thresholded race variants (default: both for lasso, none otherwise)")
    run.add_argument("--weights", choices=["ridge_sigma", "unit"], default="ridge_sigma")
    run.add_argument("--jobs", type=int, default=1, help="worker processes for replications")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--paper-scale", action="store_true",
                     help="n=10000, reps=500, R=200 unless overridden")
    run.add_argument("--protocol-trace", metavar="PATH",
                     help="also replay replication 0 as a message-passing session")
    run.add_argument("--stacked-projections", action="store_true",
                     help="solve one regression over all N*R records (experimental)")
    run.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args):
    base = ExperimentConfig(experiment=args.experiment,
                            N_list=DEFAULT_BATCHES[args.experiment])
    if args.paper_scale:
        base = full_scale(base)
    over = {k: v for k, v in {"n": args.n, "N_list": args.batches, "reps": args.reps,
                              "R": args.projections}.items() if v is not None}
    thr = args.threshold or ("both" if args.experiment == "lasso" else "none")
    cfg = replace(base, **over, k1=args.k1, k2=args.k2, seed=args.seed,
                  mean_mode=MEAN_MODES[args.mean_mode], tuning_mode=args.tuning,
                  r=args.pce_rank, threshold_mode=thr, weight_mode=args.weights,
                  stacked=args.stacked_projections, n_jobs=args.jobs,
                  output_dir=args.out)
    return cfg.validate()


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except (ConfigError, ValueError) as e:
        print(f"racedc: configuration error: {e}", file=sys.stderr)
        return 1

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    code = 0
    try:
        report = run_experiment(cfg)
    except ExcessiveFailures as e:
        print(f"racedc: {e}", file=sys.stderr)
        report, code = e.report, 2
    emit_csv(report, out / "metrics.csv")
    emit_plotdata(report, out / "plotdata.csv")
    if args.protocol_trace:
        _, stats = trace_session(cfg, args.protocol_trace)
        logging.getLogger(__name__).info("trace: %d rounds, %d upstream scalars per worker",
                                         stats.rounds, stats.upstream_scalars_per_worker)
    for N in cfg.N_list:
        parts = [f"{m}={report.summed_mse(m, N):.4g}" for m in report.methods
                 if (m, N) in report.errors]
        print(f"N={N}: summed MSE " + " ".join(parts))
    if report.iterations:
        print(f"mean outer iterations: {report.mean_iterations():.2f}")
    return code


if __name__ == "__main__":
    sys.exit(main())
