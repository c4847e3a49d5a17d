"""Command-line entry point: ``pame {validate,run,sweep,oracle}``.

Exit codes: 0 success, 1 hard error, 2 validation warnings, 3 run stopped at
``max_iters``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from pame import analysis
from pame.config import build_problem, load_config, run_config
from pame.engine import run, summary_json, validate_setup, write_metrics_csv
from pame.errors import PameError, TooFewPoints, UnknownOracle
from pame.losses import epsilon_estimate, lipschitz_constant
from pame.pme import srswor_moments
from pame.rng import Purpose, stream
from pame.topology import communication_matrix

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_WARN = 2
EXIT_MAX_ITERS = 3

ORACLES = ("unbiasedness", "srswor", "gradcheck")
# Neighbor vectors of the three-sender worked example; their mean is [3, 7, 1, 5].
EXAMPLE_VECTORS = ((2, 8, 1, 4), (4, 7, 2, 5), (3, 6, 0, 6))

logger = logging.getLogger("pame")


def _say(args: argparse.Namespace, text: str) -> None:
    if not args.quiet:
        print(text)


def _write_effective(out: Path, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def cmd_validate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.override)
    problem = build_problem(cfg)
    zeta = communication_matrix(problem.graph).zeta
    rcfg = run_config(cfg)
    alpha_max = max(lipschitz_constant(problem.loss, ds) for ds in problem.datasets)
    eps_hat = epsilon_estimate(
        problem.loss, problem.datasets, rcfg.delta, trials=int(cfg["validate"]["eps_trials"]), seed=cfg["seed"]
    )
    report = validate_setup(problem, rcfg, zeta, alpha_max, eps_hat)
    lo, hi = report.gamma_interval
    _say(args, f"zeta            {report.zeta:.10g}")
    _say(args, f"gamma interval  ({lo:g}, {hi:.6g})   gamma={report.gamma:g}  k0={report.k0}")
    _say(args, f"condition rhs   {report.rhs:.6g}")
    for i, (margin, ok) in enumerate(zip(report.margins, report.node_pass)):
        _say(args, f"  node {i:4d}  margin {margin:+.6g}  {'pass' if ok else 'FAIL'}")
    _say(args, f"sigma_required  {report.sigma_required:.6g}  (alpha_max={alpha_max:.6g}, eps_hat={eps_hat:.6g})")
    _say(args, f"sigma0          {report.sigma0:g}  {'pass' if report.sigma_ok else 'WARN'}")
    out = Path(args.out)
    _write_effective(out, cfg)
    (out / "setup_report.json").write_text(json.dumps(report.to_json(), indent=2) + "\n")
    _say(args, "verdict         " + ("pass" if report.passed else f"{len(report.warnings)} warning(s)"))
    return EXIT_OK if report.passed else EXIT_WARN


def _rate_fit(records) -> tuple[float | None, float | None]:
    objs = np.array([r.objective for r in records])
    try:
        fit = analysis.fit_linear_rate(np.abs(objs - objs[-1]))
    except TooFewPoints:
        return None, None
    return fit.slope, fit.r2


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.override)
    problem = build_problem(cfg)
    result = run(problem, run_config(cfg), threads=args.threads)
    out = Path(args.out)
    _write_effective(out, cfg)
    write_metrics_csv(out / "metrics.csv", result.records)
    slope, r2 = _rate_fit(result.records)
    (out / "summary.json").write_text(summary_json(result, slope, r2))
    _say(
        args,
        f"{result.status}: {result.iters} iterations, objective {result.final_objective:.6g}, "
        f"{result.total_bits} bits",
    )
    return EXIT_OK if result.status == "converged" else EXIT_MAX_ITERS


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, args.override)
    sw = cfg["sweep"]
    axis = sw["axis"]
    values = sw["values"]
    if axis == "comm_period":
        values = [v if isinstance(v, int) else tuple(v) for v in values]

    def make_problem(value, seed):
        cell = dict(cfg, seed=seed)
        return build_problem(cell, degree=int(value) if axis == "degree" else None)

    template = run_config(cfg)
    result = analysis.sweep(make_problem, template, axis, values, [int(s) for s in sw["seeds"]], args.threads)
    out = Path(args.out)
    _write_effective(out, cfg)
    path = analysis.write_sweep(out, result, {"config": "effective_config.json"})
    for a, value in enumerate(result.values):
        _say(
            args,
            f"{axis}={value}: mean objective {result.mean_objective(a):.6g}, mean bits {result.mean_bits(a):.6g}",
        )
    _say(args, f"wrote {path}")
    return EXIT_OK if not result.errors else EXIT_WARN


def cmd_oracle(args: argparse.Namespace) -> int:
    if args.which not in ORACLES:
        raise UnknownOracle(f"unknown oracle {args.which!r}; choose from {', '.join(ORACLES)}")
    if args.which == "unbiasedness":
        rep = analysis.unbiasedness_test(3, 4, 2, EXAMPLE_VECTORS, trials=args.trials, seed=args.seed)
        _say(args, f"target             {rep.target.tolist()}")
        _say(args, f"conditional mean   {rep.cond_mean.tolist()}  (stderr {rep.cond_stderr.tolist()})")
        _say(args, f"naive mean         {rep.naive_mean.tolist()}  vs {(rep.ratio * rep.target).tolist()}")
        ok = rep.passed
    elif args.which == "srswor":
        rng = stream(args.seed, Purpose.ORACLE)
        x = [int(v) for v in rng.integers(-20, 21, size=args.q)]
        got = srswor_moments(x, args.r)
        var, second = analysis.srswor_enumeration(x, args.r)
        ok = got.variance == var and got.second_moment == second and got.bound_holds
        _say(args, f"x={x} r={args.r}: variance {got.variance} vs enumeration {var}")
    else:
        kind = {"linear": "LinearRegression", "logistic": "Logistic"}.get(args.loss, args.loss)
        chk = analysis.gradient_check(kind, trials=args.trials, seed=args.seed)
        _say(args, f"max relative error {chk.max_rel_error:.3e} over {chk.trials} trials")
        ok = chk.passed
    _say(args, "pass" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", default="pame_out", help="output directory")
    common.add_argument("--override", action="append", default=[], metavar="K=V", help="dotted-key override")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    common.add_argument("--quiet", action="store_true", help="suppress console output")

    parser = argparse.ArgumentParser(prog="pame", description="Partial-message-exchange DFL simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check setup conditions").set_defaults(func=cmd_validate)
    sub.add_parser("run", parents=[common], help="run one experiment").set_defaults(func=cmd_run)
    sub.add_parser("sweep", parents=[common], help="sweep one parameter axis").set_defaults(func=cmd_sweep)
    oracle = sub.add_parser("oracle", parents=[common], help="run a built-in correctness oracle")
    oracle.add_argument("which", help="|".join(ORACLES))
    oracle.add_argument("--trials", type=int, default=None)
    oracle.add_argument("--seed", type=int, default=0)
    oracle.add_argument("--q", type=int, default=6)
    oracle.add_argument("--r", type=int, default=3)
    oracle.add_argument("--loss", default="logistic")
    oracle.set_defaults(func=cmd_oracle)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.command == "oracle" and args.trials is None:
        args.trials = 100_000 if args.which == "unbiasedness" else 100
    if args.threads < 1:
        parser.error("--threads must be positive")
    try:
        return args.func(args)
    except (PameError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
