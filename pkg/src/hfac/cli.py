"""Command-line entry point: ``hfac run | descent-suite | memory-report | gradcheck``."""

import argparse
import dataclasses
import json
import sys

from . import harness
from .problems import OBJECTIVE_KINDS, canonical_kind, gradient_check, make_objective

# TwoLayerMLP gets a looser gradient tolerance because tanh/softmax
# compositions lose more digits under central differences.
GRADCHECK_TOL = {"two_layer_mlp": 1e-3}
DEFAULT_GRADCHECK_TOL = 1e-4


def _cmd_run(args):
    config = harness.load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.steps is not None:
        config = dataclasses.replace(config, steps=args.steps)
    result = harness.run_experiment(config, output_dir=args.output)
    print(json.dumps(result.summary, sort_keys=True))
    for kind, path in result.paths.items():
        print(f"wrote {kind}: {path}", file=sys.stderr)
    return 0


def _cmd_descent_suite(args):
    hs = tuple(args.h) if args.h else (1e-2, 1e-3, 1e-4)
    reports, ok = harness.run_descent_suite(hs=hs, n_steps=args.steps)
    for rep in reports:
        print(rep.summary_line())
    if args.json:
        with open(args.json, "w") as fh:
            json.dump([r.to_dict() for r in reports], fh, indent=2)
    n_req = sum(r.required for r in reports)
    n_fail = sum(r.required and not r.passed for r in reports)
    print(f"required checks: {n_req - n_fail}/{n_req} passed")
    return 0 if ok else 1


def _cmd_memory_report(args):
    rows = harness.memory_report(harness.parse_shapes(args.shapes))
    if args.format == "csv":
        sys.stdout.write(harness.render_memory_csv(rows))
    else:
        sys.stdout.write(harness.render_memory_text(rows))
    return 0


def _cmd_gradcheck(args):
    kinds = OBJECTIVE_KINDS if args.objective == "all" else (args.objective,)
    ok = True
    for kind in kinds:
        obj = make_objective(kind, seed=args.seed or 0)
        err = gradient_check(obj, n_points=args.points, seed=args.seed or 0)
        tol = GRADCHECK_TOL.get(canonical_kind(kind), DEFAULT_GRADCHECK_TOL)
        passed = err <= tol
        ok &= passed
        print(f"{kind}: max relative error {err:.3e} (tol {tol:g}) {'PASS' if passed else 'FAIL'}")
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="hfac", description=__doc__)
    parser.add_argument("--seed", type=int, default=None, help="override the config/default seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--output", default=None, help="output directory (env %s wins)" % harness.OUTPUT_DIR_ENV)
    p.add_argument("--steps", type=int, default=None, help="override the config step count")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("descent-suite", help="check Hamiltonian descent of the ODE flows")
    p.add_argument("--h", type=float, nargs="+", default=None, help="step sizes (default 1e-2 1e-3 1e-4)")
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--json", default=None, help="also write the reports as JSON here")
    p.set_defaults(func=_cmd_descent_suite)

    p = sub.add_parser("memory-report", help="optimizer state sizes per shape")
    p.add_argument("--shapes", required=True, help="comma-separated MxN list, e.g. 4x3,1024x1024")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.set_defaults(func=_cmd_memory_report)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--objective", required=True, help=f"one of {', '.join(OBJECTIVE_KINDS)} or 'all'")
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (harness.ConfigError, harness.NumericalBlowUp, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
