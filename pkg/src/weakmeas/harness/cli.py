"""Command line entry point: ``weakmeas <experiment-id> [options]``.

Exit status: 0 if every asserted check passed, 1 if a check failed,
2 for invalid input (bad spec, model file or violated precondition).
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..lindblad import PreconditionError
from ..model import ModelError
from .bundle import EXPERIMENTS, ExperimentSpec, SpecError
from .experiments import run

log = logging.getLogger("weakmeas")


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weakmeas", description="Weak-measurement jump-process experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--model", help="TOML model file (default: reference qubit model)")
    p.add_argument("--eps", type=_floats, help="comma-separated epsilon values")
    p.add_argument("--alpha", type=float, help="window coefficient, T = alpha |log eps|")
    p.add_argument("--window", type=float, help="raw window length, overrides alpha (required at eps = 0)")
    p.add_argument("--horizon", type=float, help="rescaled horizon s")
    p.add_argument("--traj", type=int, help="number of trajectories")
    p.add_argument("--snapshots", type=_floats, default=(), help="rescaled snapshot times (simulate)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--mode", choices=("apriori", "physical"), default="physical")
    p.add_argument("--rho0", help="initial state: P<k>, plus or mixed")
    p.add_argument("--strict-alpha", action="store_true",
                   help="require alpha >= alpha0 including the safety margin")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    spec = ExperimentSpec(experiment=args.experiment, model=args.model, eps=args.eps, alpha=args.alpha,
                          horizon=args.horizon, traj=args.traj, snapshots=args.snapshots, seed=args.seed,
                          out=args.out, mode=args.mode, strict_alpha=args.strict_alpha, rho0=args.rho0,
                          window=args.window)
    try:
        bundle = run(spec)
    except (SpecError, ModelError, PreconditionError, ValueError) as exc:
        print(f"weakmeas: error: {exc}", file=sys.stderr)
        return 2
    for path in bundle.write(args.out):
        log.info("wrote %s", path)
    for m in bundle.metrics:
        flag = "PASS" if m["pass"] else "FAIL"
        if not m["gating"]:
            flag = "info" if m["comparison"] == "report" else ("info" if m["pass"] else "warn")
        tol = "" if m["tolerance"] is None else f" {m['comparison']} {m['tolerance']}"
        print(f"[{flag}] {m['name']}: {m['value']}{tol}")
    print("all checks passed" if bundle.passed else f"{len(bundle.failures())} check(s) failed")
    return 0 if bundle.passed else 1


if __name__ == "__main__":
    sys.exit(main())
