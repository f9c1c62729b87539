"""Command-line driver for the experiment pipeline.

Exit codes: 0 success, 2 stage failure, 3 KS-rejection / domain failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .domain import DomainError, DomainFailure
from .dynamics import DynamicsError
from .executor import ExecutionError
from .lipschitz import LipschitzError
from .model import ModelError
from .pipeline import (
    StageFailure,
    load_config,
    stage_estimate,
    stage_evaluate,
    stage_execute,
    stage_gen_data,
    stage_plan,
    stage_plot,
    stage_select_domain,
    stage_train,
)
from .planner import PlanError

EXIT_OK = 0
EXIT_STAGE_FAILURE = 2
EXIT_DOMAIN_FAILURE = 3


def _add_common(p):
    p.add_argument("--config", help="JSON run configuration (overrides system defaults)")
    p.add_argument("--system", help="system name (sinusoid2d | quadrotor6d)")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--out", required=True, help="artifact directory")


def _parse_vector(text):
    return np.array([float(v) for v in text.split(",")])


def build_parser():
    ap = argparse.ArgumentParser(
        prog="trustplan",
        description="Plan and execute provably-safe trajectories with learned dynamics.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    for name, helptext in [
        ("gen-data", "generate training and estimation datasets"),
        ("train", "fit the control-affine model"),
        ("estimate", "run the Lipschitz estimator for f-g, g0, g1"),
        ("select-domain", "select the trusted-domain radius and error bound"),
        ("plan", "plan a single query"),
        ("execute", "roll out a stored plan under the true dynamics"),
        ("evaluate", "full pipeline with statistics over sampled queries"),
        ("plot", "render SVG overlays of stored plans and traces"),
    ]:
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        if name == "estimate":
            p.add_argument("--r", type=float, help="ball radius for the estimation domain")
        if name == "plan":
            p.add_argument("--start", help="comma-separated start state")
            p.add_argument("--goal", help="comma-separated goal state")
            p.add_argument("--naive", action="store_true", help="skip all trusted-domain checks")
            p.add_argument("--index", type=int, default=0, help="plan artifact index")
            p.add_argument("--lambda", dest="lam", type=float, help="goal tolerance")
        if name == "execute":
            p.add_argument("--plan", required=True, help="plan JSON produced by the plan stage")
            p.add_argument("--no-hold", action="store_true",
                           help="skip the goal-holding rollout")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, system=args.system, seed=args.seed, out=args.out)
        if args.command == "gen-data":
            stage_gen_data(cfg, args.out)
        elif args.command == "train":
            stage_train(cfg, args.out)
        elif args.command == "estimate":
            stage_estimate(cfg, args.out, r=args.r)
        elif args.command == "select-domain":
            stage_select_domain(cfg, args.out)
        elif args.command == "plan":
            start = _parse_vector(args.start) if args.start else None
            goal = _parse_vector(args.goal) if args.goal else None
            stage_plan(cfg, args.out, start=start, goal=goal, naive=args.naive,
                       index=args.index, lam=args.lam)
        elif args.command == "execute":
            stage_execute(cfg, args.out, args.plan, hold=not args.no_hold)
        elif args.command == "evaluate":
            summary = stage_evaluate(cfg, args.out)
            worst = max(r["max_track_err_cl"] for r in summary["runs"])
            print(f"evaluate: {summary['n_pairs']} queries, eps={summary['epsilon']:.4g}, "
                  f"worst CL tracking error {worst:.4g}")
        elif args.command == "plot":
            made = stage_plot(cfg, args.out)
            print(f"plot: wrote {len(made)} SVG file(s)")
    except DomainFailure as exc:
        print(f"trustplan {args.command}: domain failure ({exc.reason}): {exc}",
              file=sys.stderr)
        return EXIT_DOMAIN_FAILURE
    except (StageFailure, PlanError, ModelError, DomainError, DynamicsError,
            LipschitzError, ExecutionError, OSError, ValueError) as exc:
        print(f"trustplan {args.command}: {exc}", file=sys.stderr)
        return EXIT_STAGE_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
