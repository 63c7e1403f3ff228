#!/usr/bin/env python3
"""
Carbon Dispatch CLI - run experiments, compare runs and check derivatives
Exit codes: 0 converged, 2 iteration limit, 3 infeasible or failed, 4 input error
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

# Add parent directory to path for package imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

try:
    from dotenv import load_dotenv
    DOTENV_AVAILABLE = True
except ImportError:
    print("⚠️ python-dotenv not installed; .env file ignored")
    DOTENV_AVAILABLE = False

from cli.experiment_runner import METHODS, RunConfig, create_experiment_runner

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carbon-dispatch",
        description="Carbon-aware power dispatch with carbon-aware demand response",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_inputs(p: argparse.ArgumentParser) -> None:
        p.add_argument("--case", default="case39", help="case file or bundled name (default: case39)")
        p.add_argument("--scenario", default="day", help="scenario file or bundled name (default: day)")
        p.add_argument("--ce", type=float, default=None, help="users' carbon cost c_e (default: from case, 1)")
        p.add_argument("--cE", dest="cE", type=float, default=None,
                       help="grid emission price c_E in $/lb (default: from scenario, 0)")
        p.add_argument("--seed", type=int, default=0)

    run = sub.add_parser("run", help="solve one dispatch and write its reports")
    add_inputs(run)
    run.add_argument("--method", choices=METHODS, default="kkt")
    run.add_argument("--out", default=None, help="output directory (default: $CARBON_DISPATCH_OUT or results)")
    run.add_argument("--eps", type=float, default=None, help="iterative stopping tolerance")
    run.add_argument("--kmax", type=int, default=None, help="iterative iteration budget")
    run.add_argument("--Ml", dest="Ml", type=float, default=None, help="proximity radius in MW")
    run.add_argument("--shrink", type=float, default=None, help="proximity shrink exponent")
    run.add_argument("--tol-feas", type=float, default=None)
    run.add_argument("--tol-stat", type=float, default=None)
    run.add_argument("--workers", type=int, default=None, help="threads for load agents")
    run.add_argument("--log-iterates", default=None, help="append outer iterate lines to this file")

    compare = sub.add_parser("compare", help="side-by-side tables of two run directories")
    compare.add_argument("run_a")
    compare.add_argument("run_b")
    compare.add_argument("--out", default=None, help="output directory (default: <run_b>/compare)")

    check = sub.add_parser("check-derivatives", help="finite-difference check of the dispatch problem")
    add_inputs(check)
    check.add_argument("--points", type=int, default=10)
    check.add_argument("--mode", choices=("kkt_embedded", "fixed_loads"), default="kkt_embedded")
    check.add_argument("--columns", type=int, default=None, help="random subset of columns per point")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        case=args.case,
        scenario=args.scenario,
        method=getattr(args, "method", "kkt"),
        out=getattr(args, "out", None) or os.environ.get("CARBON_DISPATCH_OUT", "results"),
        carbon_cost=args.ce,
        emission_price=args.cE,
        eps=getattr(args, "eps", None),
        k_max=getattr(args, "kmax", None),
        proximity_radius=getattr(args, "Ml", None),
        shrink_exponent=getattr(args, "shrink", None),
        tol_feas=getattr(args, "tol_feas", None),
        tol_stat=getattr(args, "tol_stat", None),
        max_workers=getattr(args, "workers", None),
        seed=args.seed,
        log_iterates=getattr(args, "log_iterates", None),
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run the subcommand and return its exit code"""
    if DOTENV_AVAILABLE:
        load_dotenv()
    level = os.environ.get("CARBON_DISPATCH_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(levelname)s %(name)s: %(message)s")

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 4

    runner = create_experiment_runner(str(project_root))

    print("🌱 Carbon Dispatch")
    print("=" * 40)
    if args.command == "run":
        config = config_from_args(args)
        result = runner.run(config)
        if result["exit_code"] == 0:
            print(f"✅ {config.method}: {result['status']}, cost {result['objective']:.6g} $, "
                  f"emissions {result['total_emissions'] / 1e6:.4f} Mlbs")
            print(f"📁 Reports in {config.out}")
        elif "objective" in result:
            print(f"⚠️ {config.method}: {result['status']} ({result['error']}); partial reports in {config.out}")
        else:
            print(f"❌ {result['error']}")
        return result["exit_code"]

    if args.command == "compare":
        out = args.out or str(Path(args.run_b) / "compare")
        result = runner.compare(args.run_a, args.run_b, out)
        if result["success"]:
            flat = result["flatness"]
            print(f"✅ Comparison written to {out}")
            print(f"Emission flatness: {flat['a'] / 1e6:.4f} -> {flat['b'] / 1e6:.4f} Mlbs")
        else:
            print(f"❌ {result['error']}")
        return result["exit_code"]

    config = config_from_args(args)
    result = runner.check_derivatives(config, points=args.points, mode=args.mode, max_columns=args.columns)
    if result["success"]:
        print(f"✅ Derivatives match: max relative error {result['max_error']:.3e}")
    else:
        print(f"❌ {result['error']}")
    return result["exit_code"]


if __name__ == "__main__":
    exit(main())
