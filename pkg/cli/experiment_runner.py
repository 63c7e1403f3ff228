"""
Experiment Runner Module for the command line
Loads a case and scenario, runs one dispatch method and writes its reports
"""

import logging
import os
import sys
import time
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

# Add parent directory to path for package imports
parent_dir = Path(__file__).parent.parent
sys.path.insert(0, str(parent_dir))

from grid.grid_model import CaseFormatError, NetworkCase, Scenario, load_case, load_scenario, nominal_profile
from dispatch.demand_response import CdrError
from dispatch.dispatch_center import (
    METHOD_ITERATIVE,
    METHOD_KKT,
    METHOD_NO_CDR,
    DispatchCenter,
    DispatchError,
    DispatchSolution,
)
from dispatch.dispatch_model import FIXED_LOADS, KKT_EMBEDDED, DispatchModelError, assemble_cpd
from dispatch.multi_agent_system import DEFAULT_ITERATIVE_PARAMS, MultiAgentSystem
from solvers.derivatives import check_derivatives, random_interior_point
from solvers.nlp_solver import CONVERGED, INFEASIBLE, ITERATION_LIMIT
from cli.reports import ReportError, compare_runs, write_run_outputs

logger = logging.getLogger(__name__)

METHODS = (METHOD_KKT, METHOD_ITERATIVE, METHOD_NO_CDR)

EXIT_CONVERGED = 0
EXIT_ITERATION_LIMIT = 2
EXIT_INFEASIBLE = 3
EXIT_INPUT_ERROR = 4

STATUS_EXIT_CODES = {
    CONVERGED: EXIT_CONVERGED,
    ITERATION_LIMIT: EXIT_ITERATION_LIMIT,
    INFEASIBLE: EXIT_INFEASIBLE,
}

DERIVATIVE_TOLERANCE = 1e-5


@dataclass
class RunConfig:
    """One experiment: inputs, method, output directory and parameter overrides"""

    case: str = "case39"
    scenario: str = "day"
    method: str = METHOD_KKT
    out: str = "results"
    carbon_cost: Optional[float] = None
    emission_price: Optional[float] = None
    eps: Optional[float] = None
    k_max: Optional[int] = None
    proximity_radius: Optional[float] = None
    shrink_exponent: Optional[float] = None
    tol_feas: Optional[float] = None
    tol_stat: Optional[float] = None
    max_workers: Optional[int] = None
    seed: int = 0
    log_iterates: Optional[str] = None
    extra_solver_options: Dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        for name in ("carbon_cost", "emission_price"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ValueError(f"{name} must be nonnegative, got {value}")
        for name in ("eps", "proximity_radius", "shrink_exponent", "tol_feas", "tol_stat"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        for name in ("k_max", "max_workers"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValueError(f"{name} must be at least 1, got {value}")

    def solver_options(self) -> Dict[str, Any]:
        options = dict(self.extra_solver_options)
        if self.tol_feas is not None:
            options["tol_feas"] = self.tol_feas
            options["tol_comp"] = self.tol_feas
        if self.tol_stat is not None:
            options["tol_stat"] = self.tol_stat
        if self.log_iterates:
            options["log_path"] = self.log_iterates
        return options

    def iterative_params(self) -> Dict[str, Any]:
        overrides = {
            "eps": self.eps,
            "k_max": self.k_max,
            "proximity_radius": self.proximity_radius,
            "shrink_exponent": self.shrink_exponent,
            "max_workers": self.max_workers,
        }
        return {**DEFAULT_ITERATIVE_PARAMS, **{k: v for k, v in overrides.items() if v is not None}}


def _env_number(name: str, cast):
    raw = os.environ.get(name)
    if raw in (None, ""):
        return None
    try:
        return cast(raw)
    except ValueError:
        logger.warning(f"⚠️ Ignoring {name}={raw!r}: not a number")
        return None


def apply_environment(config: RunConfig) -> RunConfig:
    """Fill unset overrides from CARBON_DISPATCH_* variables; explicit values win"""
    env = {
        "k_max": _env_number("CARBON_DISPATCH_KMAX", int),
        "eps": _env_number("CARBON_DISPATCH_EPS", float),
        "tol_feas": _env_number("CARBON_DISPATCH_TOL_FEAS", float),
        "tol_stat": _env_number("CARBON_DISPATCH_TOL_STAT", float),
        "max_workers": _env_number("CARBON_DISPATCH_WORKERS", int),
    }
    updates = {k: v for k, v in env.items() if v is not None and getattr(config, k) is None}
    return replace(config, **updates) if updates else config


class ExperimentRunner:
    """Handles loading inputs and running the dispatch methods"""

    def __init__(self, project_root: Optional[str] = None):
        self.project_root = Path(project_root) if project_root else parent_dir
        self.history = []

        self._setup_dispatch_environment()

    def _setup_dispatch_environment(self):
        """Default environment for solver runs started from the command line"""
        os.environ.setdefault("CARBON_DISPATCH_OUT", "results")
        os.environ.setdefault("CARBON_DISPATCH_LOG_LEVEL", "INFO")
        # load agents run in threads
        os.environ.setdefault("OMP_NUM_THREADS", "1")

    def load_inputs(self, config: RunConfig):
        """Case and scenario with the run's c_e and c_E overrides applied"""
        case = load_case(config.case)
        scenario = load_scenario(config.scenario, case)
        if config.carbon_cost is not None:
            loads = tuple(replace(load, carbon_cost=config.carbon_cost) if load.is_flexible else load
                          for load in case.loads)
            case = replace(case, loads=loads)
        if config.emission_price is not None:
            scenario = replace(scenario, emission_price=config.emission_price)
        return case, scenario

    def _dispatch(self, config: RunConfig, case: NetworkCase, scenario: Scenario) -> DispatchSolution:
        if config.method == METHOD_ITERATIVE:
            system = MultiAgentSystem(case, scenario, config.iterative_params(), config.solver_options())
            return system.solve()
        center = DispatchCenter(case, scenario, config.solver_options())
        if config.method == METHOD_NO_CDR:
            return center.solve_without_cdr()
        return center.solve_kkt_reformulation()

    def run(self, config: RunConfig) -> Dict[str, Any]:
        """Run one experiment; returns a result dict with the exit code to report"""
        started = time.perf_counter()
        try:
            config = apply_environment(config)
            config.validate()
            np.random.seed(config.seed)
            case, scenario = self.load_inputs(config)
        except (CaseFormatError, FileNotFoundError, ValueError) as e:
            logger.error(f"❌ Input error: {e}")
            return {"success": False, "status": "input-error", "exit_code": EXIT_INPUT_ERROR, "error": str(e)}

        logger.info(f"Running {config.method} on {case.name} / {scenario.name} (T={scenario.horizon})")
        try:
            solution = self._dispatch(config, case, scenario)
        except (DispatchError, CdrError, DispatchModelError) as e:
            logger.error(f"❌ Dispatch failed: {e}")
            trace = getattr(e, "trace", None)
            if trace is not None and len(trace):
                Path(config.out).mkdir(parents=True, exist_ok=True)
                pd.DataFrame(trace.to_rows()).to_csv(Path(config.out) / "trace.csv", index=False)
            return {"success": False, "status": INFEASIBLE, "exit_code": EXIT_INFEASIBLE, "error": str(e)}
        except Exception as e:
            logger.error(f"❌ Unexpected failure: {e}\n{traceback.format_exc()}")
            return {"success": False, "status": "error", "exit_code": EXIT_INFEASIBLE, "error": str(e)}

        written = write_run_outputs(solution, config.out)
        exit_code = STATUS_EXIT_CODES.get(solution.status, EXIT_INFEASIBLE)
        result = {
            "success": solution.converged,
            "status": solution.status,
            "exit_code": exit_code,
            "objective": solution.objective,
            "total_emissions": solution.total_emissions,
            "iterations": solution.iterations,
            "files": {name: str(path) for name, path in written.items()},
            "wall_time": time.perf_counter() - started,
            "error": None if solution.converged else solution.message or solution.status,
        }
        if not solution.converged:
            # marker for partial outputs
            (Path(config.out) / "NOT_CONVERGED").write_text(f"{solution.status}: {solution.message}\n", encoding="utf-8")
        self.history.append({"method": config.method, "status": solution.status, "out": config.out})
        return result

    def compare(self, run_a: str, run_b: str, out: str) -> Dict[str, Any]:
        try:
            outcome = compare_runs(run_a, run_b, out)
        except ReportError as e:
            logger.error(f"❌ {e}")
            return {"success": False, "status": "input-error", "exit_code": EXIT_INPUT_ERROR, "error": str(e)}
        return {"success": True, "status": "compared", "exit_code": EXIT_CONVERGED, "error": None, **outcome}

    def check_derivatives(self, config: RunConfig, points: int = 10, mode: str = KKT_EMBEDDED,
                          max_columns: Optional[int] = None) -> Dict[str, Any]:
        """Finite-difference check of the assembled dispatch problem at random interior points"""
        try:
            config.validate()
            case, scenario = self.load_inputs(config)
            profiles = {load.id: nominal_profile(load, scenario) for load in case.flexible_loads}
            problem = assemble_cpd(case, scenario, mode if case.flexible_loads else FIXED_LOADS, profiles)
        except (CaseFormatError, FileNotFoundError, ValueError) as e:
            return {"success": False, "status": "input-error", "exit_code": EXIT_INPUT_ERROR, "error": str(e)}
        rng = np.random.default_rng(config.seed)
        worst = None
        for _ in range(points):
            columns = None
            if max_columns is not None and max_columns < problem.n:
                columns = np.sort(rng.choice(problem.n, size=max_columns, replace=False))
            report = check_derivatives(problem, random_interior_point(problem, rng), columns)
            logger.info(f"max relative error {report.max_error:.3e} at {report.component}[{report.row}, {report.col}]")
            if worst is None or report.max_error > worst.max_error:
                worst = report
        passed = worst is None or worst.max_error <= DERIVATIVE_TOLERANCE
        return {
            "success": passed,
            "status": "passed" if passed else "failed",
            "exit_code": EXIT_CONVERGED if passed else EXIT_INFEASIBLE,
            "max_error": worst.max_error if worst else 0.0,
            "location": (worst.component, worst.row, worst.col) if worst else None,
            "error": None if passed else f"derivative error {worst.max_error:.3e} above {DERIVATIVE_TOLERANCE}",
        }


def create_experiment_runner(project_root: Optional[str] = None) -> ExperimentRunner:
    """Factory function to create an Experiment Runner"""
    return ExperimentRunner(project_root)
