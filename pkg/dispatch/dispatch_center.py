"""
Dispatch Center - Solves the carbon-aware dispatch and reports its outcomes
KKT reformulation, fixed-load dispatch, no demand response baseline and metrics
"""

import logging
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Mapping, Optional

import numpy as np

from grid.grid_model import NetworkCase, Scenario, available_capacity, nominal_profile
from grid.power_flow import state_from_voltages
from grid.carbon_flow import CarbonFlowError, CarbonState, solve_nodal_intensities, user_footprint
from dispatch.demand_response import CdrError, build_instance, solve_cdr
from dispatch.dispatch_model import (
    FIXED_LOADS,
    KKT_EMBEDDED,
    DispatchProblem,
    DispatchVariables,
    assemble_cpd,
)
from solvers.nlp_solver import CONVERGED, NLPSolution, solve_nlp

if TYPE_CHECKING:
    from dispatch.multi_agent_system import IterationTrace

logger = logging.getLogger(__name__)

METHOD_KKT = "kkt"
METHOD_ITERATIVE = "iterative"
METHOD_NO_CDR = "no-cdr"
METHOD_FIXED = "fixed-loads"

CROSSCHECK_TOLERANCE = 1e-6


class DispatchError(RuntimeError):
    """Raised when a dispatch subproblem fails in a way that leaves no usable point"""


@dataclass
class DispatchSolution:
    case: NetworkCase
    scenario: Scenario
    method: str
    status: str
    variables: DispatchVariables
    load_profiles: Dict[str, np.ndarray]
    objective: float
    system_emissions: np.ndarray
    footprints: Dict[str, float]
    residuals: Dict[str, float]
    iterations: int = 0
    wall_time: float = 0.0
    message: str = ""
    x: Optional[np.ndarray] = None
    trace: Optional["IterationTrace"] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def total_emissions(self) -> float:
        return float(np.sum(self.system_emissions))


def load_series(case: NetworkCase, scenario: Scenario, profiles: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Every load's per-time power: flexible loads from `profiles`, fixed loads from the scenario"""
    return {load.id: (np.asarray(profiles[load.id], dtype=float) if load.is_flexible else nominal_profile(load, scenario))
            for load in case.loads}


def system_emissions(case: NetworkCase, scenario: Scenario, gen_p: np.ndarray) -> np.ndarray:
    """Per-time generation emissions in lbs"""
    return scenario.dt_hours * case.emission_scale * (case.emission_factors[:, None] * gen_p).sum(axis=0)


def load_footprints(case: NetworkCase, scenario: Scenario, intensity: np.ndarray,
                    profiles: Mapping[str, np.ndarray]) -> Dict[str, float]:
    series = load_series(case, scenario, profiles)
    return {
        load.id: user_footprint(intensity[case.bus_index[load.bus]], series[load.id], scenario.dt_hours, case.emission_scale)
        for load in case.loads
    }


def dispatch_residuals(problem: DispatchProblem, x: np.ndarray) -> Dict[str, float]:
    """Max violation per constraint family, plus variable bounds"""
    ce = problem.equality(x, jacobian=False)
    ci = problem.inequality(x, jacobian=False)
    report = {name: float(np.max(np.abs(ce[rows]), initial=0.0)) for name, rows in problem.equality_families.items()}
    report.update({name: float(np.max(ci[rows], initial=0.0)) for name, rows in problem.inequality_families.items()})
    pairs = problem.complementarity_pairs
    for name, rows in problem.pair_families.items():
        chosen = pairs[rows]
        report[name] = float(np.max(np.abs(x[chosen[:, 0]] * x[chosen[:, 1]]), initial=0.0))
    report["bounds"] = float(max(np.max(problem.lower - x, initial=0.0), np.max(x - problem.upper, initial=0.0)))
    return report


def intensity_crosscheck(case: NetworkCase, variables: DispatchVariables) -> Dict[str, Any]:
    """
    Recompute nodal intensities from the solution's voltages and generation and
    compare with its intensity variables; buses without inflow are skipped.
    """
    horizon = variables.gen_p.shape[1]
    carbon_states: List[CarbonState] = []
    worst = 0.0
    for t in range(horizon):
        state = state_from_voltages(case, variables.voltage[:, t], variables.angle[:, t])
        carbon = solve_nodal_intensities(case, state, variables.gen_p[:, t])
        carbon_states.append(carbon)
        mask = np.ones(len(case.buses), dtype=bool)
        mask[[case.bus_index[b] for b in carbon.zero_inflow_buses]] = False
        if mask.any():
            worst = max(worst, float(np.max(np.abs(carbon.nodal_intensity[mask] - variables.intensity[mask, t]))))
    return {"max_difference": worst, "carbon_states": carbon_states,
            "ledger_residual": max((abs(c.ledger.residual) for c in carbon_states), default=0.0)}


class DispatchCenter:
    """
    Grid operator: assembles and solves the dispatch problem in either mode and
    turns NLP points into DispatchSolutions
    """

    def __init__(self, case: NetworkCase, scenario: Scenario, solver_config: Optional[Dict[str, Any]] = None):
        self.case = case
        self.scenario = scenario
        self.solver_config = solver_config or {}
        self.solve_history: List[Dict[str, Any]] = []

    def _solve(self, problem: DispatchProblem, method: str, profiles: Optional[Mapping[str, np.ndarray]] = None) -> DispatchSolution:
        started = time.perf_counter()
        result: NLPSolution = solve_nlp(problem, self.solver_config)
        elapsed = time.perf_counter() - started
        layout = problem.layout
        variables = layout.unpack(result.x)
        if problem.mode == KKT_EMBEDDED and layout.flexible_ids:
            profiles = {load_id: variables.loads[load_id].copy() for load_id in layout.flexible_ids}
        profiles = dict(profiles or problem.load_profiles)

        solution = DispatchSolution(
            case=self.case,
            scenario=self.scenario,
            method=method,
            status=result.status,
            variables=variables,
            load_profiles=profiles,
            objective=result.objective / problem.objective_scale,
            system_emissions=system_emissions(self.case, self.scenario, variables.gen_p),
            footprints=load_footprints(self.case, self.scenario, variables.intensity, profiles),
            residuals=dispatch_residuals(problem, result.x),
            iterations=result.iterations,
            wall_time=elapsed,
            message=result.message,
            x=result.x,
            metadata={"mode": problem.mode, "inner_iterations": result.inner_iterations,
                      "nlp_residuals": result.residuals, "counts": layout.counts},
        )
        self.solve_history.append({"method": method, "status": result.status, "objective": solution.objective,
                                   "wall_time": elapsed})
        return solution

    def solve_fixed_loads(self, profiles: Mapping[str, np.ndarray], warm_start: Optional[np.ndarray] = None,
                          method: str = METHOD_FIXED) -> DispatchSolution:
        problem = assemble_cpd(self.case, self.scenario, FIXED_LOADS, profiles, warm_start=warm_start)
        return self._solve(problem, method, profiles)

    def solve_without_cdr(self) -> DispatchSolution:
        nominal = {load.id: nominal_profile(load, self.scenario) for load in self.case.flexible_loads}
        solution = self.solve_fixed_loads(nominal, method=METHOD_NO_CDR)
        logger.info(f"No-C-DR baseline: {solution.status}, cost {solution.objective:.6g} $")
        return solution

    def kkt_warm_start(self, nominal: DispatchSolution, problem: DispatchProblem) -> np.ndarray:
        """Nominal dispatch point, users' responses to its intensities and their LP multipliers"""
        layout = problem.layout
        x0 = problem.x0.copy()
        base = nominal.x.shape[0]
        x0[:base] = nominal.x
        for pos, load_id in enumerate(layout.flexible_ids):
            load = self.case.load(load_id)
            w = nominal.variables.intensity[self.case.bus_index[load.bus]]
            try:
                response = solve_cdr(build_instance(load, self.scenario, w))
            except CdrError as e:
                logger.warning(f"⚠️ No warm-start response for {load_id}: {e}")
                continue
            blocks = problem.kkt[load_id]
            x0[layout.index["pl"][pos]] = response.schedule
            x0[layout.index[f"lam:{load_id}"]] = response.dual[: blocks.rows]
            x0[layout.index[f"slack:{load_id}"]] = np.maximum(-blocks.primal(response.schedule), 0.0)
        return np.clip(x0, problem.lower, problem.upper)

    def solve_kkt_reformulation(self) -> DispatchSolution:
        nominal = self.solve_without_cdr()
        problem = assemble_cpd(self.case, self.scenario, KKT_EMBEDDED)
        problem.x0 = self.kkt_warm_start(nominal, problem)
        solution = self._solve(problem, METHOD_KKT)
        solution.metadata["baseline_objective"] = nominal.objective
        try:
            check = intensity_crosscheck(self.case, solution.variables)
            solution.metadata["intensity_crosscheck"] = check["max_difference"]
            if solution.converged and check["max_difference"] > CROSSCHECK_TOLERANCE:
                logger.warning(f"⚠️ Intensity variables differ from recomputed carbon flow by {check['max_difference']:.2e}")
        except CarbonFlowError as e:
            logger.warning(f"⚠️ Intensity cross-check failed: {e}")
        return solution

    def get_status(self) -> Dict[str, Any]:
        return {"case": self.case.name, "scenario": self.scenario.name, "horizon": self.scenario.horizon,
                "flexible_loads": len(self.case.flexible_loads), "solves": len(self.solve_history)}


def create_dispatch_center(case: NetworkCase, scenario: Scenario,
                           solver_config: Optional[Dict[str, Any]] = None) -> DispatchCenter:
    """Factory function to create a Dispatch Center"""
    return DispatchCenter(case, scenario, solver_config)


def solve_kkt_reformulation(case: NetworkCase, scenario: Scenario,
                            solver_config: Optional[Dict[str, Any]] = None) -> DispatchSolution:
    """Single-level dispatch with every user's optimality conditions embedded"""
    return DispatchCenter(case, scenario, solver_config).solve_kkt_reformulation()


def solve_without_cdr(case: NetworkCase, scenario: Scenario,
                      solver_config: Optional[Dict[str, Any]] = None) -> DispatchSolution:
    """Dispatch with every flexible load fixed at its nominal profile"""
    return DispatchCenter(case, scenario, solver_config).solve_without_cdr()


def evaluate_dispatch(solution: DispatchSolution) -> Dict[str, Any]:
    """Cost split, per-time and per-fuel emissions, user footprints and renewable curtailment"""
    case, scenario = solution.case, solution.scenario
    dt = scenario.dt_hours
    pg = solution.variables.gen_p
    generation_cost = 0.0
    emission_penalty = 0.0
    by_fuel: Dict[str, float] = {}
    curtailment: Dict[str, np.ndarray] = {}
    emissions = system_emissions(case, scenario, pg)
    for g, gen in enumerate(case.generators):
        p = pg[g]
        generation_cost += dt * float(np.sum(gen.cost_quadratic * p * p + gen.cost_linear * p + gen.cost_constant))
        lbs = dt * case.emission_scale * gen.emission_factor * float(np.sum(p))
        emission_penalty += scenario.emission_price * lbs
        by_fuel[gen.fuel] = by_fuel.get(gen.fuel, 0.0) + lbs
        if gen.is_renewable:
            curtailment[gen.id] = np.maximum(available_capacity(gen, scenario) - p, 0.0) * case.base_mva
    footprints = load_footprints(case, scenario, solution.variables.intensity, solution.load_profiles)
    return {
        "method": solution.method,
        "status": solution.status,
        "total_cost": generation_cost + emission_penalty,
        "generation_cost": generation_cost,
        "emission_penalty": emission_penalty,
        "system_emissions": emissions,
        "total_emissions": float(np.sum(emissions)),
        "emissions_by_fuel": by_fuel,
        "emission_flatness": float(np.ptp(emissions)) if emissions.size else 0.0,
        "footprints": footprints,
        "curtailment": curtailment,
        "max_residual": max(solution.residuals.values(), default=0.0),
    }


def main():
    """Run the no-C-DR baseline on the bundled case"""
    logging.basicConfig(level=logging.INFO)
    from grid.grid_model import load_case, load_scenario

    print("🏭 Dispatch Center - No-C-DR Baseline")
    print("=" * 40)
    case = load_case("case39")
    scenario = load_scenario("day", case)
    center = create_dispatch_center(case, scenario)
    solution = center.solve_without_cdr()
    report = evaluate_dispatch(solution)
    print(f"Status: {solution.status}")
    print(f"Total cost: {report['total_cost']:.6g} $")
    print(f"Total emissions: {report['total_emissions'] / 1e6:.4f} Mlbs")
    return 0 if solution.converged else 1


if __name__ == "__main__":
    exit(main())
