"""
Multi-Agent System - Iterative coordination between the dispatch center and load agents
The center broadcasts nodal intensities, agents answer with schedules, repeat to a fixed point
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from grid.grid_model import NetworkCase, Scenario, nominal_profile
from dispatch.demand_response import CdrError, CdrResult
from dispatch.dispatch_center import METHOD_ITERATIVE, DispatchCenter, DispatchError, DispatchSolution
from dispatch.load_agent import LoadAgent, create_load_agent
from solvers.nlp_solver import CONVERGED, ITERATION_LIMIT

logger = logging.getLogger(__name__)

DEFAULT_ITERATIVE_PARAMS = {
    "proximity_radius": 5e3,
    "shrink_exponent": 1.5,
    "eps": 1e-4,
    "k_max": 100,
    "max_workers": 4,
}

# schedules are LP vertices, so an unchanged answer repeats to rounding
PROFILE_TOLERANCE = 1e-9


@dataclass
class IterationRecord:
    k: int
    objective: float
    best_objective: float
    profile_change: float
    generation_change: float
    radius: float
    status: str


@dataclass
class IterationTrace:
    records: List[IterationRecord] = field(default_factory=list)

    def append(self, record: IterationRecord) -> None:
        self.records.append(record)

    @property
    def best_objectives(self) -> List[float]:
        return [r.best_objective for r in self.records]

    def __len__(self) -> int:
        return len(self.records)

    def to_rows(self) -> List[Dict[str, Any]]:
        return [vars(r).copy() for r in self.records]


def _generation_vector(solution: DispatchSolution) -> np.ndarray:
    return np.concatenate([solution.variables.gen_p.ravel(), solution.variables.gen_q.ravel()])


class MultiAgentSystem:
    """
    Dispatch center plus one load agent per flexible user. Each round solves the
    fixed-load dispatch, broadcasts the intensities and collects the agents'
    schedules, each kept within a shrinking radius of the best profile so far.
    """

    def __init__(self, case: NetworkCase, scenario: Scenario, params: Optional[Dict[str, Any]] = None,
                 solver_config: Optional[Dict[str, Any]] = None):
        self.case = case
        self.scenario = scenario
        self.params = {**DEFAULT_ITERATIVE_PARAMS, **(params or {})}
        for key in ("proximity_radius", "shrink_exponent", "eps", "k_max", "max_workers"):
            if self.params[key] is None or self.params[key] < 0 or (key in ("k_max", "max_workers") and self.params[key] < 1):
                raise ValueError(f"iterative parameter {key} must be positive, got {self.params[key]}")
        self.center = DispatchCenter(case, scenario, solver_config)
        self.agents: List[LoadAgent] = [create_load_agent(load, scenario) for load in case.flexible_loads]

    def _radius(self, k: int) -> float:
        """Radius in per unit; `proximity_radius` is in MW"""
        radius_mw = float(self.params["proximity_radius"]) / k ** float(self.params["shrink_exponent"])
        return radius_mw / self.case.base_mva

    def _broadcast(self, solution: DispatchSolution, centers: Dict[str, np.ndarray], radius: float) -> Dict[str, np.ndarray]:
        """Every agent answers the intensity at its own bus; agents solve concurrently"""
        intensity = solution.variables.intensity

        def respond(agent: LoadAgent) -> Optional[CdrResult]:
            w = intensity[self.case.bus_index[agent.load.bus]]
            try:
                return agent.respond(w, centers[agent.load_id], radius)
            except CdrError as e:
                logger.warning(f"⚠️ Load {agent.load_id} kept its previous profile: {e}")
                return None

        with ThreadPoolExecutor(max_workers=self.params["max_workers"]) as pool:
            results = list(pool.map(respond, self.agents))
        profiles = {}
        for agent, result in zip(self.agents, results):
            profiles[agent.load_id] = result.schedule.copy() if result is not None else agent.profile.copy()
        return profiles

    def solve(self) -> DispatchSolution:
        profiles = {agent.load_id: nominal_profile(agent.load, self.scenario) for agent in self.agents}
        best_objective = np.inf
        best_profiles = {k: v.copy() for k, v in profiles.items()}
        trace = IterationTrace()
        previous: Optional[DispatchSolution] = None
        warm_start: Optional[np.ndarray] = None
        status = ITERATION_LIMIT
        started = time.perf_counter()
        solution: Optional[DispatchSolution] = None
        best_solution: Optional[DispatchSolution] = None

        for k in range(1, int(self.params["k_max"]) + 1):
            solution = self.center.solve_fixed_loads(profiles, warm_start=warm_start, method=METHOD_ITERATIVE)
            if solution.status != CONVERGED:
                logger.error(f"❌ Iteration {k}: dispatch subproblem {solution.status}")
                error = DispatchError(f"fixed-load dispatch {solution.status} at iteration {k}: {solution.message}")
                error.trace = trace
                raise error
            warm_start = solution.x

            if solution.objective < best_objective:
                best_objective = solution.objective
                best_profiles = {key: value.copy() for key, value in profiles.items()}
                best_solution = solution

            generation_change = (float(np.max(np.abs(_generation_vector(solution) - _generation_vector(previous))))
                                 if previous is not None else np.inf)
            radius = self._radius(k)
            record = IterationRecord(k=k, objective=solution.objective, best_objective=best_objective,
                                     profile_change=0.0, generation_change=generation_change, radius=radius,
                                     status=solution.status)
            trace.append(record)
            logger.info(f"Iteration {k}: objective {solution.objective:.8g} $, best {best_objective:.8g} $, "
                        f"generation change {generation_change:.3e}")

            if k >= 2 and generation_change <= self.params["eps"]:
                status = CONVERGED
                break

            responses = self._broadcast(solution, best_profiles, radius)
            change = max((float(np.max(np.abs(responses[key] - profiles[key]))) for key in profiles), default=0.0)
            record.profile_change = change
            for agent in self.agents:
                agent.accept(responses[agent.load_id])
            profiles = responses
            if change <= PROFILE_TOLERANCE:
                status = CONVERGED
                break
            previous = solution

        if status != CONVERGED:
            solution = best_solution or solution
            solution.status = ITERATION_LIMIT
        solution.trace = trace
        solution.wall_time = time.perf_counter() - started
        solution.iterations = len(trace)
        solution.metadata.update({"params": dict(self.params), "best_objective": best_objective})
        if status == CONVERGED:
            logger.info(f"✅ Iterative dispatch converged after {len(trace)} iterations")
        else:
            logger.warning(f"⚠️ Iterative dispatch stopped at k_max={self.params['k_max']}; best objective {best_objective:.8g} $")
        return solution

    def get_status(self) -> Dict[str, Any]:
        return {"center": self.center.get_status(), "agents": [agent.get_status() for agent in self.agents],
                "params": dict(self.params)}


def create_multi_agent_system(case: NetworkCase, scenario: Scenario, params: Optional[Dict[str, Any]] = None,
                              solver_config: Optional[Dict[str, Any]] = None) -> MultiAgentSystem:
    """Factory function to create a Multi Agent System"""
    return MultiAgentSystem(case, scenario, params, solver_config)


def solve_iterative(case: NetworkCase, scenario: Scenario, params: Optional[Dict[str, Any]] = None,
                    solver_config: Optional[Dict[str, Any]] = None) -> DispatchSolution:
    """Iterative dispatch; the returned solution carries the IterationTrace in `trace`"""
    return MultiAgentSystem(case, scenario, params, solver_config).solve()


def main():
    """Iterative dispatch on the bundled case"""
    logging.basicConfig(level=logging.INFO)
    from grid.grid_model import load_case, load_scenario

    print("🤝 Multi-Agent System - Iterative Dispatch")
    print("=" * 40)
    case = load_case("case39")
    scenario = load_scenario("day", case)
    try:
        solution = solve_iterative(case, scenario)
    except DispatchError as e:
        print(f"❌ {e}")
        return 1
    print(f"Status: {solution.status} after {len(solution.trace)} iterations")
    print(f"Objective: {solution.objective:.6g} $")
    return 0 if solution.converged else 2


if __name__ == "__main__":
    exit(main())
