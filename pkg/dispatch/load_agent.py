"""
Load Agent - One flexible user answering broadcast carbon intensities
Keeps its load model private and returns only its optimal schedule
"""

import logging
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from grid.grid_model import LoadSpec, Scenario, nominal_profile
from dispatch.demand_response import (
    CdrInstance,
    CdrResult,
    build_instance,
    check_slater,
    kkt_blocks,
    KktBlocks,
    solve_cdr,
)

logger = logging.getLogger(__name__)


class LoadAgent:
    """
    Flexible user: given the nodal intensity at its bus, solves its own demand
    response LP and reports the schedule. The constraint matrix stays inside.
    """

    def __init__(self, load: LoadSpec, scenario: Scenario, agent_config: Optional[Dict[str, Any]] = None):
        if not load.is_flexible:
            raise ValueError(f"load {load.id} is fixed; only flexible loads have agents")
        self.load = load
        self.scenario = scenario
        self.agent_config = agent_config or {
            "lp_options": None,
            "check_slater": True,
        }
        self.profile = nominal_profile(load, scenario)
        self.response_history: List[Dict[str, Any]] = []
        self.strictly_feasible: Optional[bool] = None

        if self.agent_config.get("check_slater", True):
            instance = build_instance(load, scenario, np.zeros(scenario.horizon))
            self.strictly_feasible = check_slater(instance)

    @property
    def load_id(self) -> str:
        return self.load.id

    def instance(self, intensity: Sequence[float], center: Optional[np.ndarray] = None,
                 radius: Optional[float] = None) -> CdrInstance:
        proximity = (np.asarray(center, dtype=float), float(radius)) if center is not None else None
        return build_instance(self.load, self.scenario, intensity, proximity)

    def respond(self, intensity: Sequence[float], center: Optional[np.ndarray] = None,
                radius: Optional[float] = None) -> CdrResult:
        """Optimal schedule for the broadcast intensity, optionally kept within `radius` of `center`"""
        result = solve_cdr(self.instance(intensity, center, radius), self.agent_config.get("lp_options"))
        self.response_history.append({
            "objective": result.objective,
            "energy": float(self.scenario.dt_hours * result.schedule.sum()),
            "radius": radius,
        })
        return result

    def accept(self, schedule: np.ndarray) -> None:
        self.profile = np.asarray(schedule, dtype=float).copy()

    def kkt_blocks(self) -> KktBlocks:
        """Optimality conditions for embedding in the dispatch model (intensity enters as a variable)"""
        return kkt_blocks(self.instance(np.zeros(self.scenario.horizon)))

    def get_status(self) -> Dict[str, Any]:
        return {
            "load": self.load.id,
            "bus": self.load.bus,
            "kind": self.load.kind,
            "responses": len(self.response_history),
            "strictly_feasible": self.strictly_feasible,
            "energy": float(self.scenario.dt_hours * self.profile.sum()),
        }


def create_load_agent(load: LoadSpec, scenario: Scenario,
                      agent_config: Optional[Dict[str, Any]] = None) -> LoadAgent:
    """Factory function to create a Load Agent"""
    return LoadAgent(load, scenario, agent_config)


def main():
    """Let every flexible load of the bundled case answer a flat intensity"""
    logging.basicConfig(level=logging.INFO)
    from grid.grid_model import load_case, load_scenario

    print("🏠 Load Agents - Response to Flat Intensity")
    print("=" * 40)
    case = load_case("case39")
    scenario = load_scenario("day", case)
    intensity = np.linspace(0.5, 1.0, scenario.horizon)
    for load in case.flexible_loads:
        agent = create_load_agent(load, scenario)
        try:
            result = agent.respond(intensity)
        except Exception as e:
            print(f"❌ {load.id}: {e}")
            return 1
        print(f"✅ {load.id}: objective {result.objective:.4f}, schedule {np.round(result.schedule, 3)}")
    return 0


if __name__ == "__main__":
    exit(main())
