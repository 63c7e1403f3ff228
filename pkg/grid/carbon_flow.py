"""
Carbon Flow - Nodal carbon intensity from a power flow profile
Proportional-sharing carbon emission flow, directed flow split and emission ledgers
"""

import logging
from dataclasses import dataclass, replace
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg

from grid.grid_model import NetworkCase
from grid.power_flow import PowerFlowState, nodal_injections

logger = logging.getLogger(__name__)

ZERO_INFLOW_TOLERANCE = 1e-12
CONDITION_WARNING = 1e12
BALANCE_TOLERANCE = 1e-8


class CarbonFlowError(RuntimeError):
    """Raised when the intensity system is singular or yields inconsistent intensities"""


class CarbonBalanceError(CarbonFlowError):
    """Raised when generation, load and loss emissions do not balance"""


@dataclass(frozen=True, eq=False)
class DirectedFlowDecomposition:
    """Nonnegative split of each branch-end flow: fwd leaves the measuring bus, rev enters it"""

    p_hat_fwd: np.ndarray
    p_hat_rev: np.ndarray
    p_hat_fwd_to: np.ndarray
    p_hat_rev_to: np.ndarray


class InflowSource(NamedTuple):
    source: str
    power: float
    intensity: float


@dataclass(frozen=True)
class EmissionLedger:
    generation: float
    loads: float
    losses: float

    @property
    def residual(self) -> float:
        return self.generation - self.loads - self.losses


@dataclass(frozen=True, eq=False)
class CarbonState:
    nodal_intensity: np.ndarray
    inflow_sets: Tuple[Tuple[InflowSource, ...], ...]
    ledger: Optional[EmissionLedger] = None
    condition_number: float = 1.0
    zero_inflow_buses: Tuple[int, ...] = ()


def decompose_flows(state: PowerFlowState) -> DirectedFlowDecomposition:
    p_from = state.branch_p_from
    p_to = state.branch_p_to
    return DirectedFlowDecomposition(
        p_hat_fwd=np.maximum(p_from, 0.0),
        p_hat_rev=np.maximum(-p_from, 0.0),
        p_hat_fwd_to=np.maximum(p_to, 0.0),
        p_hat_rev_to=np.maximum(-p_to, 0.0),
    )


def _generation_by_bus(case: NetworkCase, gen_p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n = len(case.buses)
    power = np.zeros(n)
    carbon = np.zeros(n)
    positive = np.maximum(gen_p, 0.0)
    np.add.at(power, case.gen_bus, positive)
    np.add.at(carbon, case.gen_bus, case.emission_factors * positive)
    return power, carbon


def solve_nodal_intensities(case: NetworkCase, state: PowerFlowState, gen_p: np.ndarray) -> CarbonState:
    """
    Solve the proportional-sharing balance at every bus.

    Inflow on a branch is the power arriving at the receiving bus, so branch losses
    carry the sending bus intensity.
    """
    gen_p = np.asarray(gen_p, dtype=float)
    if gen_p.shape != (len(case.generators),):
        raise CarbonFlowError(f"gen_p must have {len(case.generators)} entries")
    n = len(case.buses)
    f, t = case.branch_from, case.branch_to
    split = decompose_flows(state)

    gen_power, gen_carbon = _generation_by_bus(case, gen_p)
    # (receiving bus, sending bus, arriving power)
    receivers = np.concatenate([f, t])
    senders = np.concatenate([t, f])
    arriving = np.concatenate([split.p_hat_rev, split.p_hat_rev_to])

    inflow = gen_power.copy()
    np.add.at(inflow, receivers, arriving)
    matrix = np.diag(inflow)
    np.add.at(matrix, (receivers, senders), -arriving)
    rhs = gen_carbon.copy()

    zero = np.flatnonzero(inflow <= ZERO_INFLOW_TOLERANCE)
    if zero.size:
        logger.warning(f"⚠️ Buses with zero inflow get intensity 0: {[case.buses[i].id for i in zero]}")
        matrix[zero, :] = 0.0
        matrix[zero, zero] = 1.0
        rhs[zero] = 0.0

    condition = float(np.linalg.cond(matrix))
    if not np.isfinite(condition):
        raise CarbonFlowError("singular carbon-flow system")
    if condition > CONDITION_WARNING:
        logger.warning(f"⚠️ Carbon-flow system is ill-conditioned (cond {condition:.2e}); solution may not be unique")

    try:
        intensity = scipy.linalg.lu_solve(scipy.linalg.lu_factor(matrix), rhs)
    except (scipy.linalg.LinAlgError, ValueError) as e:
        raise CarbonFlowError(f"singular carbon-flow system: {e}") from e

    scale = max(1.0, float(np.max(case.emission_factors, initial=0.0)))
    if np.any(intensity < -1e-9 * scale):
        worst = int(np.argmin(intensity))
        raise CarbonFlowError(f"negative intensity {intensity[worst]:.3e} at bus {case.buses[worst].id}; inputs are inconsistent")
    intensity = np.maximum(intensity, 0.0)

    residual = np.max(np.abs(matrix @ intensity - rhs)) if n else 0.0
    if residual > 1e-10 * max(1.0, float(np.max(np.abs(rhs), initial=0.0))):
        logger.warning(f"⚠️ Carbon-flow residual {residual:.2e} above tolerance")

    sources: List[List[InflowSource]] = [[] for _ in range(n)]
    for g, gen in enumerate(case.generators):
        if gen_p[g] > 0:
            sources[case.gen_bus[g]].append(InflowSource(f"gen:{gen.id}", float(gen_p[g]), gen.emission_factor))
    for recv, send, power in zip(receivers, senders, arriving):
        if power > 0:
            sources[recv].append(InflowSource(f"bus:{case.buses[send].id}", float(power), float(intensity[send])))

    carbon = CarbonState(
        nodal_intensity=intensity,
        inflow_sets=tuple(tuple(items) for items in sources),
        condition_number=condition,
        zero_inflow_buses=tuple(case.buses[i].id for i in zero),
    )
    return replace(carbon, ledger=emission_ledger(case, state, gen_p, carbon))


def user_footprint(w_series: Sequence[float], load_series: Sequence[float], dt_hours: float, scale: float = 1.0) -> float:
    """dt * sum_t w_t * P_t, times `scale` (case.emission_scale gives lbs for pu loads)"""
    w = np.asarray(w_series, dtype=float)
    p = np.asarray(load_series, dtype=float)
    if w.shape != p.shape:
        raise ValueError(f"series lengths differ: {w.shape} vs {p.shape}")
    return float(dt_hours * np.dot(w, p) * scale)


def bus_loads_from_state(case: NetworkCase, state: PowerFlowState, gen_p: np.ndarray) -> np.ndarray:
    """Bus consumption implied by generation and network injections"""
    injected, _ = nodal_injections(case, state)
    generation = np.zeros(len(case.buses))
    np.add.at(generation, case.gen_bus, gen_p)
    return generation - injected


def emission_ledger(
    case: NetworkCase,
    state: PowerFlowState,
    gen_p: np.ndarray,
    carbon: CarbonState,
    bus_load: Optional[np.ndarray] = None,
    tolerance: float = BALANCE_TOLERANCE,
) -> EmissionLedger:
    """Split emissions into generation, consumption and network losses; raises when they do not balance"""
    w = carbon.nodal_intensity
    gen_p = np.asarray(gen_p, dtype=float)
    if bus_load is None:
        bus_load = bus_loads_from_state(case, state, gen_p)
    f, t = case.branch_from, case.branch_to
    pf, pt = state.branch_p_from, state.branch_p_to
    losses = (w[f] * np.maximum(pf, 0.0) + w[t] * np.maximum(pt, 0.0)
              - w[f] * np.maximum(-pt, 0.0) - w[t] * np.maximum(-pf, 0.0))
    ledger = EmissionLedger(
        generation=float(np.dot(case.emission_factors, gen_p)),
        loads=float(np.dot(w, bus_load)),
        losses=float(np.sum(losses)),
    )
    if abs(ledger.residual) > tolerance * max(1.0, abs(ledger.generation)):
        raise CarbonBalanceError(
            f"emission ledger does not balance: generation {ledger.generation:.6e}, loads {ledger.loads:.6e}, "
            f"losses {ledger.losses:.6e}, residual {ledger.residual:.3e}"
        )
    return ledger


def ledger_frame(
    case: NetworkCase,
    carbon_states: Sequence[CarbonState],
    bus_loads: Sequence[np.ndarray],
    dt_hours: float,
    time_labels: Optional[Sequence[float]] = None,
) -> pd.DataFrame:
    """Per-bus intensity and consumption emissions (lbs) per time step, plus a TOTAL row per step"""
    scale = case.emission_scale
    labels = list(time_labels) if time_labels is not None else list(range(len(carbon_states)))
    rows = []
    for label, carbon, loads in zip(labels, carbon_states, bus_loads):
        emissions = carbon.nodal_intensity * np.asarray(loads) * dt_hours * scale
        for pos, bus in enumerate(case.buses):
            rows.append({"time": label, "bus": str(bus.id), "intensity": carbon.nodal_intensity[pos],
                         "load_emissions": emissions[pos]})
        total_load = float(np.sum(loads))
        average = float(emissions.sum() / (total_load * dt_hours * scale)) if total_load > 0 else 0.0
        rows.append({"time": label, "bus": "TOTAL", "intensity": average, "load_emissions": float(emissions.sum())})
    return pd.DataFrame(rows, columns=["time", "bus", "intensity", "load_emissions"])


def main():
    """Carbon intensities of the bundled case under proportional dispatch"""
    logging.basicConfig(level=logging.INFO)
    from grid.grid_model import load_case, load_scenario
    from grid.power_flow import PowerFlowError, proportional_injections, solve_power_flow

    print("🌍 Carbon Flow - Bundled Case Intensities")
    print("=" * 40)
    case = load_case("case39")
    scenario = load_scenario("day", case)
    setpoints = {gen.bus: 1.0 for gen in case.generators}
    for t in range(scenario.horizon):
        inj = proportional_injections(case, scenario, t)
        try:
            state = solve_power_flow(case, (inj.p, inj.q), voltage_setpoints=setpoints)
            carbon = solve_nodal_intensities(case, state, inj.gen_p)
        except (PowerFlowError, CarbonFlowError) as e:
            print(f"❌ t={t}: {e}")
            return 1
        w = carbon.nodal_intensity
        print(f"✅ t={t}: intensity {w.min():.3f}-{w.max():.3f} lbs/kWh, ledger residual {carbon.ledger.residual:.2e}")
    return 0


if __name__ == "__main__":
    exit(main())
