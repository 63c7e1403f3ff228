"""
Power Flow - AC branch flows and Newton-Raphson steady-state solution
Evaluates the polar branch-flow equations and solves bus voltages for given injections
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, NamedTuple, Optional, Tuple, Union

import numpy as np
import scipy.linalg

from grid.grid_model import NetworkCase, Scenario, available_capacity, nominal_profile

logger = logging.getLogger(__name__)

DEFAULT_POWER_FLOW_OPTIONS = {
    "tolerance": 1e-10,
    "max_iterations": 20,
}


class PowerFlowError(RuntimeError):
    """Raised when the Newton iteration cannot proceed"""


class PowerFlowNotConverged(PowerFlowError):
    """Newton iteration hit its limit; carries the last iterate for diagnostics"""

    def __init__(self, iterations: int, mismatch: float, state: "PowerFlowState"):
        self.iterations = iterations
        self.mismatch = mismatch
        self.state = state
        super().__init__(f"power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e})")


@dataclass(frozen=True, eq=False)
class PowerFlowState:
    """Bus voltages and the branch flows they induce, measured at each branch end"""

    voltage: np.ndarray
    angle: np.ndarray
    branch_p_from: np.ndarray
    branch_q_from: np.ndarray
    branch_p_to: np.ndarray
    branch_q_to: np.ndarray
    iterations: int = 0
    mismatch: float = 0.0
    history: Tuple[Dict[str, float], ...] = ()


class BranchFlowPartials(NamedTuple):
    dp_dvi: np.ndarray
    dp_dvj: np.ndarray
    dp_dthi: np.ndarray
    dp_dthj: np.ndarray
    dq_dvi: np.ndarray
    dq_dvj: np.ndarray
    dq_dthi: np.ndarray
    dq_dthj: np.ndarray


class PowerInjections(NamedTuple):
    p: np.ndarray
    q: np.ndarray
    gen_p: np.ndarray
    bus_load: np.ndarray


def branch_flow(v_i, v_j, th_i, th_j, g, b):
    """Real and reactive flow leaving bus i on branch ij, measured at i"""
    delta = th_i - th_j
    cos_d = np.cos(delta)
    sin_d = np.sin(delta)
    vv = v_i * v_j
    p = (v_i * v_i - vv * cos_d) * g - vv * sin_d * b
    q = (vv * cos_d - v_i * v_i) * b - vv * sin_d * g
    return p, q


def branch_flow_jacobian(v_i, v_j, th_i, th_j, g, b) -> BranchFlowPartials:
    """Closed-form partials of branch_flow with respect to (v_i, v_j, th_i, th_j)"""
    delta = th_i - th_j
    cos_d = np.cos(delta)
    sin_d = np.sin(delta)
    vv = v_i * v_j
    dp_dthi = vv * sin_d * g - vv * cos_d * b
    dq_dthi = -vv * sin_d * b - vv * cos_d * g
    return BranchFlowPartials(
        dp_dvi=(2.0 * v_i - v_j * cos_d) * g - v_j * sin_d * b,
        dp_dvj=-v_i * cos_d * g - v_i * sin_d * b,
        dp_dthi=dp_dthi,
        dp_dthj=-dp_dthi,
        dq_dvi=(v_j * cos_d - 2.0 * v_i) * b - v_j * sin_d * g,
        dq_dvj=v_i * cos_d * b - v_i * sin_d * g,
        dq_dthi=dq_dthi,
        dq_dthj=-dq_dthi,
    )


def state_from_voltages(case: NetworkCase, voltage: np.ndarray, angle: np.ndarray, **meta: Any) -> PowerFlowState:
    """Evaluate both branch ends for the given bus voltages"""
    voltage = np.asarray(voltage, dtype=float)
    angle = np.asarray(angle, dtype=float)
    f, t = case.branch_from, case.branch_to
    g, b = case.conductance, case.susceptance
    p_from, q_from = branch_flow(voltage[f], voltage[t], angle[f], angle[t], g, b)
    p_to, q_to = branch_flow(voltage[t], voltage[f], angle[t], angle[f], g, b)
    return PowerFlowState(voltage.copy(), angle.copy(), p_from, q_from, p_to, q_to, **meta)


def nodal_injections(case: NetworkCase, state: PowerFlowState) -> Tuple[np.ndarray, np.ndarray]:
    """Net power leaving each bus into the network"""
    n = len(case.buses)
    p = np.zeros(n)
    q = np.zeros(n)
    np.add.at(p, case.branch_from, state.branch_p_from)
    np.add.at(p, case.branch_to, state.branch_p_to)
    np.add.at(q, case.branch_from, state.branch_q_from)
    np.add.at(q, case.branch_to, state.branch_q_to)
    return p, q


def branch_losses(state: PowerFlowState) -> np.ndarray:
    return state.branch_p_from + state.branch_p_to


def default_slack_bus(case: NetworkCase) -> int:
    """Bus of the largest-capacity generator (first one on ties)"""
    if not case.generators:
        return case.buses[0].id
    best = max(case.generators, key=lambda gen: gen.capacity)
    return best.bus


def _injection_jacobian(case: NetworkCase, voltage: np.ndarray, angle: np.ndarray):
    n = len(case.buses)
    f, t = case.branch_from, case.branch_to
    g, b = case.conductance, case.susceptance
    state = state_from_voltages(case, voltage, angle)
    p, q = nodal_injections(case, state)

    fwd = branch_flow_jacobian(voltage[f], voltage[t], angle[f], angle[t], g, b)
    rev = branch_flow_jacobian(voltage[t], voltage[f], angle[t], angle[f], g, b)
    # rows 0..n-1 real power, n..2n-1 reactive; columns 0..n-1 angle, n..2n-1 magnitude
    jac = np.zeros((2 * n, 2 * n))
    for row_off, (d_thi, d_thj, d_vi, d_vj), (r_thi, r_thj, r_vi, r_vj) in (
        (0, (fwd.dp_dthi, fwd.dp_dthj, fwd.dp_dvi, fwd.dp_dvj), (rev.dp_dthi, rev.dp_dthj, rev.dp_dvi, rev.dp_dvj)),
        (n, (fwd.dq_dthi, fwd.dq_dthj, fwd.dq_dvi, fwd.dq_dvj), (rev.dq_dthi, rev.dq_dthj, rev.dq_dvi, rev.dq_dvj)),
    ):
        np.add.at(jac, (row_off + f, f), d_thi)
        np.add.at(jac, (row_off + f, t), d_thj)
        np.add.at(jac, (row_off + f, n + f), d_vi)
        np.add.at(jac, (row_off + f, n + t), d_vj)
        np.add.at(jac, (row_off + t, t), r_thi)
        np.add.at(jac, (row_off + t, f), r_thj)
        np.add.at(jac, (row_off + t, n + t), r_vi)
        np.add.at(jac, (row_off + t, n + f), r_vj)
    return p, q, jac


def solve_power_flow(
    case: NetworkCase,
    injections: Tuple[np.ndarray, np.ndarray],
    slack: Optional[int] = None,
    voltage_setpoints: Optional[Dict[int, float]] = None,
    options: Optional[Dict[str, Any]] = None,
) -> PowerFlowState:
    """
    Newton-Raphson power flow from a flat start.

    `injections` are per-bus net (P, Q) in pu, ordered as case.buses. Buses listed in
    `voltage_setpoints` are PV buses (Q free); the slack bus holds angle 0 and absorbs
    the residual real and reactive power.
    """
    opts = {**DEFAULT_POWER_FLOW_OPTIONS, **(options or {})}
    setpoints = dict(voltage_setpoints or {})
    slack = default_slack_bus(case) if slack is None else slack
    if slack not in case.bus_index:
        raise PowerFlowError(f"slack bus {slack} not in case")

    n = len(case.buses)
    p_spec = np.asarray(injections[0], dtype=float)
    q_spec = np.asarray(injections[1], dtype=float)
    if p_spec.shape != (n,) or q_spec.shape != (n,):
        raise PowerFlowError(f"injections must have {n} entries per component")

    s = case.bus_index[slack]
    pv = sorted(case.bus_index[bus] for bus in setpoints if bus != slack)
    theta_idx = np.array([i for i in range(n) if i != s], dtype=int)
    v_idx = np.array([i for i in range(n) if i != s and i not in pv], dtype=int)

    voltage = np.ones(n)
    for bus, value in setpoints.items():
        voltage[case.bus_index[bus]] = value
    angle = np.zeros(n)

    rows = np.concatenate([theta_idx, n + v_idx])
    cols = np.concatenate([theta_idx, n + v_idx])
    history = []
    for iteration in range(opts["max_iterations"] + 1):
        p, q, jac = _injection_jacobian(case, voltage, angle)
        residual = np.concatenate([(p_spec - p)[theta_idx], (q_spec - q)[v_idx]])
        mismatch = float(np.max(np.abs(residual))) if residual.size else 0.0
        history.append({"iteration": iteration, "mismatch": mismatch})
        logger.debug(f"Newton iteration {iteration}: mismatch {mismatch:.3e}")
        if mismatch <= opts["tolerance"]:
            return state_from_voltages(case, voltage, angle, iterations=iteration,
                                       mismatch=mismatch, history=tuple(history))
        if iteration == opts["max_iterations"]:
            break
        try:
            step = scipy.linalg.solve(jac[np.ix_(rows, cols)], residual)
        except (scipy.linalg.LinAlgError, ValueError) as e:
            raise PowerFlowError(f"singular Jacobian at iteration {iteration}: {e}") from e
        if not np.all(np.isfinite(step)):
            raise PowerFlowError(f"singular Jacobian at iteration {iteration}: non-finite step")
        angle[theta_idx] += step[: len(theta_idx)]
        voltage[v_idx] += step[len(theta_idx):]

    state = state_from_voltages(case, voltage, angle, iterations=opts["max_iterations"],
                                mismatch=mismatch, history=tuple(history))
    raise PowerFlowNotConverged(opts["max_iterations"], mismatch, state)


def proportional_injections(case: NetworkCase, scenario: Scenario, t: int, loss_allowance: float = 0.02) -> PowerInjections:
    """Nominal loads at step t served by all generators in proportion to their available capacity"""
    n = len(case.buses)
    bus_load = np.zeros(n)
    q = np.zeros(n)
    for load in case.loads:
        demand = nominal_profile(load, scenario)[t]
        bus_load[case.bus_index[load.bus]] += demand
        q[case.bus_index[load.bus]] -= load.power_factor_ratio * demand
    available = np.array([available_capacity(gen, scenario)[t] for gen in case.generators])
    total = bus_load.sum() * (1.0 + loss_allowance)
    gen_p = total * available / available.sum() if available.sum() > 0 else np.zeros(len(case.generators))
    p = -bus_load.copy()
    np.add.at(p, case.gen_bus, gen_p)
    return PowerInjections(p=p, q=q, gen_p=gen_p, bus_load=bus_load)


def settle_slack(case: NetworkCase, state: PowerFlowState, gen_p: np.ndarray, bus_load: np.ndarray,
                 slack: Optional[int] = None) -> np.ndarray:
    """Generator outputs with the slack bus generators absorbing the solved real-power residual"""
    slack = default_slack_bus(case) if slack is None else slack
    s = case.bus_index[slack]
    injected, _ = nodal_injections(case, state)
    at_slack = np.flatnonzero(case.gen_bus == s)
    settled = np.array(gen_p, dtype=float)
    if at_slack.size == 0:
        raise PowerFlowError(f"no generator at slack bus {slack}")
    required = injected[s] + bus_load[s] - settled.sum(where=case.gen_bus == s)
    settled[at_slack[0]] += required
    return settled


def dump_iterations(state: PowerFlowState, path: Union[str, Path]) -> Path:
    """Write the Newton iteration history as JSON lines"""
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for entry in state.history:
            handle.write(json.dumps(entry) + "\n")
    return path


def main():
    """Solve the bundled case at every step of the bundled scenario"""
    logging.basicConfig(level=logging.INFO)
    from grid.grid_model import load_case, load_scenario

    print("⚡ Power Flow - Bundled Case Validation")
    print("=" * 40)
    case = load_case("case39")
    scenario = load_scenario("day", case)
    setpoints = {gen.bus: 1.0 for gen in case.generators}
    for t in range(scenario.horizon):
        inj = proportional_injections(case, scenario, t)
        try:
            state = solve_power_flow(case, (inj.p, inj.q), voltage_setpoints=setpoints)
        except PowerFlowError as e:
            print(f"❌ t={t}: {e}")
            return 1
        losses = branch_losses(state).sum() * case.base_mva
        print(f"✅ t={t}: {state.iterations} iterations, mismatch {state.mismatch:.2e}, losses {losses:.1f} MW")
    return 0


if __name__ == "__main__":
    exit(main())
