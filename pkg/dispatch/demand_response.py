"""
Demand Response - Carbon-aware scheduling LPs for deferrable loads and TCLs
Builds the per-user LP in matrix form, solves it, and exposes its KKT blocks
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from grid.grid_model import LoadSpec, Scenario, resolve_load
from solvers.lp_solver import LPSolution, LPStandardForm, solve_lp, strict_feasibility

logger = logging.getLogger(__name__)

FEASIBILITY_TOLERANCE = 1e-9


class CdrError(RuntimeError):
    """Base class for demand response failures"""


class CdrConfigurationError(CdrError):
    """Load data cannot form a valid model (inconsistent horizon, energy_min above energy_max)"""


class CdrInfeasibleError(CdrError):
    """No schedule satisfies the load's constraints"""

    def __init__(self, load_id: str, rows: Sequence[str], message: str = "infeasible"):
        self.load_id = load_id
        self.rows = list(rows)
        super().__init__(f"load {load_id}: {message}; violated rows {self.rows}")


@dataclass(frozen=True, eq=False)
class CdrInstance:
    """One user's LP: min cost'P s.t. ineq_matrix P <= ineq_rhs, cost = dt*(c_e*w + p)"""

    load: LoadSpec
    intensity: np.ndarray
    price: np.ndarray
    dt_hours: float
    lp: LPStandardForm
    model_rows: int
    proximity: Optional[Tuple[np.ndarray, float]] = None
    temperature_drift: Optional[np.ndarray] = None
    temperature_gain: Optional[np.ndarray] = None

    @property
    def horizon(self) -> int:
        return self.intensity.shape[0]

    @property
    def row_labels(self) -> Tuple[str, ...]:
        return self.lp.row_labels


@dataclass
class CdrResult:
    load_id: str
    schedule: np.ndarray
    dual: np.ndarray
    objective: float
    row_labels: Tuple[str, ...]
    iterations: int = 0

    def box_dual(self, horizon: int) -> np.ndarray:
        """Net multiplier of the per-time power box: upper minus lower"""
        return self.dual[:horizon] - self.dual[horizon: 2 * horizon]


def cost_vector(intensity: np.ndarray, price: np.ndarray, dt_hours: float, carbon_cost: float) -> np.ndarray:
    return dt_hours * (carbon_cost * np.asarray(intensity, dtype=float) + np.asarray(price, dtype=float))


def _series(values: Any, horizon: int, name: str, load_id: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.shape[0] != horizon:
        raise CdrConfigurationError(f"load {load_id}: {name} has {arr.shape[0]} entries, horizon is {horizon}")
    return arr


def _box(load: LoadSpec, horizon: int) -> Tuple[np.ndarray, np.ndarray]:
    if load.bounds_low is None or load.bounds_high is None:
        raise CdrConfigurationError(f"load {load.id}: power bounds are not resolved")
    low = _series(load.bounds_low, horizon, "bounds_low", load.id)
    high = _series(load.bounds_high, horizon, "bounds_high", load.id)
    if np.any(low > high):
        raise CdrConfigurationError(f"load {load.id}: bounds_low exceeds bounds_high")
    return low, high


def _box_rows(low: np.ndarray, high: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray], List[str]]:
    horizon = low.shape[0]
    eye = np.eye(horizon)
    labels = [f"upper[{t}]" for t in range(horizon)] + [f"lower[{t}]" for t in range(horizon)]
    return [eye, -eye], [high, -low], labels


def _with_proximity(matrix: np.ndarray, rhs: np.ndarray, labels: List[str],
                    proximity: Optional[Tuple[np.ndarray, float]], load_id: str) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    if proximity is None:
        return matrix, rhs, labels
    center, radius = proximity
    horizon = matrix.shape[1]
    center = _series(center, horizon, "proximity center", load_id)
    if radius < 0:
        raise CdrConfigurationError(f"load {load_id}: proximity radius must be nonnegative")
    eye = np.eye(horizon)
    labels = labels + [f"proximity_upper[{t}]" for t in range(horizon)] + [f"proximity_lower[{t}]" for t in range(horizon)]
    return (np.vstack([matrix, eye, -eye]),
            np.concatenate([rhs, center + radius, radius - center]),
            labels)


def build_deferrable(
    load: LoadSpec,
    intensity: Sequence[float],
    price: Sequence[float],
    dt_hours: float,
    proximity: Optional[Tuple[np.ndarray, float]] = None,
) -> CdrInstance:
    """Per-time power box plus the energy budget energy_min <= dt * sum(P) <= energy_max"""
    if load.kind != "deferrable":
        raise CdrConfigurationError(f"load {load.id} is {load.kind}, not deferrable")
    w = np.asarray(intensity, dtype=float).reshape(-1)
    horizon = w.shape[0]
    p = _series(price, horizon, "price", load.id)
    low, high = _box(load, horizon)
    if load.energy_min is None or load.energy_max is None:
        raise CdrConfigurationError(f"load {load.id}: energy budget is not resolved")
    if load.energy_min > load.energy_max:
        raise CdrConfigurationError(f"load {load.id}: energy_min {load.energy_min} exceeds energy_max {load.energy_max}")

    blocks, rhs, labels = _box_rows(low, high)
    energy_row = np.full((1, horizon), dt_hours)
    blocks += [energy_row, -energy_row]
    rhs += [np.array([load.energy_max]), np.array([-load.energy_min])]
    labels += ["energy_max", "energy_min"]
    matrix, vector = np.vstack(blocks), np.concatenate(rhs)
    model_rows = matrix.shape[0]
    matrix, vector, labels = _with_proximity(matrix, vector, labels, proximity, load.id)
    lp = LPStandardForm(cost_vector(w, p, dt_hours, load.carbon_cost), matrix, vector, tuple(labels))
    return CdrInstance(load=load, intensity=w, price=p, dt_hours=dt_hours, lp=lp,
                       model_rows=model_rows, proximity=proximity)


def tcl_dynamics(load: LoadSpec, outdoor_temp: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Indoor temperature as drift + gain @ P by forward substitution of the first-order model"""
    alpha, beta = load.heat_transfer, load.thermal_efficiency
    horizon = outdoor_temp.shape[0]
    decay = 1.0 - alpha
    drift = np.zeros(horizon)
    gain = np.zeros((horizon, horizon))
    previous = load.temp_initial
    for t in range(horizon):
        drift[t] = decay * previous + alpha * outdoor_temp[t]
        previous = drift[t]
        gain[t, : t + 1] = beta * decay ** (t - np.arange(t + 1))
    return drift, gain


def build_tcl(
    load: LoadSpec,
    intensity: Sequence[float],
    price: Sequence[float],
    outdoor_temp: Sequence[float],
    dt_hours: float,
    proximity: Optional[Tuple[np.ndarray, float]] = None,
) -> CdrInstance:
    """Per-time power box plus comfort rows temp_min <= drift + gain @ P <= temp_max"""
    if load.kind != "tcl":
        raise CdrConfigurationError(f"load {load.id} is {load.kind}, not tcl")
    if load.heat_transfer is None or not 0.0 < load.heat_transfer < 1.0:
        raise CdrConfigurationError(f"load {load.id}: heat_transfer must lie strictly between 0 and 1")
    w = np.asarray(intensity, dtype=float).reshape(-1)
    horizon = w.shape[0]
    p = _series(price, horizon, "price", load.id)
    outdoor = _series(outdoor_temp, horizon, "outdoor_temp", load.id)
    low, high = _box(load, horizon)
    drift, gain = tcl_dynamics(load, outdoor)

    # gain entries share one sign, so the box corners bound the reachable band
    reach_low, reach_high = drift + gain @ low, drift + gain @ high
    reachable_min = np.minimum(reach_low, reach_high)
    reachable_max = np.maximum(reach_low, reach_high)
    unreachable = ([f"comfort_min[{t}]" for t in np.flatnonzero(reachable_max < load.temp_min - FEASIBILITY_TOLERANCE)]
                   + [f"comfort_max[{t}]" for t in np.flatnonzero(reachable_min > load.temp_max + FEASIBILITY_TOLERANCE)])
    if unreachable:
        raise CdrInfeasibleError(load.id, unreachable, "comfort band unreachable within the power box")

    blocks, rhs, labels = _box_rows(low, high)
    blocks += [gain, -gain]
    rhs += [load.temp_max - drift, drift - load.temp_min]
    labels += [f"comfort_max[{t}]" for t in range(horizon)] + [f"comfort_min[{t}]" for t in range(horizon)]
    matrix, vector = np.vstack(blocks), np.concatenate(rhs)
    model_rows = matrix.shape[0]
    matrix, vector, labels = _with_proximity(matrix, vector, labels, proximity, load.id)
    lp = LPStandardForm(cost_vector(w, p, dt_hours, load.carbon_cost), matrix, vector, tuple(labels))
    return CdrInstance(load=load, intensity=w, price=p, dt_hours=dt_hours, lp=lp, model_rows=model_rows,
                       proximity=proximity, temperature_drift=drift, temperature_gain=gain)


def build_instance(
    load: LoadSpec,
    scenario: Scenario,
    intensity: Sequence[float],
    proximity: Optional[Tuple[np.ndarray, float]] = None,
) -> CdrInstance:
    """Resolve the load against the scenario and build its deferrable or TCL model"""
    resolved = resolve_load(load, scenario)
    price = scenario.price_at(load.bus)
    if load.kind == "deferrable":
        return build_deferrable(resolved, intensity, price, scenario.dt_hours, proximity)
    if load.kind == "tcl":
        return build_tcl(resolved, intensity, price, scenario.outdoor_temp, scenario.dt_hours, proximity)
    raise CdrConfigurationError(f"load {load.id} is fixed and has no demand response model")


def solve_cdr(instance: CdrInstance, options: Optional[Dict[str, Any]] = None) -> CdrResult:
    """Optimal schedule and row multipliers; raises CdrInfeasibleError naming the violated rows"""
    solution: LPSolution = solve_lp(instance.lp, options)
    if solution.status == "infeasible":
        rows = [instance.row_labels[r] for r in solution.violated_rows]
        raise CdrInfeasibleError(instance.load.id, rows)
    if solution.status != "optimal":
        raise CdrError(f"load {instance.load.id}: LP {solution.status}")
    return CdrResult(
        load_id=instance.load.id,
        schedule=solution.primal,
        dual=solution.dual,
        objective=float(solution.objective),
        row_labels=instance.row_labels,
        iterations=solution.iterations,
    )


def check_slater(instance: CdrInstance) -> bool:
    """Warn when the model rows admit no strictly feasible schedule"""
    model = LPStandardForm(instance.lp.cost, instance.lp.ineq_matrix[: instance.model_rows],
                           instance.lp.ineq_rhs[: instance.model_rows], instance.row_labels[: instance.model_rows])
    strict, margin = strict_feasibility(model)
    if not strict:
        logger.warning(f"⚠️ Load {instance.load.id}: no strictly feasible schedule (margin {margin:.2e}); "
                       "multipliers may be non-unique")
    return strict


def greedy_deferrable_oracle(load: LoadSpec, cost: Sequence[float], dt_hours: float) -> np.ndarray:
    """
    Fill the cheapest slots first (ties by time index): start at the lower box, raise
    toward the upper box until the energy reaches energy_min, and keep raising through
    negative-cost slots up to energy_max.
    """
    c = np.asarray(cost, dtype=float)
    low, high = _box(load, c.shape[0])
    energy_min, energy_max = load.energy_min, load.energy_max
    if dt_hours * high.sum() < energy_min - FEASIBILITY_TOLERANCE:
        raise CdrInfeasibleError(load.id, ["energy_min"], "upper box cannot deliver energy_min")
    if dt_hours * low.sum() > energy_max + FEASIBILITY_TOLERANCE:
        raise CdrInfeasibleError(load.id, ["energy_max"], "lower box exceeds energy_max")

    schedule = low.copy()
    energy = dt_hours * schedule.sum()
    for t in np.argsort(c, kind="stable"):
        target = energy_max if c[t] < 0 else energy_min
        if energy >= target:
            continue
        raise_by = min(high[t] - low[t], (target - energy) / dt_hours)
        schedule[t] += raise_by
        energy += dt_hours * raise_by
    return schedule


@dataclass(frozen=True, eq=False)
class KktBlocks:
    """
    Optimality conditions of one user's LP over (P, lambda, w):
    stationarity dt*c_e*w + dt*p + A'lambda = 0, complementarity lambda*(AP - b) = 0,
    primal AP <= b, dual lambda >= 0.
    """

    load_id: str
    matrix: np.ndarray
    rhs: np.ndarray
    dt_hours: float
    carbon_cost: float
    price: np.ndarray
    row_labels: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    def stationarity(self, lam: np.ndarray, w: np.ndarray) -> np.ndarray:
        return self.dt_hours * (self.carbon_cost * np.asarray(w) + self.price) + self.matrix.T @ lam

    def primal(self, schedule: np.ndarray) -> np.ndarray:
        return self.matrix @ schedule - self.rhs

    def complementarity(self, schedule: np.ndarray, lam: np.ndarray) -> np.ndarray:
        return lam * self.primal(schedule)


def kkt_blocks(instance: CdrInstance) -> KktBlocks:
    """KKT blocks of the model rows; proximity rows are not part of the embedded model"""
    rows = instance.model_rows
    return KktBlocks(
        load_id=instance.load.id,
        matrix=instance.lp.ineq_matrix[:rows],
        rhs=instance.lp.ineq_rhs[:rows],
        dt_hours=instance.dt_hours,
        carbon_cost=instance.load.carbon_cost,
        price=instance.price,
        row_labels=instance.row_labels[:rows],
    )


def kkt_residuals(blocks: KktBlocks, schedule: np.ndarray, lam: np.ndarray, w: np.ndarray) -> Dict[str, float]:
    """Max violation of each KKT block"""
    return {
        "stationarity": float(np.max(np.abs(blocks.stationarity(lam, w)), initial=0.0)),
        "complementarity": float(np.max(np.abs(blocks.complementarity(schedule, lam)), initial=0.0)),
        "primal": float(np.max(blocks.primal(schedule), initial=0.0)),
        "dual": float(max(0.0, -np.min(lam, initial=0.0))),
    }


def tcl_temperatures(instance: CdrInstance, schedule: Sequence[float]) -> np.ndarray:
    """Indoor temperature trajectory produced by a schedule"""
    if instance.temperature_gain is None:
        raise CdrConfigurationError(f"load {instance.load.id} has no thermal model")
    return instance.temperature_drift + instance.temperature_gain @ np.asarray(schedule, dtype=float)


def cdr_schedule_frame(results: Sequence[CdrResult], base_mva: float = 1.0,
                       time_labels: Optional[Sequence[float]] = None) -> pd.DataFrame:
    """One row per (load, time): power and the net multiplier of its power box"""
    rows = []
    for result in results:
        horizon = result.schedule.shape[0]
        labels = list(time_labels) if time_labels is not None else list(range(horizon))
        duals = result.box_dual(horizon)
        for t in range(horizon):
            rows.append({"load": result.load_id, "time": labels[t], "power": result.schedule[t] * base_mva,
                         "marginal_dual": duals[t]})
    return pd.DataFrame(rows, columns=["load", "time", "power", "marginal_dual"])
