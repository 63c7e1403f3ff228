"""
Grid Model - Network case and scenario data model
Parses case/scenario documents, validates invariants and normalizes to per-unit
"""

import json
import logging
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"
BUNDLED_CASES = {"case39": "case39.json"}
BUNDLED_SCENARIOS = {"day": "scenario_day.json"}

FUELS = ("coal", "gas", "wind", "solar", "other")
RENEWABLE_FUELS = ("wind", "solar")
LOAD_KINDS = ("fixed", "deferrable", "tcl")
FLEXIBLE_KINDS = ("deferrable", "tcl")

FLEX_LOW_FACTOR = 0.5
FLEX_HIGH_FACTOR = 1.5
DEFAULT_POWER_FACTOR_RATIO = 0.3
DEFAULT_CARBON_COST = 1.0
DEFAULT_OUTDOOR_TEMP = 20.0
KWH_PER_MWH = 1000.0

DEFAULT_BUS_LIMITS = {
    "voltage_min": 0.94,
    "voltage_max": 1.06,
    "angle_min": -0.5,
    "angle_max": 0.5,
}

SUPPORTED_UNITS = {
    "power": ("MW", "pu"),
    "reactive": ("MVAr", "pu"),
    "apparent": ("MVA", "pu"),
    "impedance": ("pu",),
    "angle": ("rad", "deg"),
    "emission_factor": ("lbs/kWh",),
    "cost": ("$/MWh", "$/puh"),
    "energy": ("MWh", "puh"),
    "temperature": ("degC",),
    "thermal_efficiency": ("degC/MW", "degC/pu"),
}
PHYSICAL_UNITS = {
    "power": "MW",
    "reactive": "MVAr",
    "apparent": "MVA",
    "impedance": "pu",
    "angle": "rad",
    "emission_factor": "lbs/kWh",
    "cost": "$/MWh",
    "energy": "MWh",
    "temperature": "degC",
    "thermal_efficiency": "degC/MW",
}
PER_UNIT_UNITS = {
    "power": "pu",
    "reactive": "pu",
    "apparent": "pu",
    "impedance": "pu",
    "angle": "rad",
    "emission_factor": "lbs/kWh",
    "cost": "$/puh",
    "energy": "puh",
    "temperature": "degC",
    "thermal_efficiency": "degC/pu",
}


class CaseFormatError(ValueError):
    """Raised when a case or scenario document violates the schema or an invariant"""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class Bus:
    id: int
    voltage_min: float = DEFAULT_BUS_LIMITS["voltage_min"]
    voltage_max: float = DEFAULT_BUS_LIMITS["voltage_max"]
    angle_min: float = DEFAULT_BUS_LIMITS["angle_min"]
    angle_max: float = DEFAULT_BUS_LIMITS["angle_max"]


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: int
    to_bus: int
    conductance: float
    susceptance: float
    apparent_capacity: float


@dataclass(frozen=True)
class Generator:
    """Generating unit; power limits in pu, costs on the pu power basis ($/pu^2h, $/puh, $/h)"""

    id: str
    bus: int
    fuel: str
    emission_factor: float
    cost_quadratic: float
    cost_linear: float
    cost_constant: float
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    ramp_down: float
    ramp_up: float
    capacity: float

    @property
    def is_renewable(self) -> bool:
        return self.fuel in RENEWABLE_FUELS


@dataclass(frozen=True)
class LoadSpec:
    """Load at a bus; fixed loads follow the scenario load factor, flexible loads are scheduled"""

    id: str
    bus: int
    kind: str
    nominal_power: float
    power_factor_ratio: float = DEFAULT_POWER_FACTOR_RATIO
    bounds_low: Optional[Tuple[float, ...]] = None
    bounds_high: Optional[Tuple[float, ...]] = None
    energy_min: Optional[float] = None
    energy_max: Optional[float] = None
    heat_transfer: Optional[float] = None
    thermal_efficiency: Optional[float] = None
    temp_min: Optional[float] = None
    temp_max: Optional[float] = None
    temp_initial: Optional[float] = None
    carbon_cost: float = DEFAULT_CARBON_COST

    @property
    def is_flexible(self) -> bool:
        return self.kind in FLEXIBLE_KINDS


@dataclass(frozen=True)
class NetworkCase:
    """Immutable network case in per-unit on `base_mva`"""

    name: str
    base_mva: float
    buses: Tuple[Bus, ...]
    branches: Tuple[Branch, ...]
    generators: Tuple[Generator, ...]
    loads: Tuple[LoadSpec, ...]
    notes: Tuple[str, ...] = ()

    @cached_property
    def bus_index(self) -> Dict[int, int]:
        return {bus.id: pos for pos, bus in enumerate(self.buses)}

    @cached_property
    def branch_from(self) -> np.ndarray:
        return _frozen_array([self.bus_index[br.from_bus] for br in self.branches], dtype=int)

    @cached_property
    def branch_to(self) -> np.ndarray:
        return _frozen_array([self.bus_index[br.to_bus] for br in self.branches], dtype=int)

    @cached_property
    def conductance(self) -> np.ndarray:
        return _frozen_array([br.conductance for br in self.branches])

    @cached_property
    def susceptance(self) -> np.ndarray:
        return _frozen_array([br.susceptance for br in self.branches])

    @cached_property
    def gen_bus(self) -> np.ndarray:
        return _frozen_array([self.bus_index[gen.bus] for gen in self.generators], dtype=int)

    @cached_property
    def emission_factors(self) -> np.ndarray:
        return _frozen_array([gen.emission_factor for gen in self.generators])

    @property
    def flexible_loads(self) -> List[LoadSpec]:
        return [load for load in self.loads if load.is_flexible]

    @property
    def emission_scale(self) -> float:
        """lbs per (pu power x hour x lbs/kWh)"""
        return self.base_mva * KWH_PER_MWH

    def load(self, load_id: str) -> LoadSpec:
        for load in self.loads:
            if load.id == load_id:
                return load
        raise KeyError(load_id)

    def generator(self, gen_id: str) -> Generator:
        for gen in self.generators:
            if gen.id == gen_id:
                return gen
        raise KeyError(gen_id)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Operating day: horizon, profiles and prices (arrays are read-only)"""

    horizon: int
    dt_hours: float
    load_factor: np.ndarray
    flexible_load_factor: np.ndarray
    renewable_factor: Dict[str, np.ndarray]
    price: Dict[int, np.ndarray]
    outdoor_temp: np.ndarray
    emission_price: float = 0.0
    time_labels: Tuple[float, ...] = ()
    name: str = "scenario"
    notes: Tuple[str, ...] = ()

    def renewable_profile(self, gen_id: str) -> np.ndarray:
        profile = self.renewable_factor.get(gen_id)
        return profile if profile is not None else np.ones(self.horizon)

    def price_at(self, bus: int) -> np.ndarray:
        series = self.price.get(bus)
        return series if series is not None else np.zeros(self.horizon)


def _frozen_array(values: Any, dtype: Any = float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


def to_per_unit(value: Union[float, np.ndarray], base_mva: float) -> Union[float, np.ndarray]:
    return value / base_mva


def to_physical(value: Union[float, np.ndarray], base_mva: float) -> Union[float, np.ndarray]:
    return value * base_mva


# ---------------------------------------------------------------- parsing helpers

def _require(obj: Dict[str, Any], key: str, path: str) -> Any:
    if not isinstance(obj, dict):
        raise CaseFormatError(path, "expected an object")
    if key not in obj:
        raise CaseFormatError(f"{path}.{key}" if path else key, "missing required field")
    return obj[key]


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseFormatError(path, f"expected a number, got {value!r}")
    if not np.isfinite(value):
        raise CaseFormatError(path, "must be finite")
    return float(value)


def _optional_number(obj: Dict[str, Any], key: str, path: str) -> Optional[float]:
    if obj.get(key) is None:
        return None
    return _number(obj[key], f"{path}.{key}")


def _series(value: Any, length: int, path: str) -> np.ndarray:
    if not isinstance(value, list):
        raise CaseFormatError(path, "expected an array")
    if len(value) != length:
        raise CaseFormatError(path, f"expected {length} entries, got {len(value)}")
    return _frozen_array([_number(v, f"{path}[{i}]") for i, v in enumerate(value)])


def _integer(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise CaseFormatError(path, f"expected an integer, got {value!r}")
    return value


def _parse_units(doc: Dict[str, Any]) -> Dict[str, str]:
    units = dict(PHYSICAL_UNITS)
    declared = doc.get("units", {})
    if not isinstance(declared, dict):
        raise CaseFormatError("units", "expected an object")
    for group, unit in declared.items():
        if group not in SUPPORTED_UNITS:
            raise CaseFormatError(f"units.{group}", "unknown unit group")
        if unit not in SUPPORTED_UNITS[group]:
            raise CaseFormatError(f"units.{group}", f"unsupported unit {unit!r}, expected one of {SUPPORTED_UNITS[group]}")
        units[group] = unit
    return units


class _UnitConverter:
    """Converts declared document units to the internal per-unit basis"""

    def __init__(self, units: Dict[str, str], base_mva: float):
        self.units = units
        self.base = base_mva

    def _scale(self, group: str) -> float:
        return 1.0 if self.units[group] in ("pu", "puh", "$/puh", "degC/pu") else self.base

    def power(self, value: float, group: str = "power") -> float:
        return to_per_unit(value, self._scale(group))

    def energy(self, value: float) -> float:
        return to_per_unit(value, self._scale("energy"))

    def angle(self, value: float) -> float:
        return float(np.deg2rad(value)) if self.units["angle"] == "deg" else value

    def costs(self, c2: float, c1: float, c0: float) -> Tuple[float, float, float]:
        s = self._scale("cost")
        return c2 * s * s, c1 * s, c0

    def thermal_efficiency(self, value: float) -> float:
        return value * self._scale("thermal_efficiency")


def _check_unique(items: Sequence[Any], section: str) -> None:
    seen = set()
    for pos, item in enumerate(items):
        if item.id in seen:
            raise CaseFormatError(f"{section}[{pos}].id", f"duplicate id {item.id!r}")
        seen.add(item.id)


def _parse_bus(raw: Dict[str, Any], path: str, defaults: Dict[str, float], conv: _UnitConverter) -> Bus:
    limits = {}
    for key, default in defaults.items():
        value = _optional_number(raw, key, path)
        if value is None:
            limits[key] = default
        elif key.startswith("angle"):
            limits[key] = conv.angle(value)
        else:
            limits[key] = value
    bus = Bus(id=_integer(_require(raw, "id", path), f"{path}.id"), **limits)
    if bus.voltage_min <= 0:
        raise CaseFormatError(f"{path}.voltage_min", "must be positive")
    if bus.voltage_min > bus.voltage_max:
        raise CaseFormatError(f"{path}.voltage_max", "voltage_min exceeds voltage_max")
    if bus.angle_min > bus.angle_max:
        raise CaseFormatError(f"{path}.angle_max", "angle_min exceeds angle_max")
    return bus


def _parse_branch(raw: Dict[str, Any], pos: int, path: str, conv: _UnitConverter) -> Branch:
    from_bus = _integer(_require(raw, "from", path), f"{path}.from")
    to_bus = _integer(_require(raw, "to", path), f"{path}.to")
    if from_bus == to_bus:
        raise CaseFormatError(path, "self-loop branch")
    if "conductance" in raw or "susceptance" in raw:
        g = _number(_require(raw, "conductance", path), f"{path}.conductance")
        b = _number(_require(raw, "susceptance", path), f"{path}.susceptance")
    else:
        r = _number(_require(raw, "r", path), f"{path}.r")
        x = _number(_require(raw, "x", path), f"{path}.x")
        if r == 0.0 and x == 0.0:
            raise CaseFormatError(path, "zero impedance branch")
        y = 1.0 / complex(r, x)
        g, b = y.real, y.imag
    if g < 0:
        raise CaseFormatError(f"{path}.conductance", "must be nonnegative")
    capacity = conv.power(_number(_require(raw, "rating", path), f"{path}.rating"), "apparent")
    if capacity <= 0:
        raise CaseFormatError(f"{path}.rating", "apparent capacity must be positive")
    branch_id = str(raw.get("id", f"{from_bus}-{to_bus}#{pos}"))
    return Branch(branch_id, from_bus, to_bus, g, b, capacity)


def _parse_generator(raw: Dict[str, Any], path: str, conv: _UnitConverter) -> Generator:
    fuel = _require(raw, "fuel", path)
    if fuel not in FUELS:
        raise CaseFormatError(f"{path}.fuel", f"unknown fuel {fuel!r}")
    p_min = conv.power(_number(_require(raw, "p_min", path), f"{path}.p_min"))
    p_max = conv.power(_number(_require(raw, "p_max", path), f"{path}.p_max"))
    q_min = conv.power(_number(_require(raw, "q_min", path), f"{path}.q_min"), "reactive")
    q_max = conv.power(_number(_require(raw, "q_max", path), f"{path}.q_max"), "reactive")
    ramp_up = raw.get("ramp_up")
    ramp_down = raw.get("ramp_down")
    ramp_up = conv.power(_number(ramp_up, f"{path}.ramp_up")) if ramp_up is not None else p_max
    ramp_down = conv.power(_number(ramp_down, f"{path}.ramp_down")) if ramp_down is not None else -p_max
    capacity = raw.get("capacity")
    capacity = conv.power(_number(capacity, f"{path}.capacity")) if capacity is not None else p_max
    c2, c1, c0 = conv.costs(
        _number(raw.get("cost_quadratic", 0.0), f"{path}.cost_quadratic"),
        _number(raw.get("cost_linear", 0.0), f"{path}.cost_linear"),
        _number(raw.get("cost_constant", 0.0), f"{path}.cost_constant"),
    )
    gen = Generator(
        id=str(_require(raw, "id", path)),
        bus=_integer(_require(raw, "bus", path), f"{path}.bus"),
        fuel=fuel,
        emission_factor=_number(_require(raw, "emission_factor", path), f"{path}.emission_factor"),
        cost_quadratic=c2, cost_linear=c1, cost_constant=c0,
        p_min=p_min, p_max=p_max, q_min=q_min, q_max=q_max,
        ramp_down=ramp_down, ramp_up=ramp_up, capacity=capacity,
    )
    if gen.emission_factor < 0:
        raise CaseFormatError(f"{path}.emission_factor", "must be nonnegative")
    if gen.p_min > gen.p_max:
        raise CaseFormatError(f"{path}.p_max", "p_min exceeds p_max")
    if gen.q_min > gen.q_max:
        raise CaseFormatError(f"{path}.q_max", "q_min exceeds q_max")
    if not gen.ramp_down <= 0 <= gen.ramp_up:
        raise CaseFormatError(f"{path}.ramp_up", "ramp limits must satisfy ramp_down <= 0 <= ramp_up")
    if gen.cost_quadratic < 0:
        raise CaseFormatError(f"{path}.cost_quadratic", "must be nonnegative")
    return gen


def _parse_load(raw: Dict[str, Any], path: str, conv: _UnitConverter) -> LoadSpec:
    kind = _require(raw, "kind", path)
    if kind not in LOAD_KINDS:
        raise CaseFormatError(f"{path}.kind", f"unknown load kind {kind!r}")
    bounds = {}
    for key in ("bounds_low", "bounds_high"):
        if raw.get(key) is not None:
            values = raw[key]
            if not isinstance(values, list):
                raise CaseFormatError(f"{path}.{key}", "expected an array")
            bounds[key] = tuple(conv.power(_number(v, f"{path}.{key}[{i}]")) for i, v in enumerate(values))
    energy = {}
    for key in ("energy_min", "energy_max"):
        value = _optional_number(raw, key, path)
        energy[key] = conv.energy(value) if value is not None else None
    beta = _optional_number(raw, "thermal_efficiency", path)
    load = LoadSpec(
        id=str(_require(raw, "id", path)),
        bus=_integer(_require(raw, "bus", path), f"{path}.bus"),
        kind=kind,
        nominal_power=conv.power(_number(_require(raw, "nominal_power", path), f"{path}.nominal_power")),
        power_factor_ratio=_number(raw.get("power_factor_ratio", DEFAULT_POWER_FACTOR_RATIO), f"{path}.power_factor_ratio"),
        bounds_low=bounds.get("bounds_low"),
        bounds_high=bounds.get("bounds_high"),
        energy_min=energy["energy_min"],
        energy_max=energy["energy_max"],
        heat_transfer=_optional_number(raw, "heat_transfer", path),
        thermal_efficiency=conv.thermal_efficiency(beta) if beta is not None else None,
        temp_min=_optional_number(raw, "temp_min", path),
        temp_max=_optional_number(raw, "temp_max", path),
        temp_initial=_optional_number(raw, "temp_initial", path),
        carbon_cost=_number(raw.get("carbon_cost", DEFAULT_CARBON_COST), f"{path}.carbon_cost"),
    )
    _validate_load(load, path)
    return load


def _validate_load(load: LoadSpec, path: str) -> None:
    if load.nominal_power < 0:
        raise CaseFormatError(f"{path}.nominal_power", "must be nonnegative")
    if (load.bounds_low is None) != (load.bounds_high is None):
        raise CaseFormatError(path, "bounds_low and bounds_high must be given together")
    if load.bounds_low is not None:
        if len(load.bounds_low) != len(load.bounds_high):
            raise CaseFormatError(f"{path}.bounds_high", "length differs from bounds_low")
        if any(lo > hi for lo, hi in zip(load.bounds_low, load.bounds_high)):
            raise CaseFormatError(f"{path}.bounds_high", "bounds_low exceeds bounds_high")
    if load.energy_min is not None and load.energy_max is not None and load.energy_min > load.energy_max:
        raise CaseFormatError(f"{path}.energy_max", "energy_min exceeds energy_max")
    if load.temp_min is not None and load.temp_max is not None and load.temp_min > load.temp_max:
        raise CaseFormatError(f"{path}.temp_max", "temp_min exceeds temp_max")
    if load.kind == "tcl":
        for key in ("heat_transfer", "thermal_efficiency", "temp_min", "temp_max", "temp_initial"):
            if getattr(load, key) is None:
                raise CaseFormatError(f"{path}.{key}", "required for tcl loads")
        if not 0.0 < load.heat_transfer < 1.0:
            raise CaseFormatError(f"{path}.heat_transfer", "must lie strictly between 0 and 1")


def _check_references(case: NetworkCase) -> None:
    index = case.bus_index
    for pos, br in enumerate(case.branches):
        for key, bus in (("from", br.from_bus), ("to", br.to_bus)):
            if bus not in index:
                raise CaseFormatError(f"branches[{pos}].{key}", f"unknown bus {bus}")
    for pos, gen in enumerate(case.generators):
        if gen.bus not in index:
            raise CaseFormatError(f"generators[{pos}].bus", f"unknown bus {gen.bus}")
    for pos, load in enumerate(case.loads):
        if load.bus not in index:
            raise CaseFormatError(f"loads[{pos}].bus", f"unknown bus {load.bus}")


def _check_connected(case: NetworkCase) -> None:
    n = len(case.buses)
    if n <= 1:
        return
    rows, cols = case.branch_from, case.branch_to
    adjacency = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    count, labels = connected_components(adjacency, directed=False)
    if count > 1:
        island = [case.buses[i].id for i in np.flatnonzero(labels != labels[0])]
        raise CaseFormatError("branches", f"disconnected graph: {count} islands, buses {island[:10]} unreachable")


def parse_case(text: str) -> NetworkCase:
    """Parse a case document (JSON) into a validated per-unit NetworkCase"""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CaseFormatError("", f"malformed document: {e}") from e
    if not isinstance(doc, dict):
        raise CaseFormatError("", "top level must be an object")

    base_mva = _number(_require(doc, "base_mva", ""), "base_mva")
    if base_mva <= 0:
        raise CaseFormatError("base_mva", "must be positive")
    conv = _UnitConverter(_parse_units(doc), base_mva)

    defaults = dict(DEFAULT_BUS_LIMITS)
    bus_defaults = doc.get("bus_defaults", {})
    if not isinstance(bus_defaults, dict):
        raise CaseFormatError("bus_defaults", "expected an object")
    for key, value in bus_defaults.items():
        if key not in defaults:
            raise CaseFormatError(f"bus_defaults.{key}", "unknown field")
        value = _number(value, f"bus_defaults.{key}")
        defaults[key] = conv.angle(value) if key.startswith("angle") else value

    sections = {}
    for key in ("buses", "branches", "generators", "loads"):
        value = _require(doc, key, "")
        if not isinstance(value, list):
            raise CaseFormatError(key, "expected an array")
        sections[key] = value
    if not sections["buses"]:
        raise CaseFormatError("buses", "at least one bus is required")

    buses = tuple(_parse_bus(raw, f"buses[{i}]", defaults, conv) for i, raw in enumerate(sections["buses"]))
    branches = tuple(_parse_branch(raw, i, f"branches[{i}]", conv) for i, raw in enumerate(sections["branches"]))
    generators = tuple(_parse_generator(raw, f"generators[{i}]", conv) for i, raw in enumerate(sections["generators"]))
    loads = tuple(_parse_load(raw, f"loads[{i}]", conv) for i, raw in enumerate(sections["loads"]))
    for section, items in (("buses", buses), ("branches", branches), ("generators", generators), ("loads", loads)):
        _check_unique(items, section)

    case = NetworkCase(
        name=str(doc.get("name", "case")),
        base_mva=base_mva,
        buses=buses,
        branches=branches,
        generators=generators,
        loads=loads,
        notes=tuple(str(n) for n in doc.get("notes", [])),
    )
    _check_references(case)
    _check_connected(case)
    logger.debug(f"Parsed case {case.name}: {len(buses)} buses, {len(branches)} branches, "
                 f"{len(generators)} generators, {len(loads)} loads")
    return case


def serialize_case(case: NetworkCase) -> str:
    """Write a case back as a per-unit document; parse_case(serialize_case(c)) == c"""
    doc = {
        "name": case.name,
        "notes": list(case.notes),
        "base_mva": case.base_mva,
        "units": dict(PER_UNIT_UNITS),
        "buses": [
            {"id": b.id, "voltage_min": b.voltage_min, "voltage_max": b.voltage_max,
             "angle_min": b.angle_min, "angle_max": b.angle_max}
            for b in case.buses
        ],
        "branches": [
            {"id": br.id, "from": br.from_bus, "to": br.to_bus, "conductance": br.conductance,
             "susceptance": br.susceptance, "rating": br.apparent_capacity}
            for br in case.branches
        ],
        "generators": [
            {"id": g.id, "bus": g.bus, "fuel": g.fuel, "emission_factor": g.emission_factor,
             "cost_quadratic": g.cost_quadratic, "cost_linear": g.cost_linear, "cost_constant": g.cost_constant,
             "p_min": g.p_min, "p_max": g.p_max, "q_min": g.q_min, "q_max": g.q_max,
             "ramp_down": g.ramp_down, "ramp_up": g.ramp_up, "capacity": g.capacity}
            for g in case.generators
        ],
        "loads": [_load_document(load) for load in case.loads],
    }
    return json.dumps(doc, indent=2)


def _load_document(load: LoadSpec) -> Dict[str, Any]:
    doc = {
        "id": load.id, "bus": load.bus, "kind": load.kind, "nominal_power": load.nominal_power,
        "power_factor_ratio": load.power_factor_ratio, "carbon_cost": load.carbon_cost,
    }
    for key in ("energy_min", "energy_max", "heat_transfer", "thermal_efficiency",
                "temp_min", "temp_max", "temp_initial"):
        if getattr(load, key) is not None:
            doc[key] = getattr(load, key)
    if load.bounds_low is not None:
        doc["bounds_low"] = list(load.bounds_low)
        doc["bounds_high"] = list(load.bounds_high)
    return doc


def parse_scenario(text: str, case: Optional[NetworkCase] = None) -> Scenario:
    """Parse a scenario document; when a case is given, references are checked against it"""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CaseFormatError("", f"malformed document: {e}") from e
    if not isinstance(doc, dict):
        raise CaseFormatError("", "top level must be an object")

    horizon = _integer(_require(doc, "horizon", ""), "horizon")
    if horizon < 1:
        raise CaseFormatError("horizon", "must be at least 1")
    dt = _number(_require(doc, "dt_hours", ""), "dt_hours")
    if dt <= 0:
        raise CaseFormatError("dt_hours", "must be positive")

    load_factor = _series(_require(doc, "load_factor", ""), horizon, "load_factor")
    if np.any(load_factor <= 0):
        raise CaseFormatError("load_factor", "entries must be positive")
    if doc.get("flexible_load_factor") is not None:
        flexible_factor = _series(doc["flexible_load_factor"], horizon, "flexible_load_factor")
        if np.any(flexible_factor <= 0):
            raise CaseFormatError("flexible_load_factor", "entries must be positive")
    else:
        flexible_factor = _frozen_array(np.ones(horizon))

    renewable = {}
    for gen_id, values in doc.get("renewable_factor", {}).items():
        series = _series(values, horizon, f"renewable_factor.{gen_id}")
        if np.any(series < 0) or np.any(series > 1):
            raise CaseFormatError(f"renewable_factor.{gen_id}", "entries must lie in [0, 1]")
        if case is not None and gen_id not in {g.id for g in case.generators}:
            raise CaseFormatError(f"renewable_factor.{gen_id}", "unknown generator")
        renewable[gen_id] = series

    price = {}
    for key, values in doc.get("price", {}).items():
        try:
            bus = int(key)
        except ValueError:
            raise CaseFormatError(f"price.{key}", "keys must be bus ids")
        if case is not None and bus not in case.bus_index:
            raise CaseFormatError(f"price.{key}", "unknown bus")
        price[bus] = _series(values, horizon, f"price.{key}")

    if doc.get("outdoor_temp") is not None:
        outdoor = _series(doc["outdoor_temp"], horizon, "outdoor_temp")
    else:
        outdoor = _frozen_array(np.full(horizon, DEFAULT_OUTDOOR_TEMP))
    emission_price = _number(doc.get("emission_price", 0.0), "emission_price")
    if emission_price < 0:
        raise CaseFormatError("emission_price", "must be nonnegative")

    labels = doc.get("time_labels")
    if labels is not None:
        labels = tuple(_series(labels, horizon, "time_labels"))
    else:
        labels = tuple(float(dt * (t + 1)) for t in range(horizon))

    return Scenario(
        horizon=horizon,
        dt_hours=dt,
        load_factor=load_factor,
        flexible_load_factor=flexible_factor,
        renewable_factor=renewable,
        price=price,
        outdoor_temp=outdoor,
        emission_price=emission_price,
        time_labels=labels,
        name=str(doc.get("name", "scenario")),
        notes=tuple(str(n) for n in doc.get("notes", [])),
    )


def serialize_scenario(scenario: Scenario) -> str:
    doc = {
        "name": scenario.name,
        "notes": list(scenario.notes),
        "horizon": scenario.horizon,
        "dt_hours": scenario.dt_hours,
        "time_labels": list(scenario.time_labels),
        "load_factor": scenario.load_factor.tolist(),
        "flexible_load_factor": scenario.flexible_load_factor.tolist(),
        "renewable_factor": {k: v.tolist() for k, v in scenario.renewable_factor.items()},
        "price": {str(k): v.tolist() for k, v in scenario.price.items()},
        "outdoor_temp": scenario.outdoor_temp.tolist(),
        "emission_price": scenario.emission_price,
    }
    return json.dumps(doc, indent=2)


def bundled_case_path(name: str) -> Path:
    return DATA_DIR / BUNDLED_CASES[name]


def bundled_scenario_path(name: str) -> Path:
    return DATA_DIR / BUNDLED_SCENARIOS[name]


def _resolve_path(source: Union[str, Path], bundled: Dict[str, str]) -> Path:
    if isinstance(source, str) and source in bundled:
        return DATA_DIR / bundled[source]
    path = Path(source)
    if not path.exists():
        raise FileNotFoundError(f"No such case or scenario file: {path}")
    return path


def load_case(source: Union[str, Path]) -> NetworkCase:
    """Load a case from a path or a bundled name such as 'case39'"""
    return parse_case(_resolve_path(source, BUNDLED_CASES).read_text(encoding="utf-8"))


def load_scenario(source: Union[str, Path], case: Optional[NetworkCase] = None) -> Scenario:
    """Load a scenario from a path or a bundled name such as 'day'"""
    return parse_scenario(_resolve_path(source, BUNDLED_SCENARIOS).read_text(encoding="utf-8"), case)


# ---------------------------------------------------------------- derived quantities

def nominal_profile(load: LoadSpec, scenario: Scenario) -> np.ndarray:
    """P^{L0}_{l,t}: nominal power scaled by the (flexible) load factor"""
    factor = scenario.flexible_load_factor if load.is_flexible else scenario.load_factor
    return load.nominal_power * np.asarray(factor, dtype=float)


def effective_load_bounds(load: LoadSpec, scenario: Scenario) -> Tuple[np.ndarray, np.ndarray]:
    """Per-time (low, high) power bounds; explicit bounds in the case take precedence"""
    if load.bounds_low is not None:
        low, high = np.array(load.bounds_low, dtype=float), np.array(load.bounds_high, dtype=float)
        if len(low) != scenario.horizon:
            raise CaseFormatError(f"loads.{load.id}.bounds_low", f"expected {scenario.horizon} entries, got {len(low)}")
        return low, high
    demand = nominal_profile(load, scenario)
    if not load.is_flexible:
        return demand.copy(), demand.copy()
    return FLEX_LOW_FACTOR * demand, FLEX_HIGH_FACTOR * demand


def resolve_load(load: LoadSpec, scenario: Scenario) -> LoadSpec:
    """Return a LoadSpec with explicit per-time bounds and, for deferrable loads, an energy budget"""
    low, high = effective_load_bounds(load, scenario)
    resolved = replace(load, bounds_low=tuple(low.tolist()), bounds_high=tuple(high.tolist()))
    if load.kind == "deferrable":
        energy_min = load.energy_min
        if energy_min is None:
            energy_min = float(scenario.dt_hours * np.sum(nominal_profile(load, scenario)))
        energy_max = load.energy_max if load.energy_max is not None else energy_min
        if energy_min > energy_max:
            raise CaseFormatError(f"loads.{load.id}.energy_max", "energy_min exceeds energy_max")
        resolved = replace(resolved, energy_min=energy_min, energy_max=energy_max)
    return resolved


def available_capacity(gen: Generator, scenario: Scenario) -> np.ndarray:
    """Per-time upper output limit: mu_{g,t} * C_g for renewables, p_max otherwise"""
    if gen.is_renewable:
        return np.minimum(scenario.renewable_profile(gen.id) * gen.capacity, gen.p_max)
    return np.full(scenario.horizon, gen.p_max)


def create_network_case(source: Union[str, Path] = "case39") -> NetworkCase:
    """Factory function to load a network case"""
    return load_case(source)


def main():
    """Print a summary of the bundled case and scenario"""
    logging.basicConfig(level=logging.INFO)
    print("⚡ Grid Model - Bundled Case Summary")
    print("=" * 40)
    try:
        case = create_network_case("case39")
        scenario = load_scenario("day", case)
    except (CaseFormatError, FileNotFoundError) as e:
        print(f"❌ {e}")
        return 1
    fuels = {}
    for gen in case.generators:
        fuels[gen.fuel] = fuels.get(gen.fuel, 0) + 1
    print(f"Case: {case.name} (base {case.base_mva} MVA)")
    print(f"Buses: {len(case.buses)}  Branches: {len(case.branches)}")
    print(f"Generators: {len(case.generators)} {fuels}")
    print(f"Loads: {len(case.loads)} ({len(case.flexible_loads)} flexible)")
    print(f"Scenario: {scenario.name}, T={scenario.horizon}, dt={scenario.dt_hours} h")
    return 0


if __name__ == "__main__":
    exit(main())
