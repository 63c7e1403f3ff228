"""
Reports - Figure-ready CSV tables, solution documents and run comparisons
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np
import pandas as pd

from grid.carbon_flow import CarbonFlowError, bus_loads_from_state, ledger_frame
from grid.grid_model import available_capacity
from grid.power_flow import state_from_voltages
from dispatch.dispatch_center import DispatchSolution, evaluate_dispatch, intensity_crosscheck, load_series

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"
RUN_FILES = ("solution.json", "generation.csv", "loads.csv", "intensity.csv", "emissions.csv",
             "footprints.csv", "ledger.csv", "summary.txt")


class ReportError(RuntimeError):
    """Raised when run outputs are missing or cannot be compared"""


def _labels(solution: DispatchSolution) -> List[float]:
    return list(solution.scenario.time_labels) or list(range(solution.scenario.horizon))


def generation_frame(solution: DispatchSolution) -> pd.DataFrame:
    case, scenario = solution.case, solution.scenario
    base = case.base_mva
    rows = []
    for g, gen in enumerate(case.generators):
        available = available_capacity(gen, scenario)
        for t, label in enumerate(_labels(solution)):
            p = solution.variables.gen_p[g, t]
            rows.append({
                "generator": gen.id, "fuel": gen.fuel, "time": label,
                "p_mw": p * base, "q_mvar": solution.variables.gen_q[g, t] * base,
                "available_mw": available[t] * base,
                "curtailment_mw": max(available[t] - p, 0.0) * base if gen.is_renewable else 0.0,
            })
    return pd.DataFrame(rows)


def loads_frame(solution: DispatchSolution) -> pd.DataFrame:
    case, scenario = solution.case, solution.scenario
    series = load_series(case, scenario, solution.load_profiles)
    rows = []
    for load in case.loads:
        for t, label in enumerate(_labels(solution)):
            p_mw = series[load.id][t] * case.base_mva
            rows.append({"load": load.id, "bus": load.bus, "kind": load.kind, "time": label,
                         "p_mw": p_mw, "energy_mwh": p_mw * scenario.dt_hours})
    return pd.DataFrame(rows)


def intensity_frame(solution: DispatchSolution) -> pd.DataFrame:
    rows = []
    for i, bus in enumerate(solution.case.buses):
        for t, label in enumerate(_labels(solution)):
            rows.append({"bus": bus.id, "time": label, "intensity_lbs_per_kwh": solution.variables.intensity[i, t]})
    return pd.DataFrame(rows)


def emissions_frame(solution: DispatchSolution) -> pd.DataFrame:
    case, scenario = solution.case, solution.scenario
    scale = scenario.dt_hours * case.emission_scale
    rows = []
    for t, label in enumerate(_labels(solution)):
        row: Dict[str, Any] = {"time": label, "emissions_lbs": solution.system_emissions[t]}
        for fuel in sorted({gen.fuel for gen in case.generators}):
            row[f"{fuel}_lbs"] = sum(scale * gen.emission_factor * solution.variables.gen_p[g, t]
                                     for g, gen in enumerate(case.generators) if gen.fuel == fuel)
        rows.append(row)
    return pd.DataFrame(rows)


def footprints_frame(solution: DispatchSolution) -> pd.DataFrame:
    case, scenario = solution.case, solution.scenario
    series = load_series(case, scenario, solution.load_profiles)
    scale = scenario.dt_hours * case.emission_scale
    rows = []
    for load in case.loads:
        w = solution.variables.intensity[case.bus_index[load.bus]]
        for t, label in enumerate(_labels(solution)):
            rows.append({"load": load.id, "kind": load.kind, "time": label,
                         "footprint_lbs": scale * w[t] * series[load.id][t]})
    return pd.DataFrame(rows)


def solution_ledger(solution: DispatchSolution) -> pd.DataFrame:
    """Emission ledger recomputed from the solution's voltages and generation"""
    check = intensity_crosscheck(solution.case, solution.variables)
    bus_loads = []
    for t in range(solution.scenario.horizon):
        state = state_from_voltages(solution.case, solution.variables.voltage[:, t], solution.variables.angle[:, t])
        bus_loads.append(bus_loads_from_state(solution.case, state, solution.variables.gen_p[:, t]))
    return ledger_frame(solution.case, check["carbon_states"], bus_loads, solution.scenario.dt_hours, _labels(solution))


def solution_document(solution: DispatchSolution) -> Dict[str, Any]:
    report = evaluate_dispatch(solution)
    v = solution.variables
    return {
        "case": solution.case.name,
        "scenario": solution.scenario.name,
        "method": solution.method,
        "status": solution.status,
        "message": solution.message,
        "objective": solution.objective,
        "total_cost": report["total_cost"],
        "generation_cost": report["generation_cost"],
        "emission_penalty": report["emission_penalty"],
        "total_emissions_lbs": report["total_emissions"],
        "emissions_by_fuel_lbs": report["emissions_by_fuel"],
        "iterations": solution.iterations,
        "wall_time_s": solution.wall_time,
        "dt_hours": solution.scenario.dt_hours,
        "time_labels": _labels(solution),
        "residuals": solution.residuals,
        "variables": {
            "gen_p": v.gen_p.tolist(), "gen_q": v.gen_q.tolist(), "voltage": v.voltage.tolist(),
            "angle": v.angle.tolist(), "intensity": v.intensity.tolist(),
            "loads": {k: np.asarray(s).tolist() for k, s in solution.load_profiles.items()},
        },
        "metadata": {k: val for k, val in solution.metadata.items() if isinstance(val, (int, float, str, dict))},
    }


def summary_text(solution: DispatchSolution) -> str:
    report = evaluate_dispatch(solution)
    lines = [
        f"Case: {solution.case.name}   Scenario: {solution.scenario.name}   Method: {solution.method}",
        f"Status: {solution.status}   Iterations: {solution.iterations}   Wall time: {solution.wall_time:.1f} s",
        "",
        f"Total cost:        {report['total_cost']:.6e} $",
        f"  generation:      {report['generation_cost']:.6e} $",
        f"  emission penalty:{report['emission_penalty']:.6e} $",
        f"Total emissions:   {report['total_emissions'] / 1e6:.4f} Mlbs",
    ]
    for fuel, lbs in sorted(report["emissions_by_fuel"].items()):
        lines.append(f"  {fuel:<16} {lbs / 1e6:.4f} Mlbs")
    lines.append(f"Emission flatness (max-min per step): {report['emission_flatness'] / 1e6:.4f} Mlbs")
    lines.append(f"Max constraint residual: {report['max_residual']:.3e}")
    return "\n".join(lines) + "\n"


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_run_outputs(solution: DispatchSolution, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write every run artifact into `out_dir`; returns name -> path"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {
        "generation.csv": _write_csv(generation_frame(solution), out / "generation.csv"),
        "loads.csv": _write_csv(loads_frame(solution), out / "loads.csv"),
        "intensity.csv": _write_csv(intensity_frame(solution), out / "intensity.csv"),
        "emissions.csv": _write_csv(emissions_frame(solution), out / "emissions.csv"),
        "footprints.csv": _write_csv(footprints_frame(solution), out / "footprints.csv"),
    }
    try:
        written["ledger.csv"] = _write_csv(solution_ledger(solution), out / "ledger.csv")
    except CarbonFlowError as e:
        logger.warning(f"⚠️ Ledger not written: {e}")
    if solution.trace is not None:
        written["trace.csv"] = _write_csv(pd.DataFrame(solution.trace.to_rows()), out / "trace.csv")
    doc_path = out / "solution.json"
    doc_path.write_text(json.dumps(solution_document(solution), indent=2, default=float), encoding="utf-8")
    written["solution.json"] = doc_path
    summary_path = out / "summary.txt"
    summary_path.write_text(summary_text(solution), encoding="utf-8")
    written["summary.txt"] = summary_path
    return written


def _read_run(run_dir: Union[str, Path]) -> Dict[str, pd.DataFrame]:
    run = Path(run_dir)
    frames = {}
    for name in ("generation.csv", "loads.csv", "emissions.csv", "footprints.csv"):
        path = run / name
        if not path.exists():
            raise ReportError(f"missing {path}")
        frames[name] = pd.read_csv(path)
    return frames


def _side_by_side(a: pd.DataFrame, b: pd.DataFrame, keys: List[str], value: str) -> pd.DataFrame:
    merged = a.merge(b, on=keys, how="outer", suffixes=("_a", "_b")).fillna(0.0)
    merged["delta"] = merged[f"{value}_b"] - merged[f"{value}_a"]
    return merged.sort_values(keys, kind="stable").reset_index(drop=True)


def compare_runs(run_a: Union[str, Path], run_b: Union[str, Path], out_dir: Union[str, Path]) -> Dict[str, Any]:
    """
    Side-by-side tables of two runs: generation by fuel, total flexible load, system
    emissions (with flatness), per-load footprints and deferrable energy. Deltas are b - a.
    """
    a, b = _read_run(run_a), _read_run(run_b)
    times_a = sorted(a["emissions.csv"]["time"].tolist())
    times_b = sorted(b["emissions.csv"]["time"].tolist())
    if times_a != times_b:
        raise ReportError(f"incompatible horizons: {len(times_a)} vs {len(times_b)} steps")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def by_fuel(frames):
        return frames["generation.csv"].groupby(["time", "fuel"], as_index=False)["p_mw"].sum()

    def flexible(frames):
        loads = frames["loads.csv"]
        flex = loads[loads["kind"] != "fixed"]
        return flex.groupby("time", as_index=False)["p_mw"].sum() if not flex.empty else \
            pd.DataFrame({"time": times_a, "p_mw": 0.0})

    def footprints(frames):
        return frames["footprints.csv"].groupby("load", as_index=False)["footprint_lbs"].sum()

    def deferrable(frames):
        loads = frames["loads.csv"]
        return loads[loads["kind"] == "deferrable"].groupby("load", as_index=False)["energy_mwh"].sum()

    emissions_a = a["emissions.csv"][["time", "emissions_lbs"]]
    emissions_b = b["emissions.csv"][["time", "emissions_lbs"]]
    tables = {
        "generation_by_fuel.csv": _side_by_side(by_fuel(a), by_fuel(b), ["time", "fuel"], "p_mw"),
        "flexible_load.csv": _side_by_side(flexible(a), flexible(b), ["time"], "p_mw"),
        "system_emissions.csv": _side_by_side(emissions_a, emissions_b, ["time"], "emissions_lbs"),
        "footprints.csv": _side_by_side(footprints(a), footprints(b), ["load"], "footprint_lbs"),
        "deferrable_energy.csv": _side_by_side(deferrable(a), deferrable(b), ["load"], "energy_mwh"),
    }
    for name, frame in tables.items():
        _write_csv(frame, out / name)

    flatness = {"a": float(np.ptp(emissions_a["emissions_lbs"])), "b": float(np.ptp(emissions_b["emissions_lbs"]))}
    result = {
        "tables": {name: out / name for name in tables},
        "flatness": flatness,
        "total_emissions": {"a": float(emissions_a["emissions_lbs"].sum()), "b": float(emissions_b["emissions_lbs"].sum())},
        "max_deferrable_energy_delta": float(tables["deferrable_energy.csv"]["delta"].abs().max()) if len(tables["deferrable_energy.csv"]) else 0.0,
    }
    lines = [
        f"Run A: {run_a}",
        f"Run B: {run_b}",
        f"Total emissions A: {result['total_emissions']['a'] / 1e6:.4f} Mlbs, B: {result['total_emissions']['b'] / 1e6:.4f} Mlbs",
        f"Emission flatness A: {flatness['a'] / 1e6:.4f} Mlbs, B: {flatness['b'] / 1e6:.4f} Mlbs",
        f"Max deferrable energy delta: {result['max_deferrable_energy_delta']:.3e} MWh",
    ]
    (out / "comparison.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return result
