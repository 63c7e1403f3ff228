#!/usr/bin/env python3
"""
Test Command Line

Tests for the run, compare and check-derivatives subcommands, their exit
codes and the report files they write.
"""

import json
import os
import sys

import pandas as pd
import pytest

# Add the parent directory to the path so we can import our modules
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from cli.experiment_runner import (
    EXIT_CONVERGED,
    EXIT_INPUT_ERROR,
    RunConfig,
    apply_environment,
    create_experiment_runner,
)
from cli.reports import ReportError, compare_runs
from cli.run_cli import build_parser, config_from_args, main
from tests.sample_cases import single_bus_document, single_bus_scenario, write_inputs

ENV_KEYS = ("CARBON_DISPATCH_KMAX", "CARBON_DISPATCH_EPS", "CARBON_DISPATCH_TOL_FEAS",
            "CARBON_DISPATCH_TOL_STAT", "CARBON_DISPATCH_WORKERS")


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for key in ENV_KEYS:
        monkeypatch.delenv(key, raising=False)


def write_run_dir(directory, times):
    """Minimal run directory with the tables compare reads"""
    directory.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"generator": "G1", "fuel": "coal", "time": times, "p_mw": 10.0}).to_csv(
        directory / "generation.csv", index=False)
    pd.DataFrame({"load": "EV", "bus": 1, "kind": "deferrable", "time": times, "p_mw": 5.0,
                  "energy_mwh": 5.0}).to_csv(directory / "loads.csv", index=False)
    pd.DataFrame({"time": times, "emissions_lbs": [1000.0 * (i + 1) for i in range(len(times))]}).to_csv(
        directory / "emissions.csv", index=False)
    pd.DataFrame({"load": "EV", "kind": "deferrable", "time": times, "footprint_lbs": 50.0}).to_csv(
        directory / "footprints.csv", index=False)
    return directory


class TestRunCommand:
    """Test `run` on the single-bus case."""

    def setup_method(self):
        self.runner = create_experiment_runner()

    def _run(self, tmp_path, out_name="run", method="no-cdr"):
        case_path, scenario_path = write_inputs(tmp_path / "inputs", single_bus_document(), single_bus_scenario())
        out = tmp_path / out_name
        code = main(["run", "--case", str(case_path), "--scenario", str(scenario_path),
                     "--method", method, "--out", str(out)])
        return code, out

    def test_run_writes_reports(self, tmp_path):
        code, out = self._run(tmp_path)
        assert code == EXIT_CONVERGED
        for name in ("solution.json", "generation.csv", "loads.csv", "intensity.csv", "emissions.csv",
                     "footprints.csv", "ledger.csv", "summary.txt"):
            assert (out / name).exists(), name
        assert not (out / "NOT_CONVERGED").exists()
        loads = pd.read_csv(out / "loads.csv")
        assert len(loads) == 2 * 2
        document = json.loads((out / "solution.json").read_text(encoding="utf-8"))
        assert document["status"] == "converged"
        assert document["method"] == "no-cdr"
        assert document["total_cost"] == pytest.approx(18.9, rel=1e-5)

    def test_runs_are_reproducible(self, tmp_path):
        _, first = self._run(tmp_path, "first")
        _, second = self._run(tmp_path, "second")
        for name in ("generation.csv", "loads.csv", "emissions.csv", "footprints.csv"):
            assert (first / name).read_bytes() == (second / name).read_bytes(), name

    def test_iterative_writes_trace(self, tmp_path):
        code, out = self._run(tmp_path, method="iterative")
        assert code == EXIT_CONVERGED
        trace = pd.read_csv(out / "trace.csv")
        assert {"k", "objective", "best_objective", "radius"} <= set(trace.columns)

    def test_missing_case_is_input_error(self, tmp_path):
        code = main(["run", "--case", str(tmp_path / "nope.json"), "--out", str(tmp_path / "out")])
        assert code == EXIT_INPUT_ERROR

    def test_malformed_case_is_input_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{", encoding="utf-8")
        result = self.runner.run(RunConfig(case=str(bad), out=str(tmp_path / "out")))
        assert result["exit_code"] == EXIT_INPUT_ERROR
        assert not result["success"]

    def test_unknown_argument_is_input_error(self):
        assert main(["run", "--bogus"]) == EXIT_INPUT_ERROR

    def test_carbon_cost_override(self, tmp_path):
        case_path, scenario_path = write_inputs(tmp_path, single_bus_document(), single_bus_scenario())
        config = RunConfig(case=str(case_path), scenario=str(scenario_path), carbon_cost=0.0, emission_price=0.5)
        case, scenario = self.runner.load_inputs(config)
        assert case.load("SHIFT").carbon_cost == 0.0
        assert case.load("BASE").carbon_cost == 1.0
        assert scenario.emission_price == 0.5


class TestCompareCommand:
    """Test `compare` on run directories."""

    def test_identical_runs_have_zero_deltas(self, tmp_path):
        a = write_run_dir(tmp_path / "a", [2.0, 4.0])
        b = write_run_dir(tmp_path / "b", [2.0, 4.0])
        result = compare_runs(a, b, tmp_path / "cmp")
        for path in result["tables"].values():
            frame = pd.read_csv(path)
            assert (frame["delta"] == 0.0).all()
        assert result["flatness"] == {"a": 1000.0, "b": 1000.0}
        assert result["max_deferrable_energy_delta"] == 0.0
        assert (tmp_path / "cmp" / "comparison.txt").exists()

    def test_incompatible_horizons(self, tmp_path):
        a = write_run_dir(tmp_path / "a", [2.0, 4.0])
        b = write_run_dir(tmp_path / "b", [2.0, 4.0, 6.0])
        with pytest.raises(ReportError, match="incompatible horizons"):
            compare_runs(a, b, tmp_path / "cmp")
        assert main(["compare", str(a), str(b), "--out", str(tmp_path / "cmp")]) == EXIT_INPUT_ERROR

    def test_missing_run_directory(self, tmp_path):
        a = write_run_dir(tmp_path / "a", [2.0])
        assert main(["compare", str(a), str(tmp_path / "absent")]) == EXIT_INPUT_ERROR

    def test_default_output_directory(self, tmp_path):
        a = write_run_dir(tmp_path / "a", [2.0])
        b = write_run_dir(tmp_path / "b", [2.0])
        assert main(["compare", str(a), str(b)]) == EXIT_CONVERGED
        assert (b / "compare" / "system_emissions.csv").exists()


class TestCheckDerivativesCommand:
    """Test `check-derivatives` on the single-bus case."""

    @pytest.mark.parametrize("mode", ["kkt_embedded", "fixed_loads"])
    def test_passes(self, tmp_path, mode):
        case_path, scenario_path = write_inputs(tmp_path, single_bus_document(), single_bus_scenario())
        code = main(["check-derivatives", "--case", str(case_path), "--scenario", str(scenario_path),
                     "--points", "2", "--mode", mode])
        assert code == EXIT_CONVERGED


class TestRunConfig:
    """Test configuration validation and environment overrides."""

    def test_defaults_valid(self):
        RunConfig().validate()

    @pytest.mark.parametrize("changes", [
        {"method": "bilevel"},
        {"carbon_cost": -1.0},
        {"eps": 0.0},
        {"k_max": 0},
        {"max_workers": 0},
    ])
    def test_invalid(self, changes):
        with pytest.raises(ValueError):
            RunConfig(**changes).validate()

    def test_solver_options(self):
        options = RunConfig(tol_feas=1e-5, tol_stat=1e-4, log_iterates="iterates.log").solver_options()
        assert options == {"tol_feas": 1e-5, "tol_comp": 1e-5, "tol_stat": 1e-4, "log_path": "iterates.log"}

    def test_iterative_params(self):
        params = RunConfig(k_max=7, proximity_radius=10.0).iterative_params()
        assert params["k_max"] == 7
        assert params["proximity_radius"] == 10.0
        assert params["shrink_exponent"] == 1.5

    def test_environment_fills_unset_values(self, monkeypatch):
        monkeypatch.setenv("CARBON_DISPATCH_KMAX", "12")
        monkeypatch.setenv("CARBON_DISPATCH_EPS", "1e-3")
        monkeypatch.setenv("CARBON_DISPATCH_WORKERS", "two")
        config = apply_environment(RunConfig(eps=1e-5))
        assert config.k_max == 12
        assert config.eps == 1e-5
        assert config.max_workers is None

    def test_parser_maps_flags(self):
        args = build_parser().parse_args(["run", "--method", "iterative", "--Ml", "100", "--kmax", "5",
                                          "--ce", "2", "--cE", "0.01", "--out", "here"])
        config = config_from_args(args)
        assert config.method == "iterative"
        assert config.proximity_radius == 100.0
        assert config.k_max == 5
        assert config.carbon_cost == 2.0
        assert config.emission_price == 0.01
        assert config.out == "here"


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
