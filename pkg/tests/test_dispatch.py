#!/usr/bin/env python3
"""
Test Dispatch

Tests for the dispatch model assembly, the KKT reformulation, the iterative
method and the dispatch metrics.
"""

import os
import sys
import time

import numpy as np
import pytest

# Add the parent directory to the path so we can import our modules
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from dispatch.dispatch_center import (
    METHOD_KKT,
    METHOD_NO_CDR,
    DispatchError,
    create_dispatch_center,
    evaluate_dispatch,
    intensity_crosscheck,
    solve_kkt_reformulation,
    solve_without_cdr,
)
from dispatch.dispatch_model import (
    FIXED_LOADS,
    KKT_EMBEDDED,
    DispatchModelError,
    assemble_cpd,
    create_dispatch_layout,
)
from dispatch.multi_agent_system import create_multi_agent_system, solve_iterative
from grid.grid_model import load_case, load_scenario, nominal_profile, parse_case, parse_scenario
from solvers.derivatives import check_derivatives, random_interior_point
from solvers.nlp_solver import CONVERGED
from tests.sample_cases import (
    case_text,
    flat_scenario,
    single_bus_document,
    single_bus_scenario,
    three_bus_document,
    three_bus_scenario,
    two_bus_document,
)

RUN_SLOW = os.getenv("CARBON_DISPATCH_RUN_SLOW", "").lower() in ("1", "true", "yes")


def single_bus():
    case = parse_case(case_text(single_bus_document()))
    return case, parse_scenario(case_text(single_bus_scenario()), case)


def three_bus():
    case = parse_case(case_text(three_bus_document()))
    return case, parse_scenario(case_text(three_bus_scenario()), case)


class TestAssembly:
    """Test problem dimensions, modes and input validation."""

    def test_two_bus_counts(self):
        """One step, one branch, one unit: 12 variables, 8 equalities, 2 inequalities, 2 pairs."""
        case = parse_case(case_text(two_bus_document()))
        scenario = parse_scenario(case_text(flat_scenario(1)), case)
        problem = assemble_cpd(case, scenario, FIXED_LOADS)
        assert problem.layout.counts == {"variables": 12, "equalities": 8, "inequalities": 2, "pairs": 2}
        assert problem.equality(problem.x0, jacobian=False).shape == (8,)
        assert problem.inequality(problem.x0, jacobian=False).shape == (2,)

    def test_counts_grow_with_horizon(self):
        case = parse_case(case_text(two_bus_document()))
        scenario = parse_scenario(case_text(flat_scenario(3)), case)
        counts = assemble_cpd(case, scenario, FIXED_LOADS).layout.counts
        assert counts["variables"] == 36
        assert counts["equalities"] == 24
        # two line rows per step plus ramp rows between consecutive steps
        assert counts["inequalities"] == 2 * 3 + 2 * 2
        assert counts["pairs"] == 6

    def test_kkt_mode_without_flexible_loads_matches_fixed(self):
        case = parse_case(case_text(two_bus_document()))
        scenario = parse_scenario(case_text(flat_scenario(2)), case)
        fixed = assemble_cpd(case, scenario, FIXED_LOADS)
        embedded = assemble_cpd(case, scenario, KKT_EMBEDDED)
        assert fixed.layout.counts == embedded.layout.counts
        assert np.allclose(fixed.x0, embedded.x0)
        assert np.allclose(fixed.equality(fixed.x0, jacobian=False), embedded.equality(embedded.x0, jacobian=False))
        assert fixed.objective(fixed.x0)[0] == pytest.approx(embedded.objective(embedded.x0)[0])

    def test_kkt_layout_adds_user_blocks(self):
        case, scenario = three_bus()
        fixed = create_dispatch_layout(case, scenario, FIXED_LOADS)
        embedded = create_dispatch_layout(case, scenario, KKT_EMBEDDED)
        extra = sum(2 * rows for rows in embedded.kkt_rows.values()) + len(embedded.flexible_ids) * scenario.horizon
        assert embedded.n_vars == fixed.n_vars + extra
        assert embedded.counts["pairs"] == fixed.counts["pairs"] + sum(embedded.kkt_rows.values())

    def test_reference_angle_fixed(self):
        case, scenario = three_bus()
        problem = assemble_cpd(case, scenario, KKT_EMBEDDED)
        ref = problem.layout.index["va"][case.bus_index[1]]
        assert np.all(problem.lower[ref] == 0.0) and np.all(problem.upper[ref] == 0.0)

    def test_unknown_mode(self):
        case, scenario = single_bus()
        with pytest.raises(DispatchModelError, match="unknown mode"):
            assemble_cpd(case, scenario, "bilevel")

    def test_fixed_mode_requires_profiles(self):
        case, scenario = single_bus()
        with pytest.raises(DispatchModelError, match="load_profiles"):
            assemble_cpd(case, scenario, FIXED_LOADS)

    def test_profile_length_checked(self):
        case, scenario = single_bus()
        with pytest.raises(DispatchModelError, match="horizon"):
            assemble_cpd(case, scenario, FIXED_LOADS, {"SHIFT": [0.4, 0.4, 0.4]})

    def test_warm_start_size_checked(self):
        case, scenario = single_bus()
        with pytest.raises(DispatchModelError, match="warm start"):
            assemble_cpd(case, scenario, KKT_EMBEDDED, warm_start=np.zeros(3))


class TestDerivatives:
    """Analytic Jacobians agree with central differences."""

    def setup_method(self):
        self.rng = np.random.default_rng(5)

    @pytest.mark.parametrize("mode", [FIXED_LOADS, KKT_EMBEDDED])
    def test_three_bus(self, mode):
        case, scenario = three_bus()
        profiles = {load.id: nominal_profile(load, scenario) for load in case.flexible_loads}
        problem = assemble_cpd(case, scenario, mode, profiles)
        for _ in range(3):
            report = check_derivatives(problem, random_interior_point(problem, self.rng))
            assert report.max_error <= 1e-5, f"{report.component}[{report.row}, {report.col}]"


class TestSingleBusEquilibrium:
    """
    One bus with coal and solar: the deferrable user moves energy into the sunny
    step and the operator's cost is unchanged.
    """

    def setup_method(self):
        self.case, self.scenario = single_bus()

    def test_no_cdr_baseline(self):
        solution = solve_without_cdr(self.case, self.scenario)
        assert solution.status == CONVERGED
        assert solution.method == METHOD_NO_CDR
        assert solution.load_profiles["SHIFT"] == pytest.approx([0.4, 0.4])
        assert solution.objective == pytest.approx(18.9, rel=1e-5)

    def test_kkt_reformulation(self):
        solution = solve_kkt_reformulation(self.case, self.scenario)
        assert solution.status == CONVERGED
        assert solution.method == METHOD_KKT
        assert solution.load_profiles["SHIFT"] == pytest.approx([0.2, 0.6], abs=1e-4)
        assert solution.objective == pytest.approx(18.9, rel=1e-4)
        assert solution.variables.intensity[0] == pytest.approx([2.0 * 0.6 / 0.7, 2.0 * 0.3 / 1.1], abs=1e-4)
        assert solution.metadata["intensity_crosscheck"] <= 1e-5

    def test_iterative_agrees_with_kkt(self):
        solution = solve_iterative(self.case, self.scenario)
        assert solution.status == CONVERGED
        assert solution.load_profiles["SHIFT"] == pytest.approx([0.2, 0.6], abs=1e-6)
        assert solution.objective == pytest.approx(18.9, rel=1e-5)
        best = solution.trace.best_objectives
        assert all(b <= a for a, b in zip(best, best[1:]))
        assert len(solution.trace.to_rows()) == solution.iterations

    def test_flatter_emissions(self):
        baseline = evaluate_dispatch(solve_without_cdr(self.case, self.scenario))
        shifted = evaluate_dispatch(solve_kkt_reformulation(self.case, self.scenario))
        assert shifted["emission_flatness"] < baseline["emission_flatness"]
        assert shifted["total_emissions"] == pytest.approx(baseline["total_emissions"], rel=1e-4)

    def test_iteration_limit_returns_best(self):
        solution = solve_iterative(self.case, self.scenario, {"k_max": 1})
        assert solution.status == "iteration_limit"
        assert len(solution.trace) == 1

    def test_radius_given_in_mw(self):
        """5000 MW over 4 ** 1.5 becomes 625 MW, then per unit on the case base."""
        system = create_multi_agent_system(self.case, self.scenario)
        assert system._radius(1) == pytest.approx(5e3 / self.case.base_mva)
        assert system._radius(4) == pytest.approx(625.0 / self.case.base_mva)

    def test_unconverged_subproblem_aborts(self):
        """A dispatch subproblem stopped at its iteration limit ends the run with the trace."""
        with pytest.raises(DispatchError, match="iteration 1") as info:
            solve_iterative(self.case, self.scenario, solver_config={"max_outer": 1, "max_inner": 1})
        assert len(info.value.trace) == 0

    def test_invalid_iterative_params(self):
        with pytest.raises(ValueError, match="k_max"):
            create_multi_agent_system(self.case, self.scenario, {"k_max": 0})


class TestEvaluateDispatch:
    """Test the dispatch metrics."""

    def setup_method(self):
        case, scenario = single_bus()
        self.center = create_dispatch_center(case, scenario)
        self.solution = self.center.solve_without_cdr()
        self.report = evaluate_dispatch(self.solution)

    def test_cost_split(self):
        assert self.report["generation_cost"] == pytest.approx(18.9, rel=1e-5)
        assert self.report["emission_penalty"] == 0.0
        assert self.report["total_cost"] == pytest.approx(self.report["generation_cost"])

    def test_emissions(self):
        """0.9 pu of coal at 2 lbs/kWh on a 100 MVA base over one hour."""
        assert self.report["total_emissions"] == pytest.approx(1.8e5, rel=1e-5)
        assert self.report["emissions_by_fuel"]["coal"] == pytest.approx(1.8e5, rel=1e-5)
        assert self.report["emissions_by_fuel"]["solar"] == 0.0
        assert self.report["emission_flatness"] == pytest.approx(1.4e5, rel=1e-4)

    def test_footprints_and_curtailment(self):
        assert set(self.report["footprints"]) == {"BASE", "SHIFT"}
        assert all(value >= 0.0 for value in self.report["footprints"].values())
        assert np.allclose(self.report["curtailment"]["PV"], 0.0, atol=1e-3)

    def test_residuals_small(self):
        assert self.report["max_residual"] <= 1e-5
        assert self.solution.residuals["bounds"] <= 1e-12

    def test_crosscheck(self):
        check = intensity_crosscheck(self.solution.case, self.solution.variables)
        assert check["max_difference"] <= 1e-5
        assert check["ledger_residual"] <= 1e-6

    def test_center_status(self):
        status = self.center.get_status()
        assert status["solves"] == 1
        assert status["flexible_loads"] == 1


@pytest.mark.integration
class TestMethodsIntegration:
    """Longer runs on the meshed and bundled cases."""

    @pytest.mark.skipif(not RUN_SLOW, reason="CARBON_DISPATCH_RUN_SLOW not set")
    def test_three_bus_methods_agree(self):
        case, scenario = three_bus()
        kkt = solve_kkt_reformulation(case, scenario)
        started = time.perf_counter()
        iterative = solve_iterative(case, scenario, {"k_max": 100})
        elapsed = time.perf_counter() - started
        assert kkt.status == CONVERGED
        assert iterative.status == CONVERGED
        assert len(iterative.trace) <= 100
        assert elapsed < 60.0
        best = iterative.trace.best_objectives
        assert all(b <= a for a, b in zip(best, best[1:]))
        assert iterative.objective == pytest.approx(kkt.objective, rel=1e-3)
        for load_id, profile in kkt.load_profiles.items():
            assert iterative.load_profiles[load_id] == pytest.approx(profile, abs=1e-2)

    @pytest.mark.skipif(not RUN_SLOW, reason="CARBON_DISPATCH_RUN_SLOW not set")
    def test_bundled_case_direction(self):
        """Carbon-aware demand response lowers emissions at no extra cost."""
        case = load_case("case39")
        scenario = load_scenario("day", case)
        baseline = evaluate_dispatch(solve_without_cdr(case, scenario))
        shifted = evaluate_dispatch(solve_kkt_reformulation(case, scenario))
        assert baseline["status"] == CONVERGED
        assert shifted["total_emissions"] < baseline["total_emissions"]
        assert shifted["total_cost"] <= baseline["total_cost"] * (1.0 + 1e-4)
        assert shifted["emission_flatness"] < baseline["emission_flatness"]
        assert 1e6 < baseline["total_emissions"] < 1e9


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
