#!/usr/bin/env python3
"""
Test Power Flow

Unit tests for the branch-flow equations, their partials and the
Newton-Raphson solver.
"""

import json
import os
import sys

import numpy as np
import pytest

# Add the parent directory to the path so we can import our modules
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from grid.grid_model import load_case, load_scenario, parse_case
from grid.power_flow import (
    PowerFlowError,
    PowerFlowNotConverged,
    branch_flow,
    branch_flow_jacobian,
    branch_losses,
    default_slack_bus,
    dump_iterations,
    nodal_injections,
    proportional_injections,
    solve_power_flow,
    state_from_voltages,
)
from tests.sample_cases import case_text, three_bus_document, two_bus_document


class TestBranchFlow:
    """Test the polar branch-flow equations."""

    def test_flat_terminals(self):
        p, q = branch_flow(1.0, 1.0, 0.0, 0.0, 3.0, -7.0)
        assert p == 0.0 and q == 0.0

    def test_lossless_line(self):
        """g = 0, b = -10, angle difference 0.1."""
        p, q = branch_flow(1.0, 1.0, 0.1, 0.0, 0.0, -10.0)
        assert p == pytest.approx(10.0 * np.sin(0.1))
        assert p == pytest.approx(0.99833, abs=1e-5)
        assert q == pytest.approx(0.049958, abs=1e-6)

    def test_resistive_line(self):
        p, q = branch_flow(1.0, 1.0, 0.1, 0.0, 1.0, 0.0)
        assert p == pytest.approx(1.0 - np.cos(0.1))
        assert q == pytest.approx(-np.sin(0.1))

    def test_partials_match_finite_differences(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            vi, vj = rng.uniform(0.9, 1.1, 2)
            thi, thj = rng.uniform(-0.5, 0.5, 2)
            g, b = rng.uniform(0.0, 5.0), rng.uniform(-20.0, -1.0)
            partials = branch_flow_jacobian(vi, vj, thi, thj, g, b)
            h = 1e-6
            args = [vi, vj, thi, thj]
            names = [("dp_dvi", "dq_dvi"), ("dp_dvj", "dq_dvj"), ("dp_dthi", "dq_dthi"), ("dp_dthj", "dq_dthj")]
            for k, (dp_name, dq_name) in enumerate(names):
                up, down = list(args), list(args)
                up[k] += h
                down[k] -= h
                p_up, q_up = branch_flow(*up, g, b)
                p_down, q_down = branch_flow(*down, g, b)
                assert getattr(partials, dp_name) == pytest.approx((p_up - p_down) / (2 * h), abs=1e-6)
                assert getattr(partials, dq_name) == pytest.approx((q_up - q_down) / (2 * h), abs=1e-6)


class TestNewtonPowerFlow:
    """Test the Newton-Raphson solver."""

    def setup_method(self):
        self.case = parse_case(case_text(two_bus_document()))

    def test_zero_injections_flat_state(self):
        state = solve_power_flow(self.case, (np.zeros(2), np.zeros(2)))
        assert np.allclose(state.voltage, 1.0)
        assert np.allclose(state.angle, 0.0)
        assert state.mismatch == 0.0
        assert np.allclose(branch_losses(state), 0.0)

    def test_two_bus_load(self):
        """Load 0.5 + j0.1 at bus 2; the solved voltages reproduce the injections."""
        p_spec = np.array([0.0, -0.5])
        q_spec = np.array([0.0, -0.1])
        state = solve_power_flow(self.case, (p_spec, q_spec), slack=1)
        assert state.mismatch < 1e-8
        p, q = nodal_injections(self.case, state)
        assert p[1] == pytest.approx(-0.5, abs=1e-8)
        assert q[1] == pytest.approx(-0.1, abs=1e-8)
        assert state.angle[0] == 0.0

    def test_losses_match_current_formula(self):
        """Loss on a branch equals g |V_i - V_j|^2."""
        state = solve_power_flow(self.case, (np.array([0.0, -0.5]), np.array([0.0, -0.1])), slack=1)
        vi = state.voltage[0] * np.exp(1j * state.angle[0])
        vj = state.voltage[1] * np.exp(1j * state.angle[1])
        assert branch_losses(state)[0] == pytest.approx(1.0 * abs(vi - vj) ** 2, abs=1e-10)

    def test_lossless_branch_has_no_loss(self):
        doc = two_bus_document()
        doc["branches"][0]["conductance"] = 0.0
        case = parse_case(case_text(doc))
        state = state_from_voltages(case, np.array([1.02, 0.97]), np.array([0.0, -0.2]))
        assert abs(branch_losses(state)[0]) < 1e-12

    def test_voltage_setpoint(self):
        """A PV bus holds its voltage magnitude."""
        case = parse_case(case_text(three_bus_document()))
        p = np.array([0.0, 0.3, -0.6])
        q = np.array([0.0, 0.0, -0.1])
        state = solve_power_flow(case, (p, q), slack=1, voltage_setpoints={2: 1.03})
        assert state.voltage[1] == pytest.approx(1.03)
        injected, _ = nodal_injections(case, state)
        assert injected[1] == pytest.approx(0.3, abs=1e-8)

    def test_unknown_slack(self):
        with pytest.raises(PowerFlowError, match="slack"):
            solve_power_flow(self.case, (np.zeros(2), np.zeros(2)), slack=9)

    def test_non_convergence_reports_diagnostics(self):
        """An impossible transfer stops at the iteration limit with diagnostics."""
        p_spec = np.array([0.0, -50.0])
        with pytest.raises(PowerFlowError) as info:
            solve_power_flow(self.case, (p_spec, np.zeros(2)), slack=1, options={"max_iterations": 5})
        if isinstance(info.value, PowerFlowNotConverged):
            assert info.value.iterations == 5
            assert info.value.mismatch > 1e-8

    def test_default_slack_is_largest_unit(self):
        case = load_case("case39")
        largest = max(case.generators, key=lambda gen: gen.capacity)
        assert default_slack_bus(case) == largest.bus

    def test_dump_iterations(self, tmp_path):
        state = solve_power_flow(self.case, (np.array([0.0, -0.5]), np.array([0.0, -0.1])), slack=1)
        path = dump_iterations(state, tmp_path / "newton.jsonl")
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == state.iterations + 1
        assert json.loads(lines[-1])["mismatch"] == pytest.approx(state.mismatch)


class TestBundledPowerFlow:
    """Test the bundled case under proportional dispatch."""

    def test_converges_from_flat_start(self):
        case = load_case("case39")
        scenario = load_scenario("day", case)
        setpoints = {gen.bus: 1.0 for gen in case.generators}
        for t in (0, 5, 8):
            inj = proportional_injections(case, scenario, t)
            state = solve_power_flow(case, (inj.p, inj.q), voltage_setpoints=setpoints)
            assert state.mismatch < 1e-8
            assert state.iterations <= 15


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
