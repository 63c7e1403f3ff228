#!/usr/bin/env python3
"""
Test Carbon Flow

Unit tests for directed flow splits, nodal carbon intensities, user
footprints and the emission ledger.
"""

import os
import sys

import numpy as np
import pytest

# Add the parent directory to the path so we can import our modules
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from grid.carbon_flow import (
    CarbonBalanceError,
    CarbonState,
    bus_loads_from_state,
    decompose_flows,
    emission_ledger,
    ledger_frame,
    solve_nodal_intensities,
    user_footprint,
)
from grid.grid_model import load_case, load_scenario, parse_case
from grid.power_flow import (
    nodal_injections,
    proportional_injections,
    settle_slack,
    solve_power_flow,
    state_from_voltages,
)
from tests.sample_cases import case_text, single_bus_document, two_bus_document


def chain_document(second_generator: bool = False, conductance: float = 0.0):
    """Three buses in a chain 1 - 2 - 3; coal at bus 1, optional zero-carbon unit at bus 2"""
    generators = [
        {"id": "G1", "bus": 1, "fuel": "coal", "emission_factor": 2.0,
         "p_min": 0.0, "p_max": 5.0, "q_min": -5.0, "q_max": 5.0},
    ]
    if second_generator:
        generators.append({"id": "G2", "bus": 2, "fuel": "wind", "emission_factor": 0.0,
                           "p_min": 0.0, "p_max": 5.0, "q_min": -5.0, "q_max": 5.0})
    return {
        "name": "chain",
        "base_mva": 100.0,
        "units": {"power": "pu", "reactive": "pu", "apparent": "pu"},
        "buses": [{"id": 1}, {"id": 2}, {"id": 3}],
        "branches": [
            {"from": 1, "to": 2, "conductance": conductance, "susceptance": -10.0, "rating": 5.0},
            {"from": 2, "to": 3, "conductance": conductance, "susceptance": -10.0, "rating": 5.0},
        ],
        "generators": generators,
        "loads": [{"id": "D3", "bus": 3, "kind": "fixed", "nominal_power": 1.0}],
    }


class TestDecomposeFlows:
    """Test the nonnegative split of branch flows."""

    def test_sign_split(self):
        doc = two_bus_document()
        case = parse_case(case_text(doc))
        for angle, expected_fwd, expected_rev in ((-0.07, True, False), (0.02, False, True), (0.0, False, False)):
            state = state_from_voltages(case, np.array([1.0, 1.0]), np.array([0.0, angle]))
            split = decompose_flows(state)
            assert split.p_hat_fwd[0] >= 0 and split.p_hat_rev[0] >= 0
            assert split.p_hat_fwd[0] * split.p_hat_rev[0] == 0.0
            assert split.p_hat_fwd[0] - split.p_hat_rev[0] == pytest.approx(state.branch_p_from[0])
            assert (split.p_hat_fwd[0] > 0) == expected_fwd
            assert (split.p_hat_rev[0] > 0) == expected_rev


class TestNodalIntensities:
    """Test proportional-sharing intensities."""

    def _solve(self, doc, injections):
        case = parse_case(case_text(doc))
        p = np.asarray(injections, dtype=float)
        state = solve_power_flow(case, (p, np.zeros(len(p))), slack=1)
        injected, _ = nodal_injections(case, state)
        gen_p = np.array([injected[case.bus_index[gen.bus]] for gen in case.generators])
        return case, state, gen_p

    def test_single_bus(self):
        doc = single_bus_document()
        doc["generators"] = doc["generators"][:1]
        doc["generators"][0]["emission_factor"] = 2.26
        case = parse_case(case_text(doc))
        state = state_from_voltages(case, np.ones(1), np.zeros(1))
        carbon = solve_nodal_intensities(case, state, np.array([0.9]))
        assert carbon.nodal_intensity[0] == pytest.approx(2.26)

    def test_chain_single_source(self):
        """Every bus downstream of one source carries its intensity."""
        case, state, gen_p = self._solve(chain_document(), [0.0, 0.0, -1.0])
        carbon = solve_nodal_intensities(case, state, gen_p)
        assert np.allclose(carbon.nodal_intensity, 2.0, atol=1e-10)

    def test_chain_mixing(self):
        """A zero-carbon unit at bus 2 injecting as much as arrives from bus 1 halves the intensity."""
        case, state, gen_p = self._solve(chain_document(second_generator=True), [0.0, 0.5, -1.0])
        carbon = solve_nodal_intensities(case, state, gen_p)
        assert gen_p[0] == pytest.approx(0.5, abs=1e-8)
        assert carbon.nodal_intensity[0] == pytest.approx(2.0)
        assert carbon.nodal_intensity[1] == pytest.approx(1.0, abs=1e-8)
        assert carbon.nodal_intensity[2] == pytest.approx(1.0, abs=1e-8)

    def test_inflow_sets(self):
        case, state, gen_p = self._solve(chain_document(second_generator=True), [0.0, 0.5, -1.0])
        carbon = solve_nodal_intensities(case, state, gen_p)
        sources = {item.source for item in carbon.inflow_sets[1]}
        assert sources == {"gen:G2", "bus:1"}

    def test_intensity_bounded_by_dirtiest_unit(self):
        case, state, gen_p = self._solve(chain_document(second_generator=True, conductance=1.0), [0.0, 0.3, -1.0])
        carbon = solve_nodal_intensities(case, state, gen_p)
        assert np.all(carbon.nodal_intensity >= 0.0)
        assert np.all(carbon.nodal_intensity <= 2.0 + 1e-12)

    def test_zero_inflow_bus(self):
        """A bus with no generation and no arriving power gets intensity 0."""
        case = parse_case(case_text(chain_document()))
        voltage = np.array([1.0, 0.98, 0.98])
        angle = np.array([0.0, -0.05, -0.05])
        state = state_from_voltages(case, voltage, angle)
        injected, _ = nodal_injections(case, state)
        carbon = solve_nodal_intensities(case, state, np.array([injected[0]]))
        assert carbon.zero_inflow_buses == (3,)
        assert carbon.nodal_intensity[2] == 0.0
        assert carbon.nodal_intensity[1] == pytest.approx(2.0)


class TestFootprintAndLedger:
    """Test user footprints and the emission ledger."""

    def test_constant_footprint(self):
        assert user_footprint([1.0, 1.0], [2.0, 2.0], 2.0) == pytest.approx(8.0)

    def test_zero_load_footprint(self):
        assert user_footprint([2.0, 3.0], [0.0, 0.0], 1.0) == 0.0

    def test_mixed_footprint(self):
        assert user_footprint([2.26, 0.97, 0.0], [1.0, 1.0, 1.0], 1.0) == pytest.approx(3.23)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            user_footprint([1.0, 2.0], [1.0], 1.0)

    def test_lossless_ledger(self):
        doc = chain_document()
        case = parse_case(case_text(doc))
        state = solve_power_flow(case, (np.array([0.0, 0.0, -1.0]), np.zeros(3)), slack=1)
        injected, _ = nodal_injections(case, state)
        carbon = solve_nodal_intensities(case, state, np.array([injected[0]]))
        assert abs(carbon.ledger.losses) < 1e-10
        assert carbon.ledger.generation == pytest.approx(carbon.ledger.loads)

    def test_lossy_ledger_balances(self):
        case = parse_case(case_text(two_bus_document()))
        state = solve_power_flow(case, (np.array([0.0, -0.5]), np.array([0.0, -0.1])), slack=1)
        injected, _ = nodal_injections(case, state)
        carbon = solve_nodal_intensities(case, state, np.array([injected[0]]))
        assert carbon.ledger.losses > 0
        assert abs(carbon.ledger.residual) < 1e-8

    def test_ledger_detects_imbalance(self):
        """Intensities that do not solve the balance make the ledger raise."""
        case = parse_case(case_text(two_bus_document()))
        state = solve_power_flow(case, (np.array([0.0, -0.5]), np.array([0.0, -0.1])), slack=1)
        injected, _ = nodal_injections(case, state)
        wrong = CarbonState(nodal_intensity=np.array([2.0, 0.5]), inflow_sets=((), ()))
        with pytest.raises(CarbonBalanceError):
            emission_ledger(case, state, np.array([injected[0]]), wrong)

    def test_bundled_case_balances(self):
        case = load_case("case39")
        scenario = load_scenario("day", case)
        setpoints = {gen.bus: 1.0 for gen in case.generators}
        states, loads = [], []
        for t in range(scenario.horizon):
            inj = proportional_injections(case, scenario, t)
            state = solve_power_flow(case, (inj.p, inj.q), voltage_setpoints=setpoints)
            gen_p = settle_slack(case, state, inj.gen_p, inj.bus_load)
            carbon = solve_nodal_intensities(case, state, gen_p)
            assert abs(carbon.ledger.residual) <= 1e-8 * max(1.0, carbon.ledger.generation)
            states.append(carbon)
            loads.append(bus_loads_from_state(case, state, gen_p))
        frame = ledger_frame(case, states, loads, scenario.dt_hours, scenario.time_labels)
        assert list(frame.columns) == ["time", "bus", "intensity", "load_emissions"]
        assert len(frame) == scenario.horizon * (len(case.buses) + 1)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
