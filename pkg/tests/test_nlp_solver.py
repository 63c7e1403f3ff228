#!/usr/bin/env python3
"""
Test NLP Solver

Unit tests for the augmented Lagrangian solver and the finite-difference
derivative checks.
"""

import os
import sys

import numpy as np
import pytest
import scipy.sparse

# Add the parent directory to the path so we can import our modules
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from solvers.derivatives import check_derivatives, random_interior_point
from solvers.nlp_solver import (
    CONVERGED,
    INFEASIBLE,
    ITERATION_LIMIT,
    NLPProblem,
    create_nlp,
    linear_constraints,
    solve_nlp,
)


def squared_norm(x):
    return float(x @ x), 2.0 * x


class TestAugmentedLagrangian:
    """Test the outer loop on small programs with known solutions."""

    def test_unconstrained_quadratic(self):
        problem = create_nlp(lambda x: (float((x[0] - 3.0) ** 2), np.array([2.0 * (x[0] - 3.0)])), [0.0])
        sol = solve_nlp(problem)
        assert sol.status == CONVERGED
        assert sol.x[0] == pytest.approx(3.0, abs=1e-6)

    def test_projection_onto_line(self):
        """Closest point to the origin on x + y = 1 with multiplier -1."""
        problem = create_nlp(squared_norm, [0.0, 0.0], equality=linear_constraints([[1.0, 1.0]], [1.0]))
        sol = solve_nlp(problem)
        assert sol.converged
        assert sol.x == pytest.approx([0.5, 0.5], abs=1e-6)
        assert sol.multipliers["equality"][0] == pytest.approx(-1.0, abs=1e-5)
        assert sol.residuals["primal_feasibility"] <= 1e-6

    def test_inequality_and_bounds(self):
        """min (x-2)^2 + (y-2)^2 with x + y <= 2 and y <= 0.5 as a bound."""
        def objective(x):
            d = x - 2.0
            return float(d @ d), 2.0 * d

        problem = create_nlp(objective, [0.0, 0.0], upper=[np.inf, 0.5],
                             inequality=linear_constraints([[1.0, 1.0]], [2.0]))
        sol = solve_nlp(problem)
        assert sol.converged
        assert sol.x == pytest.approx([1.5, 0.5], abs=1e-5)
        assert sol.multipliers["inequality"][0] == pytest.approx(1.0, abs=1e-4)

    def test_complementarity_pair(self):
        """A pair x0 * x1 = 0 pushes the less valuable member to zero."""
        def objective(x):
            d = x - np.array([1.0, 0.2])
            return float(d @ d), 2.0 * d

        problem = create_nlp(objective, [1.0, 0.5], lower=0.0, complementarity_pairs=[[0, 1]],
                             pair_families={"pairs": slice(0, 1)})
        sol = solve_nlp(problem)
        assert sol.converged
        assert sol.x == pytest.approx([1.0, 0.0], abs=1e-5)
        assert sol.family_residuals["pairs"] <= 1e-6

    def test_iteration_limit_returns_point(self):
        problem = create_nlp(squared_norm, [0.0, 0.0], equality=linear_constraints([[1.0, 1.0]], [1.0]))
        sol = solve_nlp(problem, {"max_outer": 1})
        assert sol.status == ITERATION_LIMIT
        assert not sol.converged
        assert sol.iterations == 1
        assert np.all(np.isfinite(sol.x))

    def test_inconsistent_equalities_infeasible(self):
        """x = 1 and x = 2 at once stop with the penalty at its cap."""
        problem = create_nlp(lambda x: (0.0, np.zeros(1)), [0.0],
                             equality=linear_constraints([[1.0], [1.0]], [1.0, 2.0]))
        sol = solve_nlp(problem)
        assert sol.status == INFEASIBLE
        assert sol.residuals["primal_feasibility"] >= 0.4

    def test_merit_history_decreases(self):
        problem = create_nlp(squared_norm, [3.0, -1.0], equality=linear_constraints([[1.0, 1.0]], [1.0]))
        sol = solve_nlp(problem)
        assert len(sol.merit_history) == sol.iterations
        for history in sol.merit_history:
            assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))

    def test_log_path(self, tmp_path):
        log_path = tmp_path / "iterates.log"
        problem = create_nlp(squared_norm, [0.0, 0.0], equality=linear_constraints([[1.0, 1.0]], [1.0]))
        sol = solve_nlp(problem, {"log_path": str(log_path)})
        lines = log_path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == sol.iterations
        assert lines == sol.log
        assert "stationarity=" in lines[0]

    def test_invalid_problem(self):
        with pytest.raises(ValueError, match="shape"):
            NLPProblem(n=3, objective=squared_norm, x0=np.zeros(2), lower=0.0, upper=1.0)
        with pytest.raises(ValueError, match="lower bound"):
            create_nlp(squared_norm, [0.0], lower=1.0, upper=0.0)
        with pytest.raises(ValueError, match="complementarity"):
            create_nlp(squared_norm, [0.0, 0.0], complementarity_pairs=[[0, 1]])


class TestDerivativeCheck:
    """Test central-difference derivative checks."""

    def setup_method(self):
        self.rng = np.random.default_rng(11)

    def _smooth_equality(self, corrupt: bool = False):
        def evaluate(x, jacobian=True):
            values = np.array([np.sin(x[0]) * x[1], x[1] * x[2] - np.exp(0.5 * x[0])])
            if not jacobian:
                return values
            jac = np.array([
                [np.cos(x[0]) * x[1], np.sin(x[0]), 0.0],
                [-0.5 * np.exp(0.5 * x[0]), x[2], x[1]],
            ])
            if corrupt:
                jac[1, 2] += 0.5
            return values, scipy.sparse.csr_matrix(jac)
        return evaluate

    def test_linear_objective_exact(self):
        c = np.array([1.0, -2.0, 0.5])
        problem = create_nlp(lambda x: (float(c @ x), c), [0.25, 0.5, -0.75])
        report = check_derivatives(problem)
        assert report.max_error <= 1e-8

    def test_smooth_constraints_pass(self):
        problem = create_nlp(squared_norm, [0.3, -0.7, 1.2], equality=self._smooth_equality())
        report = check_derivatives(problem)
        assert float(report) <= 1e-6
        assert set(report.by_component) == {"objective", "equality", "inequality"}

    def test_corrupted_entry_located(self):
        problem = create_nlp(squared_norm, [0.3, -0.7, 1.2], equality=self._smooth_equality(corrupt=True))
        report = check_derivatives(problem)
        assert report.max_error > 0.1
        assert (report.component, report.row, report.col) == ("equality", 1, 2)

    def test_column_subset(self):
        """Skipping the corrupted column hides the error."""
        problem = create_nlp(squared_norm, [0.3, -0.7, 1.2], equality=self._smooth_equality(corrupt=True))
        assert check_derivatives(problem, columns=[0, 1]).max_error <= 1e-6

    def test_random_interior_point(self):
        problem = create_nlp(squared_norm, [0.0, 0.0, 0.0], lower=[0.0, 1.0, -np.inf], upper=[2.0, np.inf, np.inf])
        for _ in range(20):
            point = random_interior_point(problem, self.rng, margin=0.1)
            assert 0.1 <= point[0] <= 1.9
            assert point[1] >= 1.1
            assert -0.1 <= point[2] <= 0.1


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
