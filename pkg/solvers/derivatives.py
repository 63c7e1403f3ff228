"""
Derivative Checks - Central finite differences against analytic gradients and Jacobians
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from solvers.nlp_solver import NLPProblem

logger = logging.getLogger(__name__)

# 2**-20, close to 1e-6 and exact in binary
BASE_STEP = 2.0 ** -20


@dataclass
class DerivativeReport:
    """Worst relative discrepancy |analytic - fd| / max(1, |fd|) and where it occurred"""

    max_error: float
    component: str
    row: int
    col: int
    by_component: Dict[str, float] = field(default_factory=dict)

    def __float__(self) -> float:
        return self.max_error


def _dense(jac) -> np.ndarray:
    return jac.toarray() if hasattr(jac, "toarray") else np.atleast_2d(np.asarray(jac, dtype=float))


def check_derivatives(
    problem: NLPProblem,
    point: Optional[np.ndarray] = None,
    columns: Optional[Sequence[int]] = None,
) -> DerivativeReport:
    """
    Compare the analytic objective gradient and constraint Jacobians with central
    differences of step 2**-20 * max(1, |x_j|). `columns` restricts the check to a
    subset of variables for large problems.
    """
    x = np.asarray(problem.x0 if point is None else point, dtype=float)
    cols = np.arange(problem.n) if columns is None else np.asarray(columns, dtype=int)

    _, grad = problem.objective(x)
    analytic = {
        "objective": np.asarray(grad, dtype=float).reshape(1, -1),
        "equality": _dense(problem.equality(x)[1]),
        "inequality": _dense(problem.inequality(x)[1]),
    }
    evaluators = {
        "objective": lambda v: np.atleast_1d(problem.objective(v)[0]),
        "equality": lambda v: problem.equality(v, jacobian=False),
        "inequality": lambda v: problem.inequality(v, jacobian=False),
    }

    worst = DerivativeReport(max_error=0.0, component="objective", row=0, col=int(cols[0]) if cols.size else 0)
    for name, evaluate in evaluators.items():
        jac = analytic[name]
        if jac.shape[0] == 0:
            worst.by_component[name] = 0.0
            continue
        component_max = 0.0
        for j in cols:
            step = BASE_STEP * max(1.0, abs(x[j]))
            forward, backward = x.copy(), x.copy()
            forward[j] += step
            backward[j] -= step
            fd = (evaluate(forward) - evaluate(backward)) / (forward[j] - backward[j])
            errors = np.abs(jac[:, j] - fd) / np.maximum(1.0, np.abs(fd))
            row = int(np.argmax(errors))
            if errors[row] > component_max:
                component_max = float(errors[row])
            if errors[row] > worst.max_error:
                worst.max_error, worst.component, worst.row, worst.col = float(errors[row]), name, row, int(j)
        worst.by_component[name] = component_max

    logger.debug(f"Derivative check on {problem.name}: {worst.max_error:.3e} at {worst.component}[{worst.row}, {worst.col}]")
    return worst


def random_interior_point(problem: NLPProblem, rng: np.random.Generator, margin: float = 0.1) -> np.ndarray:
    """Uniform point strictly inside the finite bounds; unbounded coordinates perturb x0 by up to `margin`"""
    lower, upper = problem.lower, problem.upper
    point = problem.x0 + rng.uniform(-margin, margin, problem.n)
    finite = np.isfinite(lower) & np.isfinite(upper)
    width = upper - lower
    point[finite] = lower[finite] + width[finite] * rng.uniform(0.05, 0.95, int(finite.sum()))
    lo_only = np.isfinite(lower) & ~finite
    point[lo_only] = np.maximum(point[lo_only], lower[lo_only] + margin)
    hi_only = np.isfinite(upper) & ~finite
    point[hi_only] = np.minimum(point[hi_only], upper[hi_only] - margin)
    return point
