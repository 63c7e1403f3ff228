"""
NLP Solver - Augmented Lagrangian with bound-constrained quasi-Newton inner solves
Smooth constrained minimization with penalized complementarity pairs
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy.optimize
import scipy.sparse

logger = logging.getLogger(__name__)

DEFAULT_NLP_OPTIONS = {
    "tol_stat": 1e-6,
    "tol_feas": 1e-6,
    "tol_comp": 1e-6,
    "max_outer": 60,
    "max_inner": 3000,
    "penalty0": 10.0,
    "penalty_growth": 10.0,
    "penalty_max": 1e10,
    "comp_penalty0": 1.0,
    "comp_growth": 10.0,
    "comp_penalty_max": 1e8,
    "stall_rounds": 3,
    "log_path": None,
}

CONVERGED = "converged"
ITERATION_LIMIT = "iteration_limit"
INFEASIBLE = "infeasible"

Evaluator = Callable[..., Any]


def _no_constraints(n: int) -> Evaluator:
    def evaluate(x, jacobian=True):
        c = np.zeros(0)
        return (c, scipy.sparse.csr_matrix((0, n))) if jacobian else c
    return evaluate


@dataclass(eq=False)
class NLPProblem:
    """
    min f(x) s.t. equality(x) = 0, inequality(x) <= 0, lower <= x <= upper,
    x_i * x_j = 0 for each complementarity pair (both members bounded below by 0).

    objective(x) returns (f, gradient); equality/inequality(x, jacobian=True)
    return (values, sparse Jacobian), or values only with jacobian=False.
    """

    n: int
    objective: Evaluator
    x0: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    equality: Optional[Evaluator] = None
    inequality: Optional[Evaluator] = None
    complementarity_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))
    equality_families: Dict[str, slice] = field(default_factory=dict)
    inequality_families: Dict[str, slice] = field(default_factory=dict)
    pair_families: Dict[str, slice] = field(default_factory=dict)
    name: str = "nlp"

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (self.n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (self.n,)).copy()
        self.complementarity_pairs = np.asarray(self.complementarity_pairs, dtype=int).reshape(-1, 2)
        if self.x0.shape != (self.n,):
            raise ValueError(f"x0 has shape {self.x0.shape}, expected ({self.n},)")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound above upper bound")
        if self.complementarity_pairs.size and np.any(self.lower[self.complementarity_pairs] < 0):
            raise ValueError("complementarity variables must be bounded below by zero")
        if self.equality is None:
            self.equality = _no_constraints(self.n)
        if self.inequality is None:
            self.inequality = _no_constraints(self.n)

    @property
    def bounds(self) -> scipy.optimize.Bounds:
        return scipy.optimize.Bounds(self.lower, self.upper)


@dataclass
class NLPSolution:
    x: np.ndarray
    objective: float
    status: str
    iterations: int
    inner_iterations: int
    multipliers: Dict[str, np.ndarray]
    residuals: Dict[str, float]
    family_residuals: Dict[str, float] = field(default_factory=dict)
    merit_history: List[List[float]] = field(default_factory=list)
    log: List[str] = field(default_factory=list)
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def _projected_gradient_norm(x: np.ndarray, grad: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    projected = x - np.clip(x - grad, lower, upper)
    return float(np.max(np.abs(projected)))


def _pair_products(x: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    return x[pairs[:, 0]] * x[pairs[:, 1]]


class AugmentedLagrangian:
    """LANCELOT-style outer loop: multiplier update when feasibility improves enough, penalty growth otherwise"""

    def __init__(self, problem: NLPProblem, options: Optional[Dict[str, Any]] = None):
        self.problem = problem
        self.options = {**DEFAULT_NLP_OPTIONS, **(options or {})}

    def merit(self, x: np.ndarray, y: np.ndarray, z: np.ndarray, rho: float, rho_c: float) -> Tuple[float, np.ndarray]:
        p = self.problem
        f, grad = p.objective(x)
        grad = np.array(grad, dtype=float)
        ce, je = p.equality(x)
        ci, ji = p.inequality(x)
        value = f + y @ ce + 0.5 * rho * (ce @ ce)
        grad += je.T @ (y + rho * ce)
        shifted = np.maximum(0.0, z + rho * ci)
        value += (shifted @ shifted - z @ z) / (2.0 * rho)
        grad += ji.T @ shifted
        pairs = p.complementarity_pairs
        if pairs.size:
            value += rho_c * np.sum(_pair_products(x, pairs))
            np.add.at(grad, pairs[:, 0], rho_c * x[pairs[:, 1]])
            np.add.at(grad, pairs[:, 1], rho_c * x[pairs[:, 0]])
        return float(value), grad

    def family_residuals(self, x: np.ndarray) -> Dict[str, float]:
        p = self.problem
        ce = p.equality(x, jacobian=False)
        ci = p.inequality(x, jacobian=False)
        report = {}
        for name, rows in p.equality_families.items():
            report[name] = float(np.max(np.abs(ce[rows]), initial=0.0))
        for name, rows in p.inequality_families.items():
            report[name] = float(np.max(ci[rows], initial=0.0))
        for name, rows in p.pair_families.items():
            report[name] = float(np.max(np.abs(_pair_products(x, p.complementarity_pairs[rows])), initial=0.0))
        return report

    def solve(self) -> NLPSolution:
        p, opts = self.problem, self.options
        x = np.clip(p.x0, p.lower, p.upper)
        ce0 = p.equality(x, jacobian=False)
        ci0 = p.inequality(x, jacobian=False)
        y, z = np.zeros(ce0.size), np.zeros(ci0.size)
        rho = float(opts["penalty0"])
        rho_c = float(opts["comp_penalty0"]) if p.complementarity_pairs.size else 0.0
        omega = 1.0 / rho
        eta = 1.0 / rho ** 0.1

        log_file = open(opts["log_path"], "w") if opts["log_path"] else None
        log_lines: List[str] = []
        merit_history: List[List[float]] = []
        inner_total = 0
        best: Optional[Tuple[float, np.ndarray]] = None
        stalled = 0
        status = ITERATION_LIMIT
        outer = 0
        residuals: Dict[str, float] = {}
        multipliers: Dict[str, np.ndarray] = {"equality": y, "inequality": z}

        try:
            for outer in range(1, opts["max_outer"] + 1):
                cache: Dict[str, Any] = {}
                history: List[float] = []

                def fun(v, y=y, z=z, rho=rho, rho_c=rho_c):
                    value, grad = self.merit(v, y, z, rho, rho_c)
                    cache["x"], cache["value"] = v.copy(), value
                    return value, grad

                def record(xk):
                    if "x" in cache and np.array_equal(cache["x"], xk):
                        history.append(cache["value"])
                    else:
                        history.append(fun(xk)[0])

                result = scipy.optimize.minimize(
                    fun, x, jac=True, method="L-BFGS-B", bounds=p.bounds, callback=record,
                    options={"maxiter": opts["max_inner"], "gtol": max(omega, 0.1 * opts["tol_stat"]),
                             "ftol": 1e-15, "maxcor": 20},
                )
                x = result.x
                inner_total += int(result.nit)
                merit_history.append(history)

                ce, _ = p.equality(x)
                ci, _ = p.inequality(x)
                y_est = y + rho * ce
                z_est = np.maximum(0.0, z + rho * ci)
                _, lagrangian_grad = self.merit(x, y, z, rho, rho_c)
                stationarity = _projected_gradient_norm(x, lagrangian_grad, p.lower, p.upper)
                feasibility = max(float(np.max(np.abs(ce), initial=0.0)), float(np.max(ci, initial=0.0)))
                pair_violation = float(np.max(np.abs(_pair_products(x, p.complementarity_pairs)), initial=0.0))
                slack_violation = float(np.max(np.abs(z_est * ci), initial=0.0))
                complementarity = max(pair_violation, slack_violation)
                residuals = {"stationarity": stationarity, "primal_feasibility": feasibility,
                             "complementarity": complementarity}
                multipliers = {"equality": y_est, "inequality": z_est}

                line = (f"{outer} merit={result.fun!r} stationarity={stationarity!r} feasibility={feasibility!r} "
                        f"complementarity={complementarity!r} penalty={rho!r} comp_penalty={rho_c!r} inner={result.nit}")
                log_lines.append(line)
                if log_file:
                    log_file.write(line + "\n")
                logger.debug(f"[{p.name}] {line}")

                violation = max(feasibility, complementarity)
                if best is None or violation < best[0]:
                    best = (violation, x.copy())

                if (stationarity <= opts["tol_stat"] and feasibility <= opts["tol_feas"]
                        and complementarity <= opts["tol_comp"]):
                    status = CONVERGED
                    break

                if feasibility <= eta:
                    y, z = y_est, z_est
                    omega = omega / rho
                    eta = eta / rho ** 0.9
                    stalled = 0
                elif rho >= opts["penalty_max"]:
                    stalled += 1
                    if stalled >= opts["stall_rounds"]:
                        status = INFEASIBLE
                        break
                else:
                    rho = min(rho * opts["penalty_growth"], opts["penalty_max"])
                    omega = 1.0 / rho
                    eta = 1.0 / rho ** 0.1
                if p.complementarity_pairs.size and pair_violation > opts["tol_comp"]:
                    rho_c = min(rho_c * opts["comp_growth"], opts["comp_penalty_max"])
        finally:
            if log_file:
                log_file.close()

        if status != CONVERGED and best is not None and not np.array_equal(best[1], x):
            x = best[1]
            residuals = self._residuals_at(x, multipliers, rho_c)

        f, _ = p.objective(x)
        message = {
            CONVERGED: "KKT tolerances met (local solution)",
            ITERATION_LIMIT: f"outer iteration limit {opts['max_outer']} reached; returning least-violating point",
            INFEASIBLE: "penalty at its cap without progress; problem may be infeasible",
        }[status]
        if status == CONVERGED:
            logger.info(f"✅ {p.name}: converged in {outer} outer / {inner_total} inner iterations")
        else:
            logger.warning(f"⚠️ {p.name}: {message} (residuals {residuals})")
        return NLPSolution(
            x=x, objective=float(f), status=status, iterations=outer, inner_iterations=inner_total,
            multipliers=multipliers, residuals=residuals, family_residuals=self.family_residuals(x),
            merit_history=merit_history, log=log_lines, message=message,
        )

    def _residuals_at(self, x: np.ndarray, multipliers: Dict[str, np.ndarray], rho_c: float) -> Dict[str, float]:
        p = self.problem
        y, z = multipliers["equality"], multipliers["inequality"]
        f, grad = p.objective(x)
        ce, je = p.equality(x)
        ci, ji = p.inequality(x)
        grad = np.array(grad, dtype=float) + je.T @ y + ji.T @ z
        pairs = p.complementarity_pairs
        if pairs.size:
            np.add.at(grad, pairs[:, 0], rho_c * x[pairs[:, 1]])
            np.add.at(grad, pairs[:, 1], rho_c * x[pairs[:, 0]])
        return {
            "stationarity": _projected_gradient_norm(x, grad, p.lower, p.upper),
            "primal_feasibility": max(float(np.max(np.abs(ce), initial=0.0)), float(np.max(ci, initial=0.0))),
            "complementarity": max(float(np.max(np.abs(_pair_products(x, pairs)), initial=0.0)),
                                   float(np.max(np.abs(z * ci), initial=0.0))),
        }


def solve_nlp(problem: NLPProblem, options: Optional[Dict[str, Any]] = None) -> NLPSolution:
    """Solve a smooth NLP to a first-order point; nonconvex problems yield local solutions only"""
    return AugmentedLagrangian(problem, options).solve()


def create_nlp(objective: Evaluator, x0, lower=-np.inf, upper=np.inf, equality: Optional[Evaluator] = None,
               inequality: Optional[Evaluator] = None, name: str = "nlp", **kwargs) -> NLPProblem:
    """Factory function for NLP problems"""
    x0 = np.asarray(x0, dtype=float)
    return NLPProblem(n=x0.size, objective=objective, x0=x0, lower=lower, upper=upper,
                      equality=equality, inequality=inequality, name=name, **kwargs)


def linear_constraints(matrix, rhs) -> Evaluator:
    """Evaluator for matrix @ x - rhs"""
    a = scipy.sparse.csr_matrix(np.atleast_2d(np.asarray(matrix, dtype=float)))
    b = np.asarray(rhs, dtype=float)

    def evaluate(x, jacobian=True):
        c = a @ x - b
        return (c, a) if jacobian else c
    return evaluate


def main():
    """Project the origin onto x + y = 1"""
    logging.basicConfig(level=logging.INFO)
    print("📈 NLP Solver - Augmented Lagrangian Demo")
    print("=" * 40)
    problem = create_nlp(lambda x: (float(x @ x), 2.0 * x), [0.0, 0.0],
                         equality=linear_constraints([[1.0, 1.0]], [1.0]), name="projection")
    sol = solve_nlp(problem)
    print(f"Status: {sol.status}  x*={sol.x}  multiplier={sol.multipliers['equality']}")
    print(f"Residuals: {sol.residuals}")
    return 0 if sol.converged else 1


if __name__ == "__main__":
    exit(main())
