"""
LP Solver - Dense revised simplex with dual extraction
Solves min c'x s.t. Ax <= b over free variables and returns the row multipliers
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)

DEFAULT_LP_OPTIONS = {
    "tolerance": 1e-9,
    "max_iter_factor": 50,
    "bland_after": 25,
}

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


class LPError(RuntimeError):
    """Base class for LP solver failures"""


class SimplexBreakdownError(LPError):
    """Iteration guard exceeded or basis became numerically singular"""

    def __init__(self, message: str, basis: Sequence[int], iterations: int):
        self.basis = list(basis)
        self.iterations = iterations
        super().__init__(f"{message} after {iterations} pivots (basis {self.basis})")


@dataclass(frozen=True, eq=False)
class LPStandardForm:
    """min cost'x s.t. ineq_matrix x <= ineq_rhs, x free"""

    cost: np.ndarray
    ineq_matrix: np.ndarray
    ineq_rhs: np.ndarray
    row_labels: Tuple[str, ...] = ()

    def __post_init__(self):
        c = np.asarray(self.cost, dtype=float)
        b = np.asarray(self.ineq_rhs, dtype=float)
        a = np.asarray(self.ineq_matrix, dtype=float)
        if a.size == 0:
            a = a.reshape(b.shape[0], c.shape[0])
        if a.ndim != 2 or a.shape[0] != b.shape[0] or a.shape[1] != c.shape[0]:
            raise ValueError(f"inconsistent LP dimensions: A {a.shape}, b {b.shape}, c {c.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ValueError("LP data must be finite")
        object.__setattr__(self, "cost", c)
        object.__setattr__(self, "ineq_matrix", a)
        object.__setattr__(self, "ineq_rhs", b)
        if not self.row_labels:
            object.__setattr__(self, "row_labels", tuple(f"row{r}" for r in range(b.shape[0])))

    @property
    def n(self) -> int:
        return self.cost.shape[0]

    @property
    def m(self) -> int:
        return self.ineq_rhs.shape[0]


@dataclass
class LPSolution:
    status: str
    primal: Optional[np.ndarray] = None
    dual: Optional[np.ndarray] = None
    objective: Optional[float] = None
    iterations: int = 0
    violated_rows: List[int] = field(default_factory=list)

    @property
    def is_optimal(self) -> bool:
        return self.status == OPTIMAL


class _RevisedSimplex:
    """Two-phase revised simplex on min c'z, Az = b, z >= 0 with b >= 0"""

    def __init__(self, a: np.ndarray, b: np.ndarray, basis: List[int], options: Dict[str, Any]):
        self.a = a
        self.b = b
        self.basis = list(basis)
        self.tol = options["tolerance"]
        self.bland_after = options["bland_after"]
        self.max_iter = options["max_iter_factor"] * (a.shape[0] + a.shape[1])
        self.iterations = 0

    def _factor(self):
        try:
            lu = scipy.linalg.lu_factor(self.a[:, self.basis], check_finite=False)
        except (scipy.linalg.LinAlgError, ValueError) as e:
            raise SimplexBreakdownError(f"singular basis ({e})", self.basis, self.iterations) from e
        if np.min(np.abs(np.diag(lu[0]))) < 1e-13:
            raise SimplexBreakdownError("singular basis", self.basis, self.iterations)
        return lu

    def run(self, cost: np.ndarray, allowed: np.ndarray) -> str:
        """Pivot until optimal or unbounded for the given cost; `allowed` masks enterable columns"""
        degenerate_run = 0
        use_bland = False
        while True:
            lu = self._factor()
            x_b = scipy.linalg.lu_solve(lu, self.b, check_finite=False)
            y = scipy.linalg.lu_solve(lu, cost[self.basis], trans=1, check_finite=False)
            reduced = cost - self.a.T @ y
            reduced[self.basis] = 0.0
            candidates = np.flatnonzero(allowed & (reduced < -self.tol))
            if candidates.size == 0:
                return OPTIMAL
            if use_bland:
                entering = int(candidates[0])
            else:
                # most negative reduced cost, lowest index on ties
                entering = int(candidates[np.argmin(reduced[candidates])])

            direction = scipy.linalg.lu_solve(lu, self.a[:, entering], check_finite=False)
            rows = np.flatnonzero(direction > self.tol)
            if rows.size == 0:
                return UNBOUNDED
            ratios = np.maximum(x_b[rows], 0.0) / direction[rows]
            best = ratios.min()
            ties = rows[ratios <= best + self.tol * max(1.0, abs(best))]
            # Bland: leaving variable with the smallest column index
            leaving_row = int(min(ties, key=lambda r: self.basis[r]))

            degenerate_run = degenerate_run + 1 if best <= self.tol else 0
            if degenerate_run >= self.bland_after and not use_bland:
                logger.debug(f"Switching to Bland's rule after {degenerate_run} degenerate pivots")
                use_bland = True
            self.basis[leaving_row] = entering
            self.iterations += 1
            if self.iterations > self.max_iter:
                raise SimplexBreakdownError("cycling guard exceeded", self.basis, self.iterations)

    def values(self) -> np.ndarray:
        z = np.zeros(self.a.shape[1])
        z[self.basis] = scipy.linalg.lu_solve(self._factor(), self.b, check_finite=False)
        return z

    def duals(self, cost: np.ndarray) -> np.ndarray:
        return scipy.linalg.lu_solve(self._factor(), cost[self.basis], trans=1, check_finite=False)


def solve_lp(lp: LPStandardForm, options: Optional[Dict[str, Any]] = None) -> LPSolution:
    """
    Solve min c'x s.t. Ax <= b with x free.

    Columns are [x+, x-, slack, artificial]; rows with negative rhs are negated and start
    on an artificial. Returned duals satisfy c + A'dual = 0, dual >= 0.
    """
    opts = {**DEFAULT_LP_OPTIONS, **(options or {})}
    n, m = lp.n, lp.m
    a, b, c = lp.ineq_matrix, lp.ineq_rhs, lp.cost
    if m == 0:
        if np.any(np.abs(c) > opts["tolerance"]):
            return LPSolution(status=UNBOUNDED)
        return LPSolution(status=OPTIMAL, primal=np.zeros(n), dual=np.zeros(0), objective=0.0)

    sign = np.where(b < 0, -1.0, 1.0)
    eye = np.eye(m)
    std = np.hstack([sign[:, None] * np.hstack([a, -a, eye]), eye])
    rhs = sign * b
    art_start = 2 * n + m
    needs_art = sign < 0
    basis = [art_start + r if needs_art[r] else 2 * n + r for r in range(m)]

    simplex = _RevisedSimplex(std, rhs, basis, opts)
    allowed = np.ones(std.shape[1], dtype=bool)
    allowed[art_start:] = False

    if np.any(needs_art):
        phase1_cost = np.zeros(std.shape[1])
        phase1_cost[art_start:][needs_art] = 1.0
        simplex.run(phase1_cost, allowed)
        z = simplex.values()
        artificial = z[art_start:]
        if artificial.sum() > opts["tolerance"] * max(1.0, float(np.abs(rhs).max())):
            violated = [int(r) for r in np.flatnonzero(artificial > opts["tolerance"])]
            logger.debug(f"LP infeasible; rows {[lp.row_labels[r] for r in violated]} cannot be satisfied")
            return LPSolution(status=INFEASIBLE, iterations=simplex.iterations, violated_rows=violated)
        _drive_out_artificials(simplex, art_start, opts["tolerance"])

    phase2_cost = np.concatenate([c, -c, np.zeros(2 * m)])
    status = simplex.run(phase2_cost, allowed)
    if status == UNBOUNDED:
        return LPSolution(status=UNBOUNDED, iterations=simplex.iterations)

    z = simplex.values()
    x = z[:n] - z[n: 2 * n]
    dual = -sign * simplex.duals(phase2_cost)
    dual = np.where(np.abs(dual) < opts["tolerance"], 0.0, dual)
    if np.any(dual < -1e-7):
        logger.warning(f"⚠️ Negative LP multiplier {dual.min():.3e} at optimum")
    dual = np.maximum(dual, 0.0)
    return LPSolution(status=OPTIMAL, primal=x, dual=dual, objective=float(c @ x), iterations=simplex.iterations)


def _drive_out_artificials(simplex: _RevisedSimplex, art_start: int, tol: float) -> None:
    for pos, col in enumerate(list(simplex.basis)):
        if col < art_start:
            continue
        lu = simplex._factor()
        row_of_binv = scipy.linalg.lu_solve(lu, np.eye(len(simplex.basis))[:, pos], trans=1, check_finite=False)
        pivots = row_of_binv @ simplex.a[:, :art_start]
        pivots[[c for c in simplex.basis if c < art_start]] = 0.0
        candidates = np.flatnonzero(np.abs(pivots) > tol)
        if candidates.size:
            simplex.basis[pos] = int(candidates[0])


def lp_certificate(lp: LPStandardForm, solution: LPSolution) -> Dict[str, float]:
    """Optimality residuals of an LP solution: primal, dual, stationarity, complementarity, duality gap"""
    x, lam = solution.primal, solution.dual
    slack = lp.ineq_matrix @ x - lp.ineq_rhs
    return {
        "primal": float(max(0.0, np.max(slack, initial=0.0))),
        "dual": float(max(0.0, -np.min(lam, initial=0.0))),
        "stationarity": float(np.max(np.abs(lp.cost + lp.ineq_matrix.T @ lam), initial=0.0)),
        "complementarity": float(abs(lam @ slack)),
        "duality_gap": float(abs(lp.cost @ x + lp.ineq_rhs @ lam)),
    }


def _equality_pairs(lp: LPStandardForm, tol: float) -> np.ndarray:
    """Mask of rows that pair with an opposite row to form an equality"""
    a, b = lp.ineq_matrix, lp.ineq_rhs
    mask = np.zeros(lp.m, dtype=bool)
    for r in range(lp.m):
        for s in range(r + 1, lp.m):
            if np.allclose(a[r], -a[s], atol=tol) and abs(b[r] + b[s]) <= tol:
                mask[r] = mask[s] = True
    return mask


def strict_feasibility(lp: LPStandardForm, tol: float = 1e-9) -> Tuple[bool, float]:
    """
    Slater check: the largest uniform margin s with A_I x + s <= b_I over the
    non-equality rows, capped at 1. Returns (strictly feasible, margin).
    """
    equalities = _equality_pairs(lp, tol)
    n = lp.n
    strict = ~equalities
    a = np.hstack([lp.ineq_matrix, strict[:, None].astype(float)])
    cap = np.zeros((1, n + 1))
    cap[0, n] = 1.0
    aug = LPStandardForm(
        cost=np.concatenate([np.zeros(n), [-1.0]]),
        ineq_matrix=np.vstack([a, cap]),
        ineq_rhs=np.concatenate([lp.ineq_rhs, [1.0]]),
    )
    sol = solve_lp(aug)
    if not sol.is_optimal:
        return False, 0.0
    margin = float(sol.primal[n])
    return margin > tol, margin


def create_lp(cost: Sequence[float], ineq_matrix: Any, ineq_rhs: Sequence[float],
              row_labels: Sequence[str] = ()) -> LPStandardForm:
    """Factory function for LP problems"""
    return LPStandardForm(np.asarray(cost, float), np.asarray(ineq_matrix, float), np.asarray(ineq_rhs, float),
                          tuple(row_labels))


def main():
    """Solve a small box LP and print its certificate"""
    logging.basicConfig(level=logging.INFO)
    print("📐 LP Solver - Revised Simplex Demo")
    print("=" * 40)
    lp = create_lp([1.0], [[-1.0], [1.0]], [0.0, 5.0], ["lower", "upper"])
    sol = solve_lp(lp)
    print(f"Status: {sol.status}  x*={sol.primal}  duals={sol.dual}  objective={sol.objective}")
    print(f"Certificate: {lp_certificate(lp, sol)}")
    return 0 if sol.is_optimal else 1


if __name__ == "__main__":
    exit(main())
