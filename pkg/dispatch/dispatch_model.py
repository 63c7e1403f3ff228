"""
Dispatch Model - Multi-period carbon-aware AC dispatch as a smooth NLP
Assembles objective, network, carbon-flow and (optionally) embedded user KKT blocks
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import scipy.sparse

from grid.grid_model import NetworkCase, Scenario, available_capacity, nominal_profile
from grid.power_flow import branch_flow, branch_flow_jacobian, default_slack_bus
from dispatch.demand_response import KktBlocks, build_instance, kkt_blocks
from solvers.nlp_solver import NLPProblem

logger = logging.getLogger(__name__)

FIXED_LOADS = "fixed_loads"
KKT_EMBEDDED = "kkt_embedded"
MODES = (FIXED_LOADS, KKT_EMBEDDED)

EQUALITY_FAMILIES = ("power_balance_p", "power_balance_q", "flow_split_from", "flow_split_to", "carbon_flow",
                     "kkt_stationarity", "kkt_primal")
INEQUALITY_FAMILIES = ("line_limit_from", "line_limit_to", "ramp_up", "ramp_down")
PAIR_FAMILIES = ("flow_complementarity", "kkt_complementarity")


class DispatchModelError(ValueError):
    """Raised for inconsistent dispatch inputs (missing profiles, dimension mismatch)"""


@dataclass
class DispatchVariables:
    """Decision variables per time step (columns); per-load series keyed by load id"""

    gen_p: np.ndarray
    gen_q: np.ndarray
    voltage: np.ndarray
    angle: np.ndarray
    p_hat_fwd: np.ndarray
    p_hat_rev: np.ndarray
    p_hat_fwd_to: np.ndarray
    p_hat_rev_to: np.ndarray
    intensity: np.ndarray
    loads: Dict[str, np.ndarray] = field(default_factory=dict)
    duals: Dict[str, np.ndarray] = field(default_factory=dict)
    slacks: Dict[str, np.ndarray] = field(default_factory=dict)


class DispatchLayout:
    """Index bookkeeping for variables, constraint rows and complementarity pairs"""

    BLOCKS = ("pg", "qg", "vm", "va", "af", "ar", "cf", "cr", "w")

    def __init__(self, case: NetworkCase, horizon: int, flexible_ids: Tuple[str, ...] = (),
                 kkt_rows: Optional[Mapping[str, int]] = None):
        self.horizon = horizon
        self.n_gen = len(case.generators)
        self.n_bus = len(case.buses)
        self.n_branch = len(case.branches)
        self.flexible_ids = tuple(flexible_ids)
        self.kkt_rows = dict(kkt_rows or {})

        counter = 0
        self.index: Dict[str, np.ndarray] = {}
        sizes = {"pg": self.n_gen, "qg": self.n_gen, "vm": self.n_bus, "va": self.n_bus,
                 "af": self.n_branch, "ar": self.n_branch, "cf": self.n_branch, "cr": self.n_branch,
                 "w": self.n_bus}
        for name in self.BLOCKS:
            count = sizes[name] * horizon
            self.index[name] = np.arange(counter, counter + count).reshape(sizes[name], horizon)
            counter += count
        if self.flexible_ids:
            count = len(self.flexible_ids) * horizon
            self.index["pl"] = np.arange(counter, counter + count).reshape(len(self.flexible_ids), horizon)
            counter += count
        for load_id in self.flexible_ids:
            m = self.kkt_rows.get(load_id, 0)
            self.index[f"lam:{load_id}"] = np.arange(counter, counter + m)
            counter += m
            self.index[f"slack:{load_id}"] = np.arange(counter, counter + m)
            counter += m
        self.n_vars = counter

        # constraint rows
        row = 0
        self.eq_rows: Dict[str, Any] = {}
        self.eq_families: Dict[str, slice] = {}
        for name, size in (("power_balance_p", self.n_bus), ("power_balance_q", self.n_bus),
                           ("flow_split_from", self.n_branch), ("flow_split_to", self.n_branch),
                           ("carbon_flow", self.n_bus)):
            self.eq_rows[name] = np.arange(row, row + size * horizon).reshape(size, horizon)
            self.eq_families[name] = slice(row, row + size * horizon)
            row += size * horizon
        start = row
        for load_id in self.flexible_ids:
            self.eq_rows[f"stat:{load_id}"] = np.arange(row, row + horizon)
            row += horizon
        self.eq_families["kkt_stationarity"] = slice(start, row)
        start = row
        for load_id in self.flexible_ids:
            m = self.kkt_rows.get(load_id, 0)
            self.eq_rows[f"primal:{load_id}"] = np.arange(row, row + m)
            row += m
        self.eq_families["kkt_primal"] = slice(start, row)
        self.n_eq = row

        row = 0
        self.ineq_rows: Dict[str, np.ndarray] = {}
        self.ineq_families: Dict[str, slice] = {}
        ramp_steps = max(horizon - 1, 0)
        for name, size, steps in (("line_limit_from", self.n_branch, horizon), ("line_limit_to", self.n_branch, horizon),
                                  ("ramp_up", self.n_gen, ramp_steps), ("ramp_down", self.n_gen, ramp_steps)):
            self.ineq_rows[name] = np.arange(row, row + size * steps).reshape(size, steps)
            self.ineq_families[name] = slice(row, row + size * steps)
            row += size * steps
        self.n_ineq = row

        pairs = [np.stack([self.index["af"].ravel(), self.index["ar"].ravel()], axis=1),
                 np.stack([self.index["cf"].ravel(), self.index["cr"].ravel()], axis=1)]
        flow_pairs = 2 * self.n_branch * horizon
        for load_id in self.flexible_ids:
            pairs.append(np.stack([self.index[f"lam:{load_id}"], self.index[f"slack:{load_id}"]], axis=1))
        self.pairs = np.concatenate(pairs).astype(int) if pairs else np.zeros((0, 2), dtype=int)
        self.pair_families = {"flow_complementarity": slice(0, flow_pairs),
                              "kkt_complementarity": slice(flow_pairs, self.pairs.shape[0])}

    @property
    def counts(self) -> Dict[str, int]:
        return {"variables": self.n_vars, "equalities": self.n_eq, "inequalities": self.n_ineq,
                "pairs": int(self.pairs.shape[0])}

    def block(self, x: np.ndarray, name: str) -> np.ndarray:
        return x[self.index[name]]

    def unpack(self, x: np.ndarray) -> DispatchVariables:
        values = DispatchVariables(
            gen_p=x[self.index["pg"]], gen_q=x[self.index["qg"]],
            voltage=x[self.index["vm"]], angle=x[self.index["va"]],
            p_hat_fwd=x[self.index["af"]], p_hat_rev=x[self.index["ar"]],
            p_hat_fwd_to=x[self.index["cf"]], p_hat_rev_to=x[self.index["cr"]],
            intensity=x[self.index["w"]],
        )
        for pos, load_id in enumerate(self.flexible_ids):
            values.loads[load_id] = x[self.index["pl"][pos]]
            values.duals[load_id] = x[self.index[f"lam:{load_id}"]]
            values.slacks[load_id] = x[self.index[f"slack:{load_id}"]]
        return values

    def pack(self, values: DispatchVariables) -> np.ndarray:
        x = np.zeros(self.n_vars)
        for name, arr in (("pg", values.gen_p), ("qg", values.gen_q), ("vm", values.voltage), ("va", values.angle),
                          ("af", values.p_hat_fwd), ("ar", values.p_hat_rev), ("cf", values.p_hat_fwd_to),
                          ("cr", values.p_hat_rev_to), ("w", values.intensity)):
            x[self.index[name]] = arr
        for pos, load_id in enumerate(self.flexible_ids):
            if load_id in values.loads:
                x[self.index["pl"][pos]] = values.loads[load_id]
            if load_id in values.duals:
                x[self.index[f"lam:{load_id}"]] = values.duals[load_id]
            if load_id in values.slacks:
                x[self.index[f"slack:{load_id}"]] = values.slacks[load_id]
        return x


@dataclass(eq=False)
class DispatchProblem(NLPProblem):
    """NLPProblem plus the bookkeeping needed to read a dispatch back out of x"""

    layout: Optional[DispatchLayout] = None
    mode: str = FIXED_LOADS
    objective_scale: float = 1.0
    load_profiles: Dict[str, np.ndarray] = field(default_factory=dict)
    kkt: Dict[str, KktBlocks] = field(default_factory=dict)


class _DispatchEvaluator:
    """Vectorized objective, constraints and sparse Jacobians over all (element, time) pairs"""

    def __init__(self, case: NetworkCase, scenario: Scenario, layout: DispatchLayout,
                 fixed_p: np.ndarray, fixed_q: np.ndarray, kkt: Dict[str, KktBlocks], objective_scale: float):
        self.case, self.scenario, self.layout = case, scenario, layout
        self.fixed_p, self.fixed_q = fixed_p, fixed_q
        self.kkt = kkt
        self.scale = objective_scale
        self.dt = scenario.dt_hours
        self.f, self.t = case.branch_from, case.branch_to
        self.g = case.conductance[:, None]
        self.b = case.susceptance[:, None]
        capacity = np.array([br.apparent_capacity for br in case.branches])
        valid = np.isfinite(capacity) & (capacity > 0)
        self.inv_s2 = np.where(valid, 1.0 / np.where(valid, capacity, 1.0) ** 2, 0.0)[:, None]
        gens = case.generators
        self.c2 = np.array([g.cost_quadratic for g in gens])[:, None]
        self.c1 = np.array([g.cost_linear for g in gens])[:, None]
        self.c0 = np.array([g.cost_constant for g in gens])[:, None]
        self.wg = case.emission_factors[:, None]
        self.ramp_up = np.array([g.ramp_up for g in gens])[:, None]
        self.ramp_down = np.array([g.ramp_down for g in gens])[:, None]
        self.emission_cost = scenario.emission_price * case.emission_scale
        self.gen_bus = case.gen_bus
        self.flex_bus = np.array([case.bus_index[case.load(lid).bus] for lid in layout.flexible_ids], dtype=int)
        self.flex_eta = np.array([case.load(lid).power_factor_ratio for lid in layout.flexible_ids])[:, None]

    # ------------------------------------------------------------ helpers

    def _bus_sum(self, buses: np.ndarray, values: np.ndarray) -> np.ndarray:
        out = np.zeros((self.layout.n_bus, self.layout.horizon))
        np.add.at(out, buses, values)
        return out

    def _flows(self, x: np.ndarray):
        L = self.layout
        vm, va = x[L.index["vm"]], x[L.index["va"]]
        vi, vj, thi, thj = vm[self.f], vm[self.t], va[self.f], va[self.t]
        pf, qf = branch_flow(vi, vj, thi, thj, self.g, self.b)
        pt, qt = branch_flow(vj, vi, thj, thi, self.g, self.b)
        return pf, qf, pt, qt

    def _flow_partials(self, x: np.ndarray):
        L = self.layout
        vm, va = x[L.index["vm"]], x[L.index["va"]]
        vi, vj, thi, thj = vm[self.f], vm[self.t], va[self.f], va[self.t]
        jf = branch_flow_jacobian(vi, vj, thi, thj, self.g, self.b)
        jt = branch_flow_jacobian(vj, vi, thj, thi, self.g, self.b)
        return jf, jt

    def _flow_columns(self):
        """Columns (v_i, v_j, th_i, th_j) of each branch end, from-end first"""
        L = self.layout
        vm, va = L.index["vm"], L.index["va"]
        from_end = (vm[self.f], vm[self.t], va[self.f], va[self.t])
        to_end = (vm[self.t], vm[self.f], va[self.t], va[self.f])
        return from_end, to_end

    # ------------------------------------------------------------ objective

    def objective(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        L = self.layout
        pg = x[L.index["pg"]]
        marginal = self.c1 + self.emission_cost * self.wg
        value = self.scale * self.dt * float(np.sum(self.c2 * pg * pg + marginal * pg + self.c0))
        grad = np.zeros(L.n_vars)
        grad[L.index["pg"]] = self.scale * self.dt * (2.0 * self.c2 * pg + marginal)
        return value, grad

    # ------------------------------------------------------------ equalities

    def loads(self, x: np.ndarray) -> np.ndarray:
        L = self.layout
        if not L.flexible_ids:
            return np.zeros((0, L.horizon))
        return x[L.index["pl"]]

    def equality(self, x: np.ndarray, jacobian: bool = True):
        L = self.layout
        pg, qg = x[L.index["pg"]], x[L.index["qg"]]
        af, ar, cf, cr = (x[L.index[k]] for k in ("af", "ar", "cf", "cr"))
        w = x[L.index["w"]]
        pl = self.loads(x)
        pf, qf, pt, qt = self._flows(x)

        c = np.zeros(L.n_eq)
        p_balance = (self._bus_sum(self.gen_bus, pg) - self._bus_sum(self.flex_bus, pl) - self.fixed_p
                     - self._bus_sum(self.f, pf) - self._bus_sum(self.t, pt))
        q_balance = (self._bus_sum(self.gen_bus, qg) - self._bus_sum(self.flex_bus, self.flex_eta * pl) - self.fixed_q
                     - self._bus_sum(self.f, qf) - self._bus_sum(self.t, qt))
        c[L.eq_rows["power_balance_p"]] = p_balance
        c[L.eq_rows["power_balance_q"]] = q_balance
        c[L.eq_rows["flow_split_from"]] = af - ar - pf
        c[L.eq_rows["flow_split_to"]] = cf - cr - pt

        inflow = self._bus_sum(self.gen_bus, pg) + self._bus_sum(self.f, ar) + self._bus_sum(self.t, cr)
        carried = (self._bus_sum(self.gen_bus, self.wg * pg) + self._bus_sum(self.f, w[self.t] * ar)
                   + self._bus_sum(self.t, w[self.f] * cr))
        c[L.eq_rows["carbon_flow"]] = w * inflow - carried

        for pos, load_id in enumerate(L.flexible_ids):
            blocks = self.kkt[load_id]
            lam = x[L.index[f"lam:{load_id}"]]
            slack = x[L.index[f"slack:{load_id}"]]
            c[L.eq_rows[f"stat:{load_id}"]] = blocks.stationarity(lam, w[self.flex_bus[pos]])
            c[L.eq_rows[f"primal:{load_id}"]] = blocks.primal(pl[pos]) + slack

        if not jacobian:
            return c
        return c, self._equality_jacobian(x, pg, ar, cr, w, inflow)

    def _equality_jacobian(self, x, pg, ar, cr, w, inflow) -> scipy.sparse.csr_matrix:
        L = self.layout
        T = L.horizon
        rows: List[np.ndarray] = []
        cols: List[np.ndarray] = []
        vals: List[np.ndarray] = []

        def add(r, c, v):
            r, c = np.asarray(r), np.asarray(c)
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(np.broadcast_to(v, r.shape).ravel())

        pbal, qbal = L.eq_rows["power_balance_p"], L.eq_rows["power_balance_q"]
        split_f, split_t = L.eq_rows["flow_split_from"], L.eq_rows["flow_split_to"]
        carbon = L.eq_rows["carbon_flow"]

        add(pbal[self.gen_bus], L.index["pg"], 1.0)
        add(qbal[self.gen_bus], L.index["qg"], 1.0)
        if L.flexible_ids:
            add(pbal[self.flex_bus], L.index["pl"], -1.0)
            add(qbal[self.flex_bus], L.index["pl"], -np.broadcast_to(self.flex_eta, (len(L.flexible_ids), T)))

        jf, jt = self._flow_partials(x)
        from_cols, to_cols = self._flow_columns()
        p_from = (jf.dp_dvi, jf.dp_dvj, jf.dp_dthi, jf.dp_dthj)
        q_from = (jf.dq_dvi, jf.dq_dvj, jf.dq_dthi, jf.dq_dthj)
        p_to = (jt.dp_dvi, jt.dp_dvj, jt.dp_dthi, jt.dp_dthj)
        q_to = (jt.dq_dvi, jt.dq_dvj, jt.dq_dthi, jt.dq_dthj)
        for k in range(4):
            add(pbal[self.f], from_cols[k], -p_from[k])
            add(qbal[self.f], from_cols[k], -q_from[k])
            add(pbal[self.t], to_cols[k], -p_to[k])
            add(qbal[self.t], to_cols[k], -q_to[k])
            add(split_f, from_cols[k], -p_from[k])
            add(split_t, to_cols[k], -p_to[k])
        add(split_f, L.index["af"], 1.0)
        add(split_f, L.index["ar"], -1.0)
        add(split_t, L.index["cf"], 1.0)
        add(split_t, L.index["cr"], -1.0)

        add(carbon, L.index["w"], inflow)
        add(carbon[self.gen_bus], L.index["pg"], w[self.gen_bus] - self.wg)
        add(carbon[self.f], L.index["ar"], w[self.f] - w[self.t])
        add(carbon[self.f], L.index["w"][self.t], -ar)
        add(carbon[self.t], L.index["cr"], w[self.t] - w[self.f])
        add(carbon[self.t], L.index["w"][self.f], -cr)

        for pos, load_id in enumerate(L.flexible_ids):
            blocks = self.kkt[load_id]
            stat = L.eq_rows[f"stat:{load_id}"]
            primal = L.eq_rows[f"primal:{load_id}"]
            lam_cols = L.index[f"lam:{load_id}"]
            add(stat, L.index["w"][self.flex_bus[pos]], blocks.dt_hours * blocks.carbon_cost)
            a = blocks.matrix
            r_idx, t_idx = np.nonzero(a)
            add(stat[t_idx], lam_cols[r_idx], a[r_idx, t_idx])
            add(primal[r_idx], L.index["pl"][pos][t_idx], a[r_idx, t_idx])
            add(primal, L.index[f"slack:{load_id}"], 1.0)

        return scipy.sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(L.n_eq, L.n_vars)
        )

    # ------------------------------------------------------------ inequalities

    def inequality(self, x: np.ndarray, jacobian: bool = True):
        L = self.layout
        pg = x[L.index["pg"]]
        pf, qf, pt, qt = self._flows(x)
        c = np.zeros(L.n_ineq)
        c[L.ineq_rows["line_limit_from"]] = (pf * pf + qf * qf) * self.inv_s2 - 1.0
        c[L.ineq_rows["line_limit_to"]] = (pt * pt + qt * qt) * self.inv_s2 - 1.0
        step = pg[:, 1:] - pg[:, :-1]
        c[L.ineq_rows["ramp_up"]] = step - self.ramp_up
        c[L.ineq_rows["ramp_down"]] = self.ramp_down - step
        if not jacobian:
            return c

        rows, cols, vals = [], [], []

        def add(r, col, v):
            r, col = np.asarray(r), np.asarray(col)
            rows.append(r.ravel())
            cols.append(col.ravel())
            vals.append(np.broadcast_to(v, r.shape).ravel())

        jf, jt = self._flow_partials(x)
        from_cols, to_cols = self._flow_columns()
        p_from = (jf.dp_dvi, jf.dp_dvj, jf.dp_dthi, jf.dp_dthj)
        q_from = (jf.dq_dvi, jf.dq_dvj, jf.dq_dthi, jf.dq_dthj)
        p_to = (jt.dp_dvi, jt.dp_dvj, jt.dp_dthi, jt.dp_dthj)
        q_to = (jt.dq_dvi, jt.dq_dvj, jt.dq_dthi, jt.dq_dthj)
        for k in range(4):
            add(L.ineq_rows["line_limit_from"], from_cols[k], 2.0 * self.inv_s2 * (pf * p_from[k] + qf * q_from[k]))
            add(L.ineq_rows["line_limit_to"], to_cols[k], 2.0 * self.inv_s2 * (pt * p_to[k] + qt * q_to[k]))
        pg_idx = L.index["pg"]
        add(L.ineq_rows["ramp_up"], pg_idx[:, 1:], 1.0)
        add(L.ineq_rows["ramp_up"], pg_idx[:, :-1], -1.0)
        add(L.ineq_rows["ramp_down"], pg_idx[:, 1:], -1.0)
        add(L.ineq_rows["ramp_down"], pg_idx[:, :-1], 1.0)
        jac = scipy.sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(L.n_ineq, L.n_vars)
        )
        return c, jac


def fixed_demand(case: NetworkCase, scenario: Scenario, profiles: Mapping[str, np.ndarray],
                 include_flexible: bool) -> Tuple[np.ndarray, np.ndarray]:
    """Per-bus constant real and reactive demand (N x T)"""
    p = np.zeros((len(case.buses), scenario.horizon))
    q = np.zeros_like(p)
    for load in case.loads:
        if load.is_flexible and not include_flexible:
            continue
        series = profiles[load.id] if load.is_flexible else nominal_profile(load, scenario)
        pos = case.bus_index[load.bus]
        p[pos] += series
        q[pos] += load.power_factor_ratio * series
    return p, q


def _check_profiles(case: NetworkCase, scenario: Scenario, profiles: Mapping[str, Any]) -> Dict[str, np.ndarray]:
    checked = {}
    for load in case.flexible_loads:
        if load.id not in profiles:
            raise DispatchModelError(f"missing load profile for flexible load {load.id}")
        series = np.asarray(profiles[load.id], dtype=float).reshape(-1)
        if series.shape[0] != scenario.horizon:
            raise DispatchModelError(f"profile for {load.id} has {series.shape[0]} entries, horizon is {scenario.horizon}")
        checked[load.id] = series
    return checked


def variable_bounds(case: NetworkCase, scenario: Scenario, layout: DispatchLayout,
                    kkt: Mapping[str, KktBlocks], reference_bus: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    T = scenario.horizon
    lower = np.full(layout.n_vars, -np.inf)
    upper = np.full(layout.n_vars, np.inf)
    for g, gen in enumerate(case.generators):
        cap = available_capacity(gen, scenario)
        upper[layout.index["pg"][g]] = cap
        lower[layout.index["pg"][g]] = np.minimum(gen.p_min, cap)
        lower[layout.index["qg"][g]] = gen.q_min
        upper[layout.index["qg"][g]] = gen.q_max
    for i, bus in enumerate(case.buses):
        lower[layout.index["vm"][i]] = bus.voltage_min
        upper[layout.index["vm"][i]] = bus.voltage_max
        lower[layout.index["va"][i]] = bus.angle_min
        upper[layout.index["va"][i]] = bus.angle_max
    ref = case.bus_index[default_slack_bus(case) if reference_bus is None else reference_bus]
    lower[layout.index["va"][ref]] = 0.0
    upper[layout.index["va"][ref]] = 0.0
    capacity = np.array([br.apparent_capacity for br in case.branches])[:, None]
    for name in ("af", "ar", "cf", "cr"):
        lower[layout.index[name]] = 0.0
        upper[layout.index[name]] = np.broadcast_to(capacity, (layout.n_branch, T))
    lower[layout.index["w"]] = 0.0
    upper[layout.index["w"]] = float(np.max(case.emission_factors, initial=0.0))
    for pos, load_id in enumerate(layout.flexible_ids):
        blocks = kkt[load_id]
        horizon = T
        lower[layout.index["pl"][pos]] = -blocks.rhs[horizon: 2 * horizon]
        upper[layout.index["pl"][pos]] = blocks.rhs[:horizon]
        lower[layout.index[f"lam:{load_id}"]] = 0.0
        lower[layout.index[f"slack:{load_id}"]] = 0.0
    return lower, upper


def initial_point(case: NetworkCase, scenario: Scenario, layout: DispatchLayout, lower: np.ndarray,
                  upper: np.ndarray, profiles: Mapping[str, np.ndarray], kkt: Mapping[str, KktBlocks]) -> np.ndarray:
    """Flat voltages, generation shared in proportion to headroom, mixed system intensity"""
    T = scenario.horizon
    x = np.zeros(layout.n_vars)
    demand_p, demand_q = fixed_demand(case, scenario, profiles, include_flexible=True)
    cap = upper[layout.index["pg"]]
    share = cap / np.maximum(cap.sum(axis=0, keepdims=True), 1e-12)
    pg = np.clip(share * demand_p.sum(axis=0), lower[layout.index["pg"]], cap)
    x[layout.index["pg"]] = pg
    q_range = upper[layout.index["qg"]] - lower[layout.index["qg"]]
    q_share = q_range / np.maximum(q_range.sum(axis=0, keepdims=True), 1e-12)
    x[layout.index["qg"]] = np.clip(q_share * demand_q.sum(axis=0), lower[layout.index["qg"]], upper[layout.index["qg"]])
    x[layout.index["vm"]] = 1.0
    mixed = (case.emission_factors[:, None] * pg).sum(axis=0) / np.maximum(pg.sum(axis=0), 1e-12)
    x[layout.index["w"]] = np.broadcast_to(mixed, (layout.n_bus, T))
    for pos, load_id in enumerate(layout.flexible_ids):
        blocks = kkt[load_id]
        series = profiles[load_id]
        x[layout.index["pl"][pos]] = series
        x[layout.index[f"slack:{load_id}"]] = np.maximum(blocks.rhs - blocks.matrix @ series, 0.0)
    return np.clip(x, lower, upper)


def reference_cost(case: NetworkCase, scenario: Scenario) -> float:
    """Cost of running every unit at its available maximum; used to scale the objective to order one"""
    total = 0.0
    for gen in case.generators:
        cap = available_capacity(gen, scenario)
        total += scenario.dt_hours * float(np.sum(gen.cost_quadratic * cap ** 2 + gen.cost_linear * cap + gen.cost_constant))
    return max(total, 1.0)


def assemble_cpd(
    case: NetworkCase,
    scenario: Scenario,
    mode: str = FIXED_LOADS,
    load_profiles: Optional[Mapping[str, Any]] = None,
    warm_start: Optional[np.ndarray] = None,
    objective_scale: Optional[float] = None,
) -> DispatchProblem:
    """
    Build the dispatch NLP. In fixed_loads mode every flexible load follows its given
    profile; in kkt_embedded mode flexible loads, their multipliers and row slacks
    become variables tied together by the users' optimality conditions.
    """
    if mode not in MODES:
        raise DispatchModelError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == FIXED_LOADS:
        if load_profiles is None and case.flexible_loads:
            raise DispatchModelError("fixed_loads mode requires load_profiles for every flexible load")
        profiles = _check_profiles(case, scenario, load_profiles or {})
    else:
        given = dict(load_profiles or {})
        for load in case.flexible_loads:
            given.setdefault(load.id, nominal_profile(load, scenario))
        profiles = _check_profiles(case, scenario, given)

    embedded = mode == KKT_EMBEDDED and bool(case.flexible_loads)
    kkt: Dict[str, KktBlocks] = {}
    if embedded:
        for load in case.flexible_loads:
            kkt[load.id] = kkt_blocks(build_instance(load, scenario, np.zeros(scenario.horizon)))
        layout = DispatchLayout(case, scenario.horizon, tuple(kkt), {k: v.rows for k, v in kkt.items()})
    else:
        layout = DispatchLayout(case, scenario.horizon)

    fixed_p, fixed_q = fixed_demand(case, scenario, profiles, include_flexible=not embedded)
    scale = objective_scale if objective_scale is not None else 1.0 / reference_cost(case, scenario)
    evaluator = _DispatchEvaluator(case, scenario, layout, fixed_p, fixed_q, kkt, scale)
    lower, upper = variable_bounds(case, scenario, layout, kkt)
    if warm_start is not None:
        x0 = np.asarray(warm_start, dtype=float)
        if x0.shape != (layout.n_vars,):
            raise DispatchModelError(f"warm start has {x0.size} entries, problem has {layout.n_vars} variables")
        x0 = np.clip(x0, lower, upper)
    else:
        x0 = initial_point(case, scenario, layout, lower, upper, profiles, kkt)

    logger.debug(f"Assembled {mode} dispatch: {layout.counts}")
    return DispatchProblem(
        n=layout.n_vars,
        objective=evaluator.objective,
        x0=x0,
        lower=lower,
        upper=upper,
        equality=evaluator.equality,
        inequality=evaluator.inequality,
        complementarity_pairs=layout.pairs,
        equality_families=dict(layout.eq_families),
        inequality_families=dict(layout.ineq_families),
        pair_families=dict(layout.pair_families),
        name=f"cpd-{mode}",
        layout=layout,
        mode=mode,
        objective_scale=scale,
        load_profiles=profiles,
        kkt=kkt,
    )


def create_dispatch_layout(case: NetworkCase, scenario: Scenario, mode: str = FIXED_LOADS) -> DispatchLayout:
    """Factory function for a layout without assembling the evaluators"""
    if mode == KKT_EMBEDDED and case.flexible_loads:
        rows = {load.id: kkt_blocks(build_instance(load, scenario, np.zeros(scenario.horizon))).rows
                for load in case.flexible_loads}
        return DispatchLayout(case, scenario.horizon, tuple(rows), rows)
    return DispatchLayout(case, scenario.horizon)
