"""Mixed-integer dispatch engine shared by agent scheduling and redispatch.

Builds the unit-commitment program once per call and hands it to HiGHS
(scipy.optimize.milp). Units carry a per-unit operating band scaled by a
commitment binary, start/stop indicator logic, ramp limits with dedicated
start-up/shut-down rates, minimum up/down times, optional hard must-run
floors, optional equal-dispatch coupling over a window (block orders), and
an optional bound on the gap between two unit groups per period (the
up/down equilibrium threshold of redispatch clearing).

``brute_force_uc`` re-solves small instances by exhaustive enumeration of
commitment patterns with an exact continuous dispatch per pattern; it is
the independent oracle for the engine and shares no formulation code with
``solve_uc``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .clock import MTU_HOURS
from .errors import InfeasibleProblemError

#: feasibility tolerance in MW / EUR
TOL = 1e-6
#: sequential lexicographic tie-breaking is applied up to this binary count
TIE_BREAK_MAX_BINARIES = 32
#: enumeration guard for the brute-force oracle
BRUTE_FORCE_MAX_BITS = 16


def _series(value, periods: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(periods, float(arr))
    if arr.shape != (periods,):
        raise ValueError(f"series of length {arr.shape} does not match horizon {periods}")
    return arr.copy()


def _initial_dispatch(unit: "UnitSpec", committable: bool) -> float | None:
    """Initial dispatch consistent with the initial commitment state."""
    if unit.initial_dispatch is None:
        return None
    if committable and unit.initial_status == 0:
        return 0.0
    return float(unit.initial_dispatch)


@dataclass
class UnitSpec:
    """One dispatchable unit (a generator asset or an order emulated as one)."""

    name: str
    node: str
    pnom: float  # MW
    srmc: float  # EUR/MWh
    p_min_pu: float | np.ndarray = 0.0
    p_max_pu: float | np.ndarray = 1.0
    committable: bool | None = None  # None = derive from the other fields
    start_up_cost: float = 0.0
    shut_down_cost: float = 0.0
    ramp_up: float | None = None  # p.u. of pnom per MTU
    ramp_down: float | None = None
    ramp_start_up: float | None = None  # defaults to ramp_up
    ramp_shut_down: float | None = None  # defaults to ramp_down
    min_up_time: int = 1
    min_down_time: int = 1
    initial_status: int = 1
    initial_dispatch: float | None = None  # MW; None skips the first-step ramp
    must_run: np.ndarray | None = None  # MW floor enforced regardless of commitment
    flat_windows: tuple = ()  # ((start, end) inclusive) equal-dispatch couplings

    def needs_binary(self, periods: int) -> bool:
        if self.committable is not None:
            return self.committable
        pmin = _series(self.p_min_pu, periods)
        return bool(
            (pmin > 0).any()
            or self.start_up_cost > 0
            or self.shut_down_cost > 0
            or self.min_up_time > 1
            or self.min_down_time > 1
        )


@dataclass
class UCProblem:
    periods: int
    units: list[UnitSpec]
    loads: dict[str, np.ndarray]  # node -> MW per period
    shortfall_penalty: float = 500.0  # EUR/MWh
    surplus_penalty: float = 500.0
    allow_slack: bool = True
    # |sum(up units) - sum(down units)| <= threshold per period; None = off
    balance_threshold: float | None = None
    up_units: tuple = ()
    down_units: tuple = ()

    def nodes(self) -> list[str]:
        names = set(self.loads)
        names.update(u.node for u in self.units)
        return sorted(names)


@dataclass
class UCSolution:
    dispatch: dict[str, np.ndarray]  # unit -> MW per period
    commitment: dict[str, np.ndarray]  # unit -> {0,1} per period
    objective: float  # EUR
    shortfall: dict[str, np.ndarray]  # node -> MW unserved
    surplus: dict[str, np.ndarray]  # node -> MW excess
    start: dict[str, np.ndarray] = field(default_factory=dict)
    stop: dict[str, np.ndarray] = field(default_factory=dict)

    def total_shortfall(self) -> float:
        return float(sum(a.sum() for a in self.shortfall.values()))

    def total_surplus(self) -> float:
        return float(sum(a.sum() for a in self.surplus.values()))


class _Assembly:
    """Index bookkeeping and constraint rows for one UC program."""

    def __init__(self, problem: UCProblem):
        self.p = problem
        T = problem.periods
        self.T = T
        self.nodes = problem.nodes()
        self.committable = [u.needs_binary(T) for u in problem.units]
        n_units = len(problem.units)
        n_comm = sum(self.committable)

        self.g0 = 0  # dispatch block
        self.u0 = n_units * T  # commitment block (committable units only)
        self.v0 = self.u0 + n_comm * T  # start block
        self.w0 = self.v0 + n_comm * T  # stop block
        self.s0 = self.w0 + n_comm * T  # shortfall block
        self.e0 = self.s0 + len(self.nodes) * T  # surplus block
        self.n_var = self.e0 + len(self.nodes) * T

        self._comm_rank = {}
        rank = 0
        for i, c in enumerate(self.committable):
            if c:
                self._comm_rank[i] = rank
                rank += 1

        self.rows = []  # (coeff dict, lb, ub)

    def g(self, i, t):
        return self.g0 + i * self.T + t

    def u(self, i, t):
        return self.u0 + self._comm_rank[i] * self.T + t

    def v(self, i, t):
        return self.v0 + self._comm_rank[i] * self.T + t

    def w(self, i, t):
        return self.w0 + self._comm_rank[i] * self.T + t

    def short(self, n, t):
        return self.s0 + n * self.T + t

    def surp(self, n, t):
        return self.e0 + n * self.T + t

    def add(self, coeffs: dict, lb: float, ub: float):
        self.rows.append((coeffs, lb, ub))

    def constraint_matrix(self):
        data, ri, ci, lbs, ubs = [], [], [], [], []
        for r, (coeffs, lb, ub) in enumerate(self.rows):
            for col, val in coeffs.items():
                ri.append(r)
                ci.append(col)
                data.append(val)
            lbs.append(lb)
            ubs.append(ub)
        A = sparse.csr_matrix((data, (ri, ci)), shape=(len(self.rows), self.n_var))
        return A, np.array(lbs), np.array(ubs)


def _build(problem: UCProblem) -> tuple[_Assembly, np.ndarray, Bounds, np.ndarray]:
    asm = _Assembly(problem)
    T = asm.T
    inf = np.inf
    lb = np.zeros(asm.n_var)
    ub = np.full(asm.n_var, inf)
    cost = np.zeros(asm.n_var)
    integrality = np.zeros(asm.n_var)

    for i, unit in enumerate(problem.units):
        pmin = _series(unit.p_min_pu, T) * unit.pnom
        pmax = _series(unit.p_max_pu, T) * unit.pnom
        mr = unit.must_run if unit.must_run is not None else np.zeros(T)
        comm = asm.committable[i]
        ru = unit.ramp_up
        rd = unit.ramp_down
        rsu = unit.ramp_start_up if unit.ramp_start_up is not None else ru
        rsd = unit.ramp_shut_down if unit.ramp_shut_down is not None else rd
        init = int(unit.initial_status)
        g_init = _initial_dispatch(unit, comm)

        for t in range(T):
            gi = asm.g(i, t)
            cost[gi] = unit.srmc * MTU_HOURS
            ub[gi] = pmax[t]
            lb[gi] = max(mr[t], 0.0 if comm else pmin[t])

        if comm:
            for t in range(T):
                ui, vi, wi = asm.u(i, t), asm.v(i, t), asm.w(i, t)
                ub[ui] = 1.0
                ub[vi] = 1.0
                ub[wi] = 1.0
                integrality[ui] = 1
                cost[vi] = unit.start_up_cost
                cost[wi] = unit.shut_down_cost
                # operating band scaled by commitment
                asm.add({asm.g(i, t): 1.0, ui: -pmax[t]}, -inf, 0.0)
                if pmin[t] > 0:
                    asm.add({asm.g(i, t): 1.0, ui: -pmin[t]}, 0.0, inf)
                # start/stop logic: v - w = u_t - u_{t-1}
                if t > 0:
                    asm.add({vi: 1.0, wi: -1.0, ui: -1.0, asm.u(i, t - 1): 1.0}, 0.0, 0.0)
                    # forbid simultaneous fake start/stop pairs, which would
                    # otherwise relax the ramp rows for zero-cost units
                    asm.add({vi: 1.0, ui: -1.0}, -inf, 0.0)
                    asm.add({vi: 1.0, asm.u(i, t - 1): 1.0}, -inf, 1.0)
                    asm.add({wi: 1.0, ui: 1.0}, -inf, 1.0)
                    asm.add({wi: 1.0, asm.u(i, t - 1): -1.0}, -inf, 0.0)
                else:
                    asm.add({vi: 1.0, wi: -1.0, ui: -1.0}, -float(init), -float(init))
                    ub[vi] = 1.0 - init
                    ub[wi] = float(init)
                    asm.add({vi: 1.0, ui: -1.0}, -inf, 0.0)
                    asm.add({wi: 1.0, ui: 1.0}, -inf, 1.0)
            for t in range(T):
                if unit.min_up_time > 1:
                    coeffs = {
                        asm.v(i, tau): 1.0
                        for tau in range(max(0, t - unit.min_up_time + 1), t + 1)
                    }
                    coeffs[asm.u(i, t)] = -1.0
                    asm.add(coeffs, -inf, 0.0)
                if unit.min_down_time > 1:
                    coeffs = {
                        asm.w(i, tau): 1.0
                        for tau in range(max(0, t - unit.min_down_time + 1), t + 1)
                    }
                    coeffs[asm.u(i, t)] = 1.0
                    asm.add(coeffs, -inf, 1.0)

        if ru is not None:
            for t in range(T):
                if t == 0:
                    if g_init is None:
                        continue
                    if comm:
                        asm.add(
                            {asm.g(i, 0): 1.0, asm.v(i, 0): -rsu * unit.pnom},
                            -inf,
                            g_init + ru * unit.pnom * init,
                        )
                    else:
                        asm.add({asm.g(i, 0): 1.0}, -inf, g_init + ru * unit.pnom)
                else:
                    coeffs = {asm.g(i, t): 1.0, asm.g(i, t - 1): -1.0}
                    if comm:
                        coeffs[asm.u(i, t - 1)] = -ru * unit.pnom
                        coeffs[asm.v(i, t)] = -rsu * unit.pnom
                        asm.add(coeffs, -inf, 0.0)
                    else:
                        asm.add(coeffs, -inf, ru * unit.pnom)
        if rd is not None:
            for t in range(T):
                if t == 0:
                    if g_init is None:
                        continue
                    if comm:
                        asm.add(
                            {
                                asm.g(i, 0): -1.0,
                                asm.u(i, 0): -rd * unit.pnom,
                                asm.w(i, 0): -rsd * unit.pnom,
                            },
                            -inf,
                            -g_init,
                        )
                    else:
                        asm.add({asm.g(i, 0): -1.0}, -inf, rd * unit.pnom - g_init)
                else:
                    coeffs = {asm.g(i, t - 1): 1.0, asm.g(i, t): -1.0}
                    if comm:
                        coeffs[asm.u(i, t)] = -rd * unit.pnom
                        coeffs[asm.w(i, t)] = -rsd * unit.pnom
                        asm.add(coeffs, -inf, 0.0)
                    else:
                        asm.add(coeffs, -inf, rd * unit.pnom)

        for (a, b) in unit.flat_windows:
            for t in range(a + 1, b + 1):
                asm.add({asm.g(i, t): 1.0, asm.g(i, t - 1): -1.0}, 0.0, 0.0)

    # nodal balance with slack
    for n, node in enumerate(asm.nodes):
        load = problem.loads.get(node)
        load = np.zeros(T) if load is None else _series(load, T)
        for t in range(T):
            coeffs = {asm.short(n, t): 1.0, asm.surp(n, t): -1.0}
            for i, unit in enumerate(problem.units):
                if unit.node == node:
                    coeffs[asm.g(i, t)] = 1.0
            asm.add(coeffs, load[t], load[t])
            cost[asm.short(n, t)] = problem.shortfall_penalty * MTU_HOURS
            cost[asm.surp(n, t)] = problem.surplus_penalty * MTU_HOURS
            if not problem.allow_slack:
                ub[asm.short(n, t)] = 0.0
                ub[asm.surp(n, t)] = 0.0

    if problem.balance_threshold is not None and np.isfinite(problem.balance_threshold):
        up = {u.name for u in problem.units} & set(problem.up_units)
        down = {u.name for u in problem.units} & set(problem.down_units)
        th = float(problem.balance_threshold)
        for t in range(T):
            coeffs = {}
            for i, unit in enumerate(problem.units):
                if unit.name in up:
                    coeffs[asm.g(i, t)] = 1.0
                elif unit.name in down:
                    coeffs[asm.g(i, t)] = -1.0
            if coeffs:
                asm.add(coeffs, -th, th)

    return asm, cost, Bounds(lb, ub), integrality


def _extract(asm: _Assembly, x: np.ndarray, objective: float) -> UCSolution:
    T = asm.T
    dispatch, commitment, start, stop = {}, {}, {}, {}
    for i, unit in enumerate(asm.p.units):
        g = np.array([x[asm.g(i, t)] for t in range(T)])
        g[np.abs(g) < TOL] = 0.0
        dispatch[unit.name] = g
        if asm.committable[i]:
            commitment[unit.name] = np.array([int(round(x[asm.u(i, t)])) for t in range(T)])
            start[unit.name] = np.array([x[asm.v(i, t)] for t in range(T)])
            stop[unit.name] = np.array([x[asm.w(i, t)] for t in range(T)])
        else:
            commitment[unit.name] = (g > TOL).astype(int)
    shortfall, surplus = {}, {}
    for n, node in enumerate(asm.nodes):
        sh = np.array([x[asm.short(n, t)] for t in range(T)])
        su = np.array([x[asm.surp(n, t)] for t in range(T)])
        sh[sh < TOL] = 0.0
        su[su < TOL] = 0.0
        shortfall[node] = sh
        surplus[node] = su
    return UCSolution(dispatch, commitment, float(objective), shortfall, surplus, start, stop)


def _diagnose_infeasible(problem: UCProblem) -> str:
    if not problem.allow_slack:
        relaxed = UCProblem(
            periods=problem.periods,
            units=problem.units,
            loads=problem.loads,
            shortfall_penalty=problem.shortfall_penalty,
            surplus_penalty=problem.surplus_penalty,
            allow_slack=True,
            balance_threshold=problem.balance_threshold,
            up_units=problem.up_units,
            down_units=problem.down_units,
        )
        asm, cost, bounds, integrality = _build(relaxed)
        A, lo, hi = asm.constraint_matrix()
        res = milp(
            cost,
            constraints=LinearConstraint(A, lo, hi),
            bounds=bounds,
            integrality=integrality,
        )
        if res.status == 0:
            return "nodal balance"
    return "unit band/ramp/min-up-down"


def solve_uc(problem: UCProblem, tie_break: bool = True) -> UCSolution:
    """Cost-minimal unit commitment and dispatch, exact at desk scale.

    Among cost-equal optima the lexicographically smallest commitment
    vector (unit-major, then time) is returned, provided the instance has
    at most TIE_BREAK_MAX_BINARIES binaries; larger instances return the
    solver's deterministic single solution.
    """
    asm, cost, bounds, integrality = _build(problem)
    A, lo, hi = asm.constraint_matrix()
    constraint = LinearConstraint(A, lo, hi)
    res = milp(cost, constraints=constraint, bounds=bounds, integrality=integrality)
    if res.status != 0:
        raise InfeasibleProblemError(
            f"unit commitment infeasible: {res.message}",
            constraint_class=_diagnose_infeasible(problem),
        )

    n_binaries = int(integrality.sum())
    if tie_break and 0 < n_binaries <= TIE_BREAK_MAX_BINARIES:
        best = res.fun
        tol = TOL * (1.0 + abs(best))
        lb = bounds.lb.copy()
        ub = bounds.ub.copy()
        for i in range(len(problem.units)):
            if not asm.committable[i]:
                continue
            for t in range(problem.periods):
                col = asm.u(i, t)
                if ub[col] <= lb[col]:  # already pinned
                    continue
                ub[col] = 0.0
                trial = milp(
                    cost,
                    constraints=constraint,
                    bounds=Bounds(lb, ub),
                    integrality=integrality,
                )
                if trial.status == 0 and trial.fun <= best + tol:
                    res = trial
                else:
                    ub[col] = 1.0
                    lb[col] = 1.0
                    trial = milp(
                        cost,
                        constraints=constraint,
                        bounds=Bounds(lb, ub),
                        integrality=integrality,
                    )
                    # fixing to the incumbent value stays feasible
                    if trial.status == 0:
                        res = trial

    return _extract(asm, res.x, res.fun)


def verify_solution(problem: UCProblem, solution: UCSolution, tol: float = TOL) -> list[str]:
    """Post-hoc constraint audit; returns human-readable violations."""
    T = problem.periods
    bad = []
    for unit in problem.units:
        committable = unit.needs_binary(T)
        g = solution.dispatch[unit.name]
        u = solution.commitment[unit.name]
        pmin = _series(unit.p_min_pu, T) * unit.pnom
        pmax = _series(unit.p_max_pu, T) * unit.pnom
        for t in range(T):
            lo = pmin[t] * u[t] if committable else pmin[t]
            hi = pmax[t] * u[t] if committable else pmax[t]
            if g[t] < lo - tol or g[t] > hi + tol:
                bad.append(f"band {unit.name}@{t}: {g[t]:.8f} outside [{lo}, {hi}]")
            if unit.must_run is not None and g[t] < unit.must_run[t] - tol:
                bad.append(f"must-run {unit.name}@{t}: {g[t]:.8f} < {unit.must_run[t]}")
        ru = unit.ramp_up
        rd = unit.ramp_down
        rsu = unit.ramp_start_up if unit.ramp_start_up is not None else ru
        rsd = unit.ramp_shut_down if unit.ramp_shut_down is not None else rd
        prev_g = _initial_dispatch(unit, committable)
        prev_u = unit.initial_status
        for t in range(T):
            if prev_g is not None:
                delta = g[t] - prev_g
                started = committable and u[t] > prev_u
                stopped = committable and u[t] < prev_u
                if ru is not None:
                    limit = (rsu if started else ru) * unit.pnom
                    if delta > limit + tol:
                        bad.append(f"ramp-up {unit.name}@{t}: {delta:.8f} > {limit}")
                if rd is not None:
                    limit = (rsd if stopped else rd) * unit.pnom
                    if -delta > limit + tol:
                        bad.append(f"ramp-down {unit.name}@{t}: {-delta:.8f} > {limit}")
            prev_g = g[t]
            prev_u = u[t]
        if committable:
            for a, b, kind in _runs(u, unit.initial_status):
                if kind == 1 and unit.min_up_time > 1:
                    real_start = a > 0 or unit.initial_status == 0
                    if real_start and (b - a + 1) < unit.min_up_time and b != T - 1:
                        bad.append(f"min-up {unit.name}: run [{a},{b}]")
                if kind == 0 and unit.min_down_time > 1:
                    real_stop = a > 0 or unit.initial_status == 1
                    if real_stop and (b - a + 1) < unit.min_down_time and b != T - 1:
                        bad.append(f"min-down {unit.name}: run [{a},{b}]")
        for (a, b) in unit.flat_windows:
            window = g[a : b + 1]
            if window.size and (np.abs(window - window[0]) > tol).any():
                bad.append(f"block flatness {unit.name}: window [{a},{b}] not constant")
    for node in problem.nodes():
        load = problem.loads.get(node, np.zeros(T))
        total = np.zeros(T)
        for unit in problem.units:
            if unit.node == node:
                total = total + solution.dispatch[unit.name]
        gap = total + solution.shortfall[node] - solution.surplus[node] - _series(load, T)
        if (np.abs(gap) > tol).any():
            bad.append(f"balance {node}: residual {np.abs(gap).max():.8f}")
        if not problem.allow_slack:
            if solution.shortfall[node].any() or solution.surplus[node].any():
                bad.append(f"slack used at {node} in slack-free mode")
    if problem.balance_threshold is not None and np.isfinite(problem.balance_threshold):
        up = sum(
            (solution.dispatch[u.name] for u in problem.units if u.name in set(problem.up_units)),
            np.zeros(T),
        )
        down = sum(
            (solution.dispatch[u.name] for u in problem.units if u.name in set(problem.down_units)),
            np.zeros(T),
        )
        if (np.abs(up - down) > problem.balance_threshold + tol).any():
            bad.append("equilibrium threshold exceeded")
    return bad


def _runs(u, initial_status):
    """Maximal constant runs of a 0/1 vector as (first, last, value)."""
    runs = []
    a = 0
    for t in range(1, len(u)):
        if u[t] != u[a]:
            runs.append((a, t - 1, int(u[a])))
            a = t
    if len(u):
        runs.append((a, len(u) - 1, int(u[a])))
    return runs


def _pattern_feasible(unit: UnitSpec, u: np.ndarray, T: int) -> bool:
    pmin = _series(unit.p_min_pu, T) * unit.pnom
    pmax = _series(unit.p_max_pu, T) * unit.pnom
    if ((u == 1) & (pmin > pmax)).any():
        return False
    for a, b, kind in _runs(u, unit.initial_status):
        if kind == 1 and unit.min_up_time > 1:
            real_start = a > 0 or unit.initial_status == 0
            if real_start and (b - a + 1) < unit.min_up_time and b != T - 1:
                return False
        if kind == 0 and unit.min_down_time > 1:
            real_stop = a > 0 or unit.initial_status == 1
            if real_stop and (b - a + 1) < unit.min_down_time and b != T - 1:
                return False
    return True


def _pattern_fixed_cost(unit: UnitSpec, u: np.ndarray) -> float:
    cost = 0.0
    prev = unit.initial_status
    for t in range(len(u)):
        if u[t] > prev:
            cost += unit.start_up_cost
        elif u[t] < prev:
            cost += unit.shut_down_cost
        prev = u[t]
    return cost


def _dispatch_lp(problem: UCProblem, patterns: dict[str, np.ndarray]):
    """Exact continuous dispatch for fixed commitments, dense formulation.

    Independent of the assembly used by solve_uc: plain per-column lists,
    equality/inequality split, no commitment variables.
    """
    T = problem.periods
    nodes = problem.nodes()
    n_units = len(problem.units)
    n_nodes = len(nodes)
    n_var = n_units * T + 2 * n_nodes * T

    def gcol(i, t):
        return i * T + t

    def scol(n, t):
        return n_units * T + n * T + t

    def ecol(n, t):
        return n_units * T + n_nodes * T + n * T + t

    c = np.zeros(n_var)
    lo = np.zeros(n_var)
    hi = np.full(n_var, np.inf)
    a_eq, b_eq, a_ub, b_ub = [], [], [], []

    for i, unit in enumerate(problem.units):
        pmin = _series(unit.p_min_pu, T) * unit.pnom
        pmax = _series(unit.p_max_pu, T) * unit.pnom
        committable = unit.needs_binary(T)
        u = patterns.get(unit.name, np.ones(T, dtype=int))
        mr = unit.must_run if unit.must_run is not None else np.zeros(T)
        for t in range(T):
            col = gcol(i, t)
            c[col] = unit.srmc * MTU_HOURS
            if committable:
                lo[col] = max(pmin[t] * u[t], mr[t])
                hi[col] = pmax[t] * u[t]
            else:
                lo[col] = max(pmin[t], mr[t])
                hi[col] = pmax[t]
            if lo[col] > hi[col] + TOL:
                return None, None
        ru = unit.ramp_up
        rd = unit.ramp_down
        rsu = unit.ramp_start_up if unit.ramp_start_up is not None else ru
        rsd = unit.ramp_shut_down if unit.ramp_shut_down is not None else rd
        prev_u = unit.initial_status if committable else 1
        g_init = _initial_dispatch(unit, committable)
        for t in range(T):
            started = committable and u[t] > prev_u
            stopped = committable and u[t] < prev_u
            if t == 0:
                if g_init is not None:
                    if ru is not None:
                        row = np.zeros(n_var)
                        row[gcol(i, 0)] = 1.0
                        a_ub.append(row)
                        b_ub.append(g_init + (rsu if started else ru) * unit.pnom)
                    if rd is not None:
                        row = np.zeros(n_var)
                        row[gcol(i, 0)] = -1.0
                        a_ub.append(row)
                        b_ub.append((rsd if stopped else rd) * unit.pnom - g_init)
            else:
                if ru is not None:
                    row = np.zeros(n_var)
                    row[gcol(i, t)] = 1.0
                    row[gcol(i, t - 1)] = -1.0
                    a_ub.append(row)
                    b_ub.append((rsu if started else ru) * unit.pnom)
                if rd is not None:
                    row = np.zeros(n_var)
                    row[gcol(i, t - 1)] = 1.0
                    row[gcol(i, t)] = -1.0
                    a_ub.append(row)
                    b_ub.append((rsd if stopped else rd) * unit.pnom)
            if committable:
                prev_u = u[t]
        for (a, b) in unit.flat_windows:
            for t in range(a + 1, b + 1):
                row = np.zeros(n_var)
                row[gcol(i, t)] = 1.0
                row[gcol(i, t - 1)] = -1.0
                a_eq.append(row)
                b_eq.append(0.0)

    for n, node in enumerate(nodes):
        load = problem.loads.get(node, np.zeros(T))
        load = _series(load, T)
        for t in range(T):
            row = np.zeros(n_var)
            for i, unit in enumerate(problem.units):
                if unit.node == node:
                    row[gcol(i, t)] = 1.0
            row[scol(n, t)] = 1.0
            row[ecol(n, t)] = -1.0
            a_eq.append(row)
            b_eq.append(load[t])
            c[scol(n, t)] = problem.shortfall_penalty * MTU_HOURS
            c[ecol(n, t)] = problem.surplus_penalty * MTU_HOURS
            if not problem.allow_slack:
                hi[scol(n, t)] = 0.0
                hi[ecol(n, t)] = 0.0

    if problem.balance_threshold is not None and np.isfinite(problem.balance_threshold):
        th = float(problem.balance_threshold)
        up = set(problem.up_units)
        down = set(problem.down_units)
        for t in range(T):
            row = np.zeros(n_var)
            used = False
            for i, unit in enumerate(problem.units):
                if unit.name in up:
                    row[gcol(i, t)] = 1.0
                    used = True
                elif unit.name in down:
                    row[gcol(i, t)] = -1.0
                    used = True
            if used:
                a_ub.append(row.copy())
                b_ub.append(th)
                a_ub.append(-row)
                b_ub.append(th)

    res = linprog(
        c,
        A_ub=np.array(a_ub) if a_ub else None,
        b_ub=np.array(b_ub) if b_ub else None,
        A_eq=np.array(a_eq) if a_eq else None,
        b_eq=np.array(b_eq) if b_eq else None,
        bounds=list(zip(lo, hi)),
        method="highs",
    )
    if res.status != 0:
        return None, None
    dispatch = {
        unit.name: np.array([res.x[gcol(i, t)] for t in range(T)])
        for i, unit in enumerate(problem.units)
    }
    slack = {}
    for n, node in enumerate(nodes):
        slack[node] = (
            np.array([res.x[scol(n, t)] for t in range(T)]),
            np.array([res.x[ecol(n, t)] for t in range(T)]),
        )
    return res.fun, (dispatch, slack)


def brute_force_uc(problem: UCProblem, max_bits: int = BRUTE_FORCE_MAX_BITS) -> UCSolution:
    """Oracle: enumerate every commitment pattern, dispatch each exactly.

    Patterns are visited in lexicographically ascending order and only a
    strictly better objective replaces the incumbent, so ties resolve to
    the smallest commitment vector, matching solve_uc's tie-breaking.
    """
    T = problem.periods
    comm_units = [u for u in problem.units if u.needs_binary(T)]
    bits = len(comm_units) * T
    if bits > max_bits:
        raise ValueError(f"{bits} binaries exceed the enumeration limit {max_bits}")

    best_objective = None
    best = None
    for flat in itertools.product((0, 1), repeat=bits):
        patterns = {}
        ok = True
        for k, unit in enumerate(comm_units):
            u = np.array(flat[k * T : (k + 1) * T], dtype=int)
            if not _pattern_feasible(unit, u, T):
                ok = False
                break
            patterns[unit.name] = u
        if not ok:
            continue
        fixed = sum(_pattern_fixed_cost(u, patterns[u.name]) for u in comm_units)
        var_cost, detail = _dispatch_lp(problem, patterns)
        if var_cost is None:
            continue
        total = fixed + var_cost
        if best_objective is None or total < best_objective - TOL:
            best_objective = total
            best = (patterns, detail)
    if best is None:
        raise InfeasibleProblemError("no feasible commitment pattern found")

    patterns, (dispatch, slack) = best
    commitment = {}
    for unit in problem.units:
        if unit.name in patterns:
            commitment[unit.name] = patterns[unit.name]
        else:
            commitment[unit.name] = (dispatch[unit.name] > TOL).astype(int)
    shortfall = {node: s for node, (s, _) in slack.items()}
    surplus = {node: e for node, (_, e) in slack.items()}
    return UCSolution(dispatch, commitment, float(best_objective), shortfall, surplus)
