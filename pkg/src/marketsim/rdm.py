"""Redispatch market: area-directed demand cleared against supply orders.

The grid operator demands a MW shift from a down-area to an up-area over a
delivery window. Each supply order becomes a generator in an isolated
per-area, per-direction node; all-or-none orders get a unit-minimum
operating band, block orders a minimum up time equal to their duration
plus an equal-quantity coupling. Shortfall slack captures
under-procurement and surplus slack over-procurement. The under-penalty
is far above the over-penalty: when all-or-none granularity forces a
choice, the operator over-procures rather than leave demand unmet.
Settlement is pay-as-bid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clock import TimeStamp, mtu_range
from .errors import OrderValidationError
from .optimize import UCProblem, UCSolution, UnitSpec, solve_uc
from .orders import RDM, SELL, Order, Transaction

#: EUR/MWh penalties on procurement slack
UNDER_PROCUREMENT_PENALTY = 10_000.0
OVER_PROCUREMENT_PENALTY = 1_000.0

#: acquisition-method vocabulary mapped to the equilibrium threshold in MW
THRESHOLD_BY_METHOD = {
    "cont_RDM_thinf": None,
    "cont_RDM_th0": 0.0,
    "cont_RDM_th5": 5.0,
    "cont_RDM_th50": 50.0,
    # spelling used by the older design-variable table
    "cont_RED_thinf": None,
    "cont_RED_th0": 0.0,
    "cont_RED_th5": 5.0,
    "cont_RED_th50": 50.0,
}

UP = "up"
DOWN = "down"


def _node(area: str, side: str) -> str:
    return f"{area}:{side}"


@dataclass
class RedispatchDemand:
    """Requested MW shift from down_area to up_area over a delivery window.

    ``up_by_mtu``/``down_by_mtu`` override the flat quantity per side once
    parts of the window have been procured (quantity-decremented
    re-posting after partial clearings).
    """

    demand_id: str
    quantity: float  # MW
    down_area: str
    up_area: str
    window_start: TimeStamp
    window_end: TimeStamp
    up_by_mtu: dict | None = None  # TimeStamp -> MW
    down_by_mtu: dict | None = None

    def __post_init__(self):
        if self.quantity <= 0:
            raise ValueError("redispatch demand quantity must be positive")
        if self.down_area == self.up_area:
            raise ValueError("down_area and up_area must differ")
        if self.window_end < self.window_start:
            raise ValueError("demand window ends before it starts")

    def demand_at(self, ts: TimeStamp, side: str) -> float:
        override = self.up_by_mtu if side == UP else self.down_by_mtu
        if override is not None:
            return override.get(ts, 0.0)
        if self.window_start <= ts <= self.window_end:
            return self.quantity
        return 0.0

    def mtus(self) -> list[TimeStamp]:
        return [
            ts
            for ts in mtu_range(self.window_start, self.window_end)
            if self.demand_at(ts, UP) > 0 or self.demand_at(ts, DOWN) > 0
        ]


@dataclass
class RdmClearingResult:
    horizon: list[TimeStamp]
    cleared: dict[str, np.ndarray]  # order_id -> MW per horizon MTU
    under_procurement: dict[str, np.ndarray]  # node -> MW shortfall
    over_procurement: dict[str, np.ndarray]  # node -> MW surplus
    up_cleared: np.ndarray = field(default=None)  # type: ignore[assignment]
    down_cleared: np.ndarray = field(default=None)  # type: ignore[assignment]

    @property
    def induced_imbalance(self) -> np.ndarray:
        """MW the operator injects per MTU: cleared up minus cleared down."""
        return self.up_cleared - self.down_cleared

    def total_under(self) -> float:
        return float(sum(a.sum() for a in self.under_procurement.values()))


def order_side(order: Order) -> str:
    """Upward supply is sold to the operator; downward supply is bought back."""
    return UP if order.direction == SELL else DOWN


def build_clearing_problem(
    demands: list[RedispatchDemand],
    supply_orders: list[Order],
    threshold: float | None = None,
) -> tuple[UCProblem, list[Order]]:
    """Emulate orders as generators on isolated per-area nodes.

    Returns the problem plus the subset of orders that made it in (those
    overlapping a demand window on the matching area and side). Cost
    coefficients are the order price for upward orders and its negation
    for downward (buy) orders, so minimization prefers cheap upward and
    expensive downward supply.
    """
    if not demands:
        raise ValueError("no redispatch demand to clear")
    for o in supply_orders:
        if o.area is None:
            raise OrderValidationError(f"redispatch order {o.order_id} lacks an area")

    wanted: dict[tuple[str, str], set[TimeStamp]] = {}
    for d in demands:
        for side, area in ((UP, d.up_area), (DOWN, d.down_area)):
            mtus = {ts for ts in d.mtus() if d.demand_at(ts, side) > 0}
            if mtus:
                wanted.setdefault((area, side), set()).update(mtus)

    relevant = []
    horizon_set = set()
    for ts_set in wanted.values():
        horizon_set.update(ts_set)
    for o in supply_orders:
        key = (o.area, order_side(o))
        if key not in wanted:
            continue
        if any(ts in wanted[key] for ts in o.delivery_mtus()):
            relevant.append(o)
            horizon_set.update(o.delivery_mtus())

    horizon = sorted(horizon_set)
    index = {ts: k for k, ts in enumerate(horizon)}
    T = len(horizon)

    loads: dict[str, np.ndarray] = {}
    for d in demands:
        for side, area in ((UP, d.up_area), (DOWN, d.down_area)):
            node = _node(area, side)
            arr = loads.setdefault(node, np.zeros(T))
            for ts in d.mtus():
                arr[index[ts]] += d.demand_at(ts, side)

    units = []
    up_names, down_names = [], []
    for o in relevant:
        side = order_side(o)
        window = [index[ts] for ts in o.delivery_mtus()]
        p_max = np.zeros(T)
        p_max[window] = 1.0
        all_or_none = o.order_kind == "all_or_none_block"
        p_min = p_max.copy() if all_or_none else 0.0
        block = o.delivery_duration > 1
        unit = UnitSpec(
            name=o.order_id,
            node=_node(o.area, side),
            pnom=o.remaining_quantity,
            srmc=o.price if side == UP else -o.price,
            p_min_pu=p_min,
            p_max_pu=p_max,
            committable=all_or_none or block,
            min_up_time=o.delivery_duration if block else 1,
            initial_status=0,
            flat_windows=((min(window), max(window)),) if block else (),
        )
        units.append(unit)
        (up_names if side == UP else down_names).append(o.order_id)

    problem = UCProblem(
        periods=T,
        units=units,
        loads=loads,
        shortfall_penalty=UNDER_PROCUREMENT_PENALTY,
        surplus_penalty=OVER_PROCUREMENT_PENALTY,
        allow_slack=True,
        balance_threshold=threshold,
        up_units=tuple(up_names),
        down_units=tuple(down_names),
    )
    return problem, relevant, horizon


def clear_rdm(problem: UCProblem, orders: list[Order], horizon: list[TimeStamp]) -> RdmClearingResult:
    """Solve the clearing program and extract per-order quantities."""
    solution: UCSolution = solve_uc(problem)
    T = problem.periods
    by_id = {o.order_id: o for o in orders}
    cleared = {}
    up_total = np.zeros(T)
    down_total = np.zeros(T)
    for name, g in solution.dispatch.items():
        order = by_id.get(name)
        if order is None:
            continue
        g = np.where(np.abs(g) < 1e-9, 0.0, g)
        cleared[name] = g
        if order_side(order) == UP:
            up_total += g
        else:
            down_total += g
    under, over = {}, {}
    for node in problem.nodes():
        under[node] = solution.shortfall[node]
        over[node] = solution.surplus[node]
    return RdmClearingResult(
        horizon=list(horizon),
        cleared=cleared,
        under_procurement=under,
        over_procurement=over,
        up_cleared=up_total,
        down_cleared=down_total,
    )


def settle_rdm(
    result: RdmClearingResult,
    orders: list[Order],
    executed_at: TimeStamp,
    grid_operator: str,
) -> list[Transaction]:
    """Pay-as-bid settlement: every cleared order at its own price.

    The operator buys upward energy (pays the supplier) and sells back
    downward energy (receives the buy price).
    """
    by_id = {o.order_id: o for o in orders}
    transactions = []
    for order_id, series in result.cleared.items():
        order = by_id[order_id]
        for k, ts in enumerate(result.horizon):
            qty = float(series[k])
            if qty <= 0:
                continue
            if order.direction == SELL:
                tx = Transaction(
                    executed_at=executed_at,
                    market=RDM,
                    delivery=ts,
                    buyer=grid_operator,
                    seller=order.agent_id,
                    price=order.price,
                    quantity=qty,
                    sell_order_id=order_id,
                    seller_asset=order.asset_id,
                )
            else:
                tx = Transaction(
                    executed_at=executed_at,
                    market=RDM,
                    delivery=ts,
                    buyer=order.agent_id,
                    seller=grid_operator,
                    price=order.price,
                    quantity=qty,
                    buy_order_id=order_id,
                    buyer_asset=order.asset_id,
                )
            transactions.append(tx)
    return transactions
