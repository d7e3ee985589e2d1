"""Grid & system operator: exogenous congestions in, redispatch demand out.

Runs after the market parties each step: activates newly identified
congestions, keeps the posted redispatch demand in sync with what has
already been procured, audits the books and transaction log for
consistency, and tracks the system imbalance of the delivered ISP.
The operator never trades on the DAM, IDM, or BEM.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .clock import TimeStamp, add_mtus, mtu_range
from .orders import BUY, DEMAND, RDM, SELL, Order
from .rdm import DOWN, UP, RedispatchDemand
from .scenario import CongestionRecord

GRID_OPERATOR_ID = "GridOperator"


@dataclass
class ActiveCongestion:
    record: CongestionRecord
    demand_id: str
    # MW still to procure per window MTU, tracked per side because a
    # forced best-effort commit can serve the sides unevenly
    remaining_up: dict = field(default_factory=dict)
    remaining_down: dict = field(default_factory=dict)
    unresolved_up: dict = field(default_factory=dict)
    unresolved_down: dict = field(default_factory=dict)

    def open_quantity(self) -> float:
        return sum(self.remaining_up.values()) + sum(self.remaining_down.values())


class GridOperator:
    def __init__(self, congestions: list[CongestionRecord], agent_id: str = GRID_OPERATOR_ID):
        self.agent_id = agent_id
        self._records = list(congestions)
        self.active: list[ActiveCongestion] = []
        self._activated = 0

    # ------------------------------------------------------------------
    # redispatch demand

    def identify_congestions(self, now: TimeStamp) -> list[ActiveCongestion]:
        """Activate records whose identification time has been reached."""
        fresh = []
        for record in self._records:
            if record.identification > now:
                continue
            self._activated += 1
            demand = ActiveCongestion(record=record, demand_id=f"congestion-{self._activated}")
            for ts in mtu_range(record.start, record.end):
                demand.remaining_up[ts] = record.redispatch_quantity
                demand.remaining_down[ts] = record.redispatch_quantity
            fresh.append(demand)
        self._records = [r for r in self._records if r.identification > now]
        self.active.extend(fresh)
        return fresh

    def expire(self, now: TimeStamp, gate_offset: int) -> list[dict]:
        """Drop MTUs that can no longer be procured; log what was missed.

        Delivery ts stops being tradable once now reaches ts -
        gate_offset (the gate closes at the beginning of that MTU).
        Returns under-procurement-realized rows for the run log.
        """
        rows = []
        for demand in self.active:
            for side, remaining, unresolved in (
                (UP, demand.remaining_up, demand.unresolved_up),
                (DOWN, demand.remaining_down, demand.unresolved_down),
            ):
                for ts in list(remaining):
                    if now >= add_mtus(ts, -gate_offset):
                        missed = remaining.pop(ts)
                        if missed > 1e-9:
                            unresolved[ts] = unresolved.get(ts, 0.0) + missed
                            rows.append(
                                {
                                    "demand_id": demand.demand_id,
                                    "side": side,
                                    "delivery_day": ts.day,
                                    "delivery_mtu": ts.mtu,
                                    "unresolved_mw": missed,
                                }
                            )
        self.active = [d for d in self.active if d.open_quantity() > 0]
        return rows

    def request_redispatch(self, now: TimeStamp, gate_offset: int) -> list[RedispatchDemand]:
        """Open demand, quantity-decremented, restricted to tradable MTUs."""
        demands = []
        for demand in self.active:
            up = {
                ts: qty
                for ts, qty in demand.remaining_up.items()
                if qty > 1e-9 and now < add_mtus(ts, -gate_offset)
            }
            down = {
                ts: qty
                for ts, qty in demand.remaining_down.items()
                if qty > 1e-9 and now < add_mtus(ts, -gate_offset)
            }
            if not up and not down:
                continue
            window = sorted(set(up) | set(down))
            demands.append(
                RedispatchDemand(
                    demand_id=demand.demand_id,
                    quantity=demand.record.redispatch_quantity,
                    down_area=demand.record.down_area,
                    up_area=demand.record.up_area,
                    window_start=window[0],
                    window_end=window[-1],
                    up_by_mtu=up,
                    down_by_mtu=down,
                )
            )
        return demands

    def demand_book_orders(self, demands: list[RedispatchDemand]) -> list[Order]:
        """Mirror open demand into the book for snapshots and reporting.

        Upward procurement appears as the operator's buy interest, the
        downward buy-back as sell interest.
        """
        orders = []
        for d in demands:
            for ts in d.mtus():
                for direction, side, area in ((BUY, UP, d.up_area), (SELL, DOWN, d.down_area)):
                    qty = d.demand_at(ts, side)
                    if qty <= 0:
                        continue
                    orders.append(
                        Order(
                            agent_id=self.agent_id,
                            market=RDM,
                            direction=direction,
                            quantity=qty,
                            delivery_start=ts,
                            price=None,
                            delivery_duration=1,
                            order_kind=DEMAND,
                            area=area,
                        )
                    )
        return orders

    def absorb_clearing(self, procured_up: dict, procured_down: dict) -> None:
        """Reduce open demand by committed procurement.

        ``procured_up``/``procured_down`` map (area, TimeStamp) to MW;
        equal per-area effectivity lets procurement serve congestions in
        posting order.
        """
        for demand in self.active:
            for remaining, procured, area in (
                (demand.remaining_up, procured_up, demand.record.up_area),
                (demand.remaining_down, procured_down, demand.record.down_area),
            ):
                for ts in list(remaining):
                    got = procured.get((area, ts), 0.0)
                    if got <= 0:
                        continue
                    served = min(got, remaining[ts])
                    remaining[ts] -= served
                    procured[(area, ts)] = got - served
                    if remaining[ts] <= 1e-9:
                        del remaining[ts]
        self.active = [d for d in self.active if d.open_quantity() > 0]

    # ------------------------------------------------------------------
    # audits

    def check_consistency(self, agents, transactions, dam_demand, now: TimeStamp) -> list[dict]:
        """Market consistency audit; returns diagnostic rows (empty = clean)."""
        diagnostics = []

        def flag(check, market, ts, value):
            diagnostics.append(
                {
                    "step_day": now.day,
                    "step_mtu": now.mtu,
                    "check": check,
                    "market": market,
                    "delivery_day": ts.day if ts else "",
                    "delivery_mtu": ts.mtu if ts else "",
                    "value": round(value, 6),
                }
            )

        # bilateral intraday trade nets to zero over agents
        idm_net: dict[TimeStamp, float] = {}
        for agent in agents:
            for ts, mw in agent.positions["IDM"].items():
                idm_net[ts] = idm_net.get(ts, 0.0) + mw
        for ts in sorted(idm_net):
            if abs(idm_net[ts]) > 1e-6:
                flag("idm_positions_net_zero", "IDM", ts, idm_net[ts])

        # day-ahead sales mirror the exogenous load
        dam_sold: dict[TimeStamp, float] = {}
        for agent in agents:
            for ts, mw in agent.positions["DAM"].items():
                dam_sold[ts] = dam_sold.get(ts, 0.0) - mw  # sells are negative
        for ts in sorted(dam_demand):
            gap = dam_sold.get(ts, 0.0) - dam_demand[ts]
            if abs(gap) > 1e-6:
                flag("dam_cleared_equals_load", "DAM", ts, gap)

        # per-market agent positions equal the transaction log
        for market in ("IDM", "RDM"):
            ledger: dict[tuple, float] = {}
            for tx in transactions:
                if tx.market != market:
                    continue
                key_b = (tx.buyer, tx.delivery)
                key_s = (tx.seller, tx.delivery)
                ledger[key_b] = ledger.get(key_b, 0.0) + tx.quantity
                ledger[key_s] = ledger.get(key_s, 0.0) - tx.quantity
            for agent in agents:
                for ts, mw in agent.positions[market].items():
                    booked = ledger.get((agent.agent_id, ts), 0.0)
                    if abs(booked - mw) > 1e-6:
                        flag("positions_match_transactions", market, ts, booked - mw)
        return diagnostics

    def system_imbalance(self, agents, induced_mw: float, ts: TimeStamp) -> float:
        """Realized agent imbalances plus the operator-induced component."""
        total = induced_mw
        for agent in agents:
            total += agent.scheduled_imbalance.get(ts, 0.0)
        return total
