"""Simulation model: clock, step pipeline, market operators, run log.

Each step covers one ISP. Market-operator gate events run first (day-ahead
clearing when the gate closes, control-state draw, imbalance pricing and
settlement of the delivered ISP), then every market party acts in scenario
order, then the grid & system operator. Continuous markets clear
instantaneously whenever orders arrive. All stochastic draws come from
named sub-streams of one seeded generator, so a (scenario, seed) pair
fixes the run log bit for bit.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import balancing, dam, idm, rdm
from .agents import MarketParty
from .balancing import ImbalancePricing, ImbalancePriceTable
from .clock import MTU_HOURS, MTU_PER_DAY, ScheduleHorizon, TimeStamp, add_mtus, advance, mtu_distance, mtu_range
from .errors import ClearingError, MarketSimError
from .gridop import GridOperator
from .orders import (
    BEM,
    BUY,
    DAM,
    DEMAND,
    IDM,
    RDM,
    SELL,
    ORDER_TYPE_RULES,
    Order,
    OrderBook,
    Transaction,
)
from .rng import RandomStreams
from .scenario import Scenario, parse_gate_spec

log = logging.getLogger("marketsim")
log.setLevel(os.environ.get("MARKETSIM_LOG_LEVEL", "WARNING").upper())


@dataclass
class RunLog:
    trades: list = field(default_factory=list)  # Transaction
    order_events: list = field(default_factory=list)  # dict rows
    prices: list = field(default_factory=list)
    book_snapshots: list = field(default_factory=list)
    redispatch_kpi: list = field(default_factory=list)
    redispatch_unresolved: list = field(default_factory=list)
    settlements: list = field(default_factory=list)
    system_imbalance: list = field(default_factory=list)
    consistency: list = field(default_factory=list)


class Simulation:
    def __init__(self, scenario: Scenario, seed: int | None = None, steps: int | None = None):
        self.scenario = scenario
        self.seed = scenario.task.seed if seed is None else seed
        self.number_steps = scenario.task.number_steps if steps is None else steps
        if self.number_steps < 1:
            raise MarketSimError("need at least one simulation step")
        self.streams = RandomStreams(self.seed)
        self.now = scenario.task.start
        self.last_step = add_mtus(self.now, self.number_steps - 1)
        self.horizon_end = TimeStamp(self.now.day, MTU_PER_DAY)

        self.rules = scenario.market_rules
        self.books = {
            DAM: OrderBook(DAM, ORDER_TYPE_RULES[self.rules[DAM].order_types]),
            IDM: OrderBook(IDM, ORDER_TYPE_RULES[self.rules[IDM].order_types]),
            RDM: OrderBook(RDM, ORDER_TYPE_RULES[self.rules[RDM].order_types]),
            BEM: OrderBook(BEM, ORDER_TYPE_RULES[self.rules[BEM].order_types]),
        }
        self.rdm_threshold = rdm.THRESHOLD_BY_METHOD[self.rules[RDM].acquisition_method]
        self.rdm_gate_offset = self._relative_gate_offset(self.rules[RDM].gate_closure_time)
        self.idm_gate_offset = self._relative_gate_offset(self.rules[IDM].gate_closure_time)
        self.bem_gate_offset = self._relative_gate_offset(self.rules[BEM].gate_closure_time)
        self.dam_gate_open_mtu = self._day_before_mtu(self.rules[DAM].gate_opening_time)
        self.dam_gate_close_mtu = self._day_before_mtu(self.rules[DAM].gate_closure_time)

        self.agents = [
            MarketParty(agent_id, scenario.assets_of(agent_id), scenario.strategy_for(agent_id))
            for agent_id in scenario.agents()
        ]
        self.gridop = GridOperator(scenario.congestions)

        ibm_rules = self.rules["IBM"]
        if ibm_rules.pricing_method == balancing.DUTCH_PRICING:
            table = ImbalancePriceTable(scenario.imbalance_price_rows)
            self.pricing = ImbalancePricing(balancing.CONDITIONAL_TABLE, table=table)
        else:
            self.pricing = ImbalancePricing(
                balancing.FIXED_SINGLE, default_price=ibm_rules.pricing_parameter or 0.0
            )
        self.control_states = scenario.control_states

        self.run_log = RunLog()
        self.dam_prices: dict[TimeStamp, float] = {}
        self.dam_demand: dict[TimeStamp, float] = {}
        self._induced: dict[TimeStamp, float] = {}  # committed up-down per MTU
        self._fe_pending = list(scenario.forecast_errors)
        self._step_count = 0
        self._initialize()

    # ------------------------------------------------------------------
    # configuration helpers

    @staticmethod
    def _relative_gate_offset(spec_text: str) -> int:
        """k for 'MTU-k' specs: delivery d is tradable while now < d - k."""
        probe = TimeStamp(3, 40)
        gate = parse_gate_spec(spec_text, probe)
        return mtu_distance(gate, probe)

    @staticmethod
    def _day_before_mtu(spec_text: str) -> int:
        """MTU of the day-before gate of daily auctions ('D-1, MTU k')."""
        probe = TimeStamp(3, 1)
        gate = parse_gate_spec(spec_text, probe)
        if gate.day != probe.day - 1:
            raise MarketSimError(f"'{spec_text}' is not a day-before gate")
        return gate.mtu

    @property
    def schedule_horizon(self) -> ScheduleHorizon:
        return ScheduleHorizon(current=min(self.now, self.horizon_end), end=self.horizon_end)

    def total_capacity(self) -> float:
        return sum(a.pmax for a in self.scenario.assets)

    def expected_imbalance_prices(self, ts: TimeStamp):
        dam_price = self.dam_prices.get(ts, 30.0)
        return balancing.expected_prices(self.pricing, self.control_states, dam_price)

    # ------------------------------------------------------------------
    # initialization: the start day was auctioned before the run begins

    def _initialize(self):
        start = self.now
        hours = [(start.day, h) for h in range(start.hour, 25)]
        if start.mtu >= self.dam_gate_close_mtu and self.last_step.day > start.day:
            hours += [(start.day + 1, h) for h in range(1, 25)]
        orders = []
        for agent in self.agents:
            day_orders = {}
            for day, _ in hours:
                if day not in day_orders:
                    day_orders[day] = agent.place_dam_orders(day)
            wanted = {(d, h) for d, h in hours}
            for batch in day_orders.values():
                for o in batch:
                    if (o.delivery_start.day, o.delivery_start.hour) in wanted:
                        orders.append(o)
        self._run_dam_auction(hours, orders, executed_at=start)
        horizon = mtu_range(start, self.horizon_end)
        initial = self._dam_start_state()
        for agent in self.agents:
            agent.update_trade_schedule()
            agent.optimize_dispatch(horizon, initial_state=initial.get(agent.agent_id))

    def _dam_start_state(self) -> dict:
        """Assets enter the run in their day-ahead position for the first MTU."""
        state: dict[str, dict] = {}
        start = self.now
        for tx in self.run_log.trades:
            if tx.market == DAM and tx.delivery == start and tx.seller_asset:
                agent_state = state.setdefault(tx.seller, {})
                agent_state[tx.seller_asset] = (1, tx.quantity)
        for agent in self.agents:
            agent_state = state.setdefault(agent.agent_id, {})
            for name in agent.assets:
                agent_state.setdefault(name, (0, 0.0))
        return state

    # ------------------------------------------------------------------
    # run loop

    def run(self):
        for _ in range(self.number_steps):
            self.step()
        return self.run_log

    def step(self):
        now = self.now
        self._gate_events(now)
        for agent in self.agents:
            self._agent_turn(agent, now)
        self._gridop_turn(now)
        self._prune_bem(now)
        self._snapshot_books(now)
        self._step_count += 1
        if self._step_count < self.number_steps:
            self.now = advance(self.now)

    # ------------------------------------------------------------------
    # market operator gate events

    def _gate_events(self, now: TimeStamp):
        if now.mtu == self.dam_gate_close_mtu and self.last_step.day > now.day:
            delivery_day = now.day + 1
            orders = [o for o in self.books[DAM].orders.values()]
            hours = [(delivery_day, h) for h in range(1, 25)]
            self._run_dam_auction(hours, orders, executed_at=now)
            for o in list(self.books[DAM].orders.values()):
                self.books[DAM].remove(o.order_id)

        state = None
        if self.control_states is not None:
            state = balancing.sample_control_state(
                self.control_states, self.streams.stream("control_state")
            )
        dam_price = self.dam_prices.get(now)
        short_price, long_price = balancing.price_imbalance(
            self.pricing,
            dam_price if dam_price is not None else 30.0,
            state if state is not None else 0,
            self.streams.stream("imbalance_price"),
        )
        self.run_log.prices.append(
            {
                "day": now.day,
                "mtu": now.mtu,
                "dam_price": dam_price,
                "control_state": state,
                "imbalance_price_short": short_price,
                "imbalance_price_long": long_price,
            }
        )
        imbalances = {a.agent_id: a.scheduled_imbalance.get(now, 0.0) for a in self.agents}
        cash = balancing.settle_imbalances(imbalances, (short_price, long_price))
        for agent_id in sorted(cash):
            self.run_log.settlements.append(
                {
                    "day": now.day,
                    "mtu": now.mtu,
                    "agent": agent_id,
                    "imbalance_mw": imbalances[agent_id],
                    "price": short_price if imbalances[agent_id] < 0 else long_price,
                    "cash": cash[agent_id],
                }
            )

    def _run_dam_auction(self, hours, orders, executed_at: TimeStamp):
        load_mw = self.scenario.task.residual_load_pu * self.total_capacity()
        residual_load = {key: load_mw for key in hours}
        for o in orders:
            self._record_order(o, executed_at)
        for (day, hour) in hours:
            self.run_log.order_events.append(
                {
                    "step_day": executed_at.day,
                    "step_mtu": executed_at.mtu,
                    "market": DAM,
                    "order_id": f"DA-load-{day}-{hour}",
                    "agent_id": dam.RESIDUAL_LOAD_BUYER,
                    "asset_id": None,
                    "direction": BUY,
                    "order_kind": DEMAND,
                    "area": None,
                    "price": None,
                    "quantity": load_mw,
                    "delivery_day": day,
                    "delivery_mtu": (hour - 1) * 4 + 1,
                    "delivery_duration": 4,
                }
            )
        result = dam.clear_dam(orders, residual_load, self.scenario.unavailability)
        for h in result.hours:
            if h.scarcity:
                self.run_log.consistency.append(
                    {
                        "step_day": executed_at.day,
                        "step_mtu": executed_at.mtu,
                        "check": "dam_scarcity",
                        "market": DAM,
                        "delivery_day": h.day,
                        "delivery_mtu": (h.hour - 1) * 4 + 1,
                        "value": h.unserved,
                    }
                )
        transactions = dam.settle_dam(result, orders, executed_at)
        self._record_transactions(transactions)
        self.dam_prices.update(result.price_series())
        for (day, hour) in hours:
            for ts in mtu_range(TimeStamp(day, (hour - 1) * 4 + 1), TimeStamp(day, hour * 4)):
                self.dam_demand[ts] = load_mw
        if hours:
            self.horizon_end = max(self.horizon_end, TimeStamp(hours[-1][0], MTU_PER_DAY))
        log.info("DAM auction at %s: %d hours cleared", executed_at.as_tuple(), len(hours))

    # ------------------------------------------------------------------
    # agent turns

    def _agent_turn(self, agent: MarketParty, now: TimeStamp):
        for record in list(self._fe_pending):
            if record.identification <= now:
                window = mtu_range(record.start, record.end)
                for affected in record.agents:
                    for candidate in self.agents:
                        if candidate.agent_id == affected:
                            candidate.apply_forecast_error(window, record.error_magnitude_pu)
                self._fe_pending.remove(record)

        agent.update_trade_schedule()
        agent.apply_redispatch_constraints()
        plan_horizon = self._planning_horizon(now)
        agent.optimize_dispatch(plan_horizon, initial_state=self._realized_state(agent, now))

        # DAM offers for the next delivery day while that gate is open
        if (
            self.dam_gate_open_mtu <= now.mtu < self.dam_gate_close_mtu
            and self.last_step.day > now.day
        ):
            for order in agent.place_dam_orders(now.day + 1):
                self.books[DAM].insert(order, now=now)
                self._record_order(order, now)

        # redispatch offers; placement may trigger a clearing attempt
        rdm_deliveries = self._tradable(now, self.rdm_gate_offset)
        if rdm_deliveries:
            self.books[RDM].remove_agent_orders(agent.agent_id)
            order_types = self.rules[RDM].order_types
            kind = "limit" if order_types.startswith("limit") else "all_or_none_block"
            allow_blocks = order_types in ("all_or_none_block", "limit_block")
            orders = agent.place_rdm_orders(
                rdm_deliveries, kind, self.expected_imbalance_prices, allow_blocks=allow_blocks
            )
            for order in orders:
                self.books[RDM].insert(order, now=now)
                self._record_order(order, now)
            if orders:
                self._attempt_rdm_clearing(now)

        # intraday quotes and imbalance management, cleared instantly
        idm_deliveries = self._tradable(now, self.idm_gate_offset)
        if idm_deliveries:
            self.books[IDM].remove_agent_orders(agent.agent_id)
            book = self.books[IDM]

            def best_prices(ts, _book=book, _agent=agent.agent_id):
                bids = [o for o in _book.sorted_view(BUY, ts) if o.agent_id != _agent]
                asks = [o for o in _book.sorted_view(SELL, ts) if o.agent_id != _agent]
                return (
                    bids[0].price if bids else None,
                    asks[0].price if asks else None,
                )

            orders = agent.place_idm_orders(
                idm_deliveries,
                now,
                self.streams.stream(f"agent:{agent.agent_id}"),
                best_prices,
                self.dam_prices.get,
            )
            for order in orders:
                self._record_order(order, now)
            trades = idm.match(book, orders, now)
            self._record_transactions(trades)
            if any(agent.agent_id in (t.buyer, t.seller) for t in trades):
                agent.update_trade_schedule()
                agent.optimize_dispatch(plan_horizon, initial_state=self._realized_state(agent, now))

        # balancing energy offer at its gate closure
        bem_delivery = add_mtus(now, self.bem_gate_offset + 1)
        if bem_delivery <= self.horizon_end:
            self.books[BEM].remove_agent_orders(agent.agent_id)
            orders = agent.place_bem_orders(bem_delivery)
            balancing.accept_bem_orders(self.books[BEM], orders, now, self.bem_gate_offset)
            for order in orders:
                self._record_order(order, now)

    def _planning_horizon(self, now: TimeStamp) -> list[TimeStamp]:
        start = advance(now)
        if start > self.horizon_end:
            return []
        return mtu_range(start, self.horizon_end)

    def _tradable(self, now: TimeStamp, gate_offset: int) -> list[TimeStamp]:
        first = add_mtus(now, gate_offset + 1)
        if first > self.horizon_end:
            return []
        return mtu_range(first, self.horizon_end)

    def _realized_state(self, agent: MarketParty, now: TimeStamp) -> dict:
        state = {}
        for name, asset in agent.assets.items():
            dispatch = asset.dispatch.get(now, 0.0)
            status = asset.commitment.get(now)
            if status is None:
                status = 1 if dispatch > 0 else 0
            state[name] = (int(status), dispatch)
        return state

    # ------------------------------------------------------------------
    # grid & system operator turn

    def _gridop_turn(self, now: TimeStamp):
        self.gridop.identify_congestions(now)
        rows = self.gridop.expire(now, self.rdm_gate_offset)
        self.run_log.redispatch_unresolved.extend(rows)

        demands = self.gridop.request_redispatch(now, self.rdm_gate_offset)
        self.books[RDM].remove_agent_orders(self.gridop.agent_id, keep_demand=False)
        for order in self.gridop.demand_book_orders(demands):
            self.books[RDM].insert(order, now=now)
            self._record_order(order, now)
        if demands:
            self._attempt_rdm_clearing(now)

        diagnostics = self.gridop.check_consistency(
            self.agents, self.run_log.trades, self.dam_demand, now
        )
        self.run_log.consistency.extend(diagnostics)

        induced = self._induced.get(now, 0.0)
        system = self.gridop.system_imbalance(self.agents, induced, now)
        self.run_log.system_imbalance.append(
            {
                "day": now.day,
                "mtu": now.mtu,
                "agents_mw": system - induced,
                "induced_mw": induced,
                "system_mw": system,
            }
        )

    def _attempt_rdm_clearing(self, now: TimeStamp):
        demands = self.gridop.request_redispatch(now, self.rdm_gate_offset)
        if not demands:
            return
        supply = [o for o in self.books[RDM].orders.values() if o.order_kind != DEMAND]
        if not supply:
            return
        try:
            problem, relevant, horizon = rdm.build_clearing_problem(
                demands, supply, self.rdm_threshold
            )
        except ValueError:
            return
        if not relevant:
            return
        try:
            result = rdm.clear_rdm(problem, relevant, horizon)
        except MarketSimError as exc:
            raise ClearingError(f"redispatch clearing failed: {exc}", market=RDM, time=now)

        force = any(
            mtu_distance(now, ts) == self.rdm_gate_offset + 1
            for d in demands
            for ts in d.mtus()
        )
        if result.total_under() > 1e-6 and not force:
            return  # keep waiting for offers that cover all demand MTUs

        transactions = rdm.settle_rdm(result, relevant, now, self.gridop.agent_id)
        if not transactions:
            return
        self._record_transactions(transactions)

        by_id = {o.order_id: o for o in relevant}
        procured_up: dict[tuple, float] = {}
        procured_down: dict[tuple, float] = {}
        for order_id, series in result.cleared.items():
            peak = float(np.max(series))
            if peak <= 0:
                continue
            order = by_id[order_id]
            side = rdm.order_side(order)
            for k, ts in enumerate(horizon):
                qty = float(series[k])
                if qty <= 0:
                    continue
                key = (order.area, ts)
                if side == rdm.UP:
                    procured_up[key] = procured_up.get(key, 0.0) + qty
                else:
                    procured_down[key] = procured_down.get(key, 0.0) + qty
            if order.order_kind == "all_or_none_block" or peak >= order.remaining_quantity - 1e-9:
                self.books[RDM].remove(order_id)
            else:
                self.books[RDM].reduce(order_id, peak)

        demand_up = {ts: 0.0 for ts in horizon}
        demand_down = {ts: 0.0 for ts in horizon}
        for d in demands:
            for ts in d.mtus():
                demand_up[ts] = demand_up.get(ts, 0.0) + d.demand_at(ts, rdm.UP)
                demand_down[ts] = demand_down.get(ts, 0.0) + d.demand_at(ts, rdm.DOWN)
        for k, ts in enumerate(horizon):
            under = sum(arr[k] for arr in result.under_procurement.values())
            over = sum(arr[k] for arr in result.over_procurement.values())
            up = float(result.up_cleared[k])
            down = float(result.down_cleared[k])
            if up == 0 and down == 0 and under == 0 and over == 0 and demand_up.get(ts, 0.0) == 0:
                continue
            self.run_log.redispatch_kpi.append(
                {
                    "step_day": now.day,
                    "step_mtu": now.mtu,
                    "delivery_day": ts.day,
                    "delivery_mtu": ts.mtu,
                    "demand_up_mw": demand_up.get(ts, 0.0),
                    "demand_down_mw": demand_down.get(ts, 0.0),
                    "cleared_up_mw": up,
                    "cleared_down_mw": down,
                    "under_procurement_mw": under,
                    "over_procurement_mw": over,
                    "induced_mw": up - down,
                }
            )
            self._induced[ts] = self._induced.get(ts, 0.0) + (up - down)

        self.gridop.absorb_clearing(procured_up, procured_down)
        log.info("RDM clearing committed at %s", now.as_tuple())

    # ------------------------------------------------------------------
    # bookkeeping

    def _record_order(self, order: Order, now: TimeStamp):
        self.run_log.order_events.append(
            {
                "step_day": now.day,
                "step_mtu": now.mtu,
                "market": order.market,
                "order_id": order.order_id,
                "agent_id": order.agent_id,
                "asset_id": order.asset_id,
                "direction": order.direction,
                "order_kind": order.order_kind,
                "area": order.area,
                "price": order.price,
                "quantity": order.quantity,
                "delivery_day": order.delivery_start.day,
                "delivery_mtu": order.delivery_start.mtu,
                "delivery_duration": order.delivery_duration,
            }
        )

    def _record_transactions(self, transactions: list[Transaction]):
        for tx in transactions:
            self.run_log.trades.append(tx)
            for agent in self.agents:
                if agent.agent_id in (tx.buyer, tx.seller):
                    agent.notify(tx)

    def _prune_bem(self, now: TimeStamp):
        book = self.books[BEM]
        for order_id in [oid for oid, o in book.orders.items() if o.delivery_end <= now]:
            book.remove(order_id)

    def _snapshot_books(self, now: TimeStamp):
        for market in (DAM, IDM, RDM, BEM):
            self.run_log.book_snapshots.extend(self.books[market].snapshot_rows(now))
