"""Market-party agent: schedules, dispatch optimization, order placement.

Each step an agent ingests its new transactions into per-market trade
positions, turns redispatch commitments into hard dispatch bounds on the
affected assets, re-optimizes its portfolio against the total traded
position, derives per-asset available capacity, and quotes the markets
per its configured strategies. The imbalance mechanism needs no orders;
open scheduled imbalances are worked off on the intraday market with an
impatience price path that concedes toward the reference price as gate
closure approaches and falls back to market orders at the last tradable
step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .clock import MTU_HOURS, TimeStamp, add_mtus, mtu_distance, mtu_range
from .errors import MarketSimError
from .optimize import UCProblem, UnitSpec, solve_uc
from .orders import (
    ALL_OR_NONE_BLOCK,
    BEM,
    BUY,
    DAM,
    FILL_OR_KILL,
    IDM,
    LIMIT,
    MARKET,
    PRICE_TICK,
    RDM,
    SELL,
    Order,
    Transaction,
    quantize_price,
)
from .scenario import AgentStrategyConfig, AssetSpec

#: EUR/MWh an agent charges itself for scheduled imbalance in dispatch
#: optimization; above plausible intraday prices so trading out is preferred
IMBALANCE_PENALTY = 500.0
#: largest intraday capacity quote in MW under the random quantity strategy
SMALL_RANDOM_MAX_MW = 25
#: impatience path: full concession in EUR/MWh and how many MTUs before
#: gate closure the concession starts growing
IMPATIENCE_MAX_CONCESSION = 50.0
IMPATIENCE_LOOKAHEAD_MTUS = 36
#: delivery periods start this many MTUs after the current step per market
# (gate closure spec "MTU-k" keeps delivery >= now + k + 1)
DAM_PRICE_FALLBACK = 30.0


def risk_markup(exp_risk_price: float, exp_risk_quantity: float, offer_quantity: float) -> float:
    """Price increment spreading an expected risk over the offered energy.

    All quantities in MWh, prices in EUR/MWh. Zero risk quantity means no
    mark-up; a non-positive offer quantity is rejected.
    """
    if offer_quantity <= 0:
        raise MarketSimError("offer quantity must be positive for a mark-up")
    if exp_risk_quantity == 0:
        return 0.0
    return (exp_risk_price * exp_risk_quantity) / offer_quantity


def available_capacity(
    sd: np.ndarray,
    pmax_mw: np.ndarray,
    pmin_mw: np.ndarray,
    ramp_up_mw: float,
    ramp_down_mw: float,
    sd_prev: float | None = None,
    sd_next: float | None = None,
):
    """Plain and ramp-restricted headroom around a dispatch schedule.

    Boundary neighbours default to the schedule's edge values (a flat
    extension), so the edge ramp terms vanish unless sd_prev/sd_next say
    otherwise. Returns (av_up, av_down, rr_av_up, rr_av_down) arrays.
    """
    sd = np.asarray(sd, dtype=float)
    av_up = pmax_mw - sd
    av_down = sd - pmin_mw
    prev = np.concatenate(([sd[0] if sd_prev is None else sd_prev], sd[:-1]))
    nxt = np.concatenate((sd[1:], [sd[-1] if sd_next is None else sd_next]))
    rr_up = np.maximum(
        np.minimum.reduce([ramp_up_mw - (sd - prev), ramp_up_mw - (nxt - sd), av_up]),
        0.0,
    )
    rr_down = np.maximum(
        np.minimum.reduce([ramp_down_mw - (prev - sd), ramp_down_mw - (sd - nxt), av_down]),
        0.0,
    )
    return av_up, av_down, rr_up, rr_down


def marginal_orderbook_price(
    direction: str,
    indifference: float,
    best_bid: float | None,
    best_ask: float | None,
) -> float:
    """Open-order-book quote around the own indifference price.

    Sells never go below it, buys never above; otherwise the quote takes
    the touch when it already crosses, or improves the queue by one tick.
    """
    if direction == SELL:
        if best_bid is not None and best_bid >= indifference:
            return best_bid
        if best_ask is not None and best_ask - PRICE_TICK >= indifference:
            return quantize_price(best_ask - PRICE_TICK)
        return quantize_price(indifference)
    if best_ask is not None and best_ask <= indifference:
        return best_ask
    if best_bid is not None and best_bid + PRICE_TICK <= indifference:
        return quantize_price(best_bid + PRICE_TICK)
    return quantize_price(indifference)


@dataclass
class AssetState:
    spec: AssetSpec
    # all keyed by TimeStamp
    dispatch: dict = field(default_factory=dict)  # MW
    commitment: dict = field(default_factory=dict)  # 0/1
    p_max_mw: dict = field(default_factory=dict)  # downward redispatch caps
    must_run_mw: dict = field(default_factory=dict)  # upward redispatch floors
    av_up: dict = field(default_factory=dict)
    av_down: dict = field(default_factory=dict)
    rr_up: dict = field(default_factory=dict)
    rr_down: dict = field(default_factory=dict)
    # dispatch snapshot at RDM offer time, base for redispatch bounds
    rdm_offer_base: dict = field(default_factory=dict)

    def cap_at(self, ts: TimeStamp) -> float:
        return self.p_max_mw.get(ts, self.spec.pmax)

    def floor_at(self, ts: TimeStamp) -> float:
        return self.must_run_mw.get(ts, 0.0)


class MarketParty:
    def __init__(self, agent_id: str, assets: list[AssetSpec], strategy: AgentStrategyConfig):
        self.agent_id = agent_id
        self.strategy = strategy
        self.assets = {a.name: AssetState(spec=a) for a in assets}
        # signed MW per market per delivery MTU: bought positive, sold negative
        self.positions: dict[str, dict] = {m: {} for m in (DAM, IDM, RDM, BEM)}
        self.forecast_error: dict = {}  # TimeStamp -> MW
        self.scheduled_imbalance: dict = {}  # TimeStamp -> MW (long positive)
        self._pending: list[Transaction] = []
        self._pending_redispatch: list[Transaction] = []
        self._dirty = True  # position changed since last optimization
        self._order_count = 0

    # ------------------------------------------------------------------
    # bookkeeping

    def notify(self, tx: Transaction):
        """Route a settled transaction to this agent (simulation hook)."""
        self._pending.append(tx)
        if tx.market == RDM:
            self._pending_redispatch.append(tx)

    def position(self, ts: TimeStamp) -> float:
        """Total traded MW at ts incl. forecast error, bought positive."""
        total = self.forecast_error.get(ts, 0.0)
        for book in self.positions.values():
            total += book.get(ts, 0.0)
        return total

    def update_trade_schedule(self, transactions: list[Transaction] | None = None) -> None:
        """Fold new transactions into the per-market trade positions."""
        batch = self._pending if transactions is None else transactions
        for tx in batch:
            book = self.positions[tx.market]
            if tx.buyer == self.agent_id:
                book[tx.delivery] = book.get(tx.delivery, 0.0) + tx.quantity
                self._dirty = True
            if tx.seller == self.agent_id:
                book[tx.delivery] = book.get(tx.delivery, 0.0) - tx.quantity
                self._dirty = True
        if transactions is None:
            self._pending = []

    def apply_forecast_error(self, window: list[TimeStamp], magnitude_pu: float) -> None:
        """Scale the DAM-traded volume of the window by the error magnitude."""
        for ts in window:
            base = abs(self.positions[DAM].get(ts, 0.0))
            if base == 0:
                continue
            self.forecast_error[ts] = self.forecast_error.get(ts, 0.0) + magnitude_pu * base
            self._dirty = True

    def apply_redispatch_constraints(self) -> None:
        """Turn cleared redispatch into hard dispatch bounds on the asset.

        Upward redispatch of q raises the must-run floor to the dispatch
        at offer time plus q; downward lowers the cap to that dispatch
        minus q. The traded quantity itself already shifted the RDM
        position via update_trade_schedule.
        """
        for tx in self._pending_redispatch:
            asset_name = tx.seller_asset if tx.seller == self.agent_id else tx.buyer_asset
            asset = self.assets.get(asset_name)
            if asset is None:
                continue
            base = asset.rdm_offer_base.get(tx.delivery, asset.dispatch.get(tx.delivery, 0.0))
            if tx.seller == self.agent_id:  # upward: must run above base + q
                floor = base + tx.quantity
                if floor > asset.cap_at(tx.delivery) + 1e-9:
                    raise MarketSimError(
                        f"redispatch floor {floor} MW exceeds capacity of {asset_name}"
                        f" at {tx.delivery.as_tuple()}"
                    )
                asset.must_run_mw[tx.delivery] = max(
                    asset.must_run_mw.get(tx.delivery, 0.0), floor
                )
            else:  # downward: capped below base - q
                cap = base - tx.quantity
                if cap < -1e-9:
                    raise MarketSimError(
                        f"redispatch cap {cap} MW below zero for {asset_name}"
                        f" at {tx.delivery.as_tuple()}"
                    )
                asset.p_max_mw[tx.delivery] = min(
                    asset.p_max_mw.get(tx.delivery, asset.spec.pmax), cap
                )
            self._dirty = True
        self._pending_redispatch = []

    # ------------------------------------------------------------------
    # dispatch

    def optimize_dispatch(self, horizon: list[TimeStamp], initial_at: TimeStamp | None,
                          force: bool = False) -> bool:
        """Re-dispatch the portfolio against the traded position.

        The traded position enters as a load (net sales positive); asset
        bounds carry the redispatch floors/caps; slack is priced at the
        imbalance penalty. Skipped when nothing changed since the last
        run. Returns True when an optimization ran.
        """
        if not horizon or (not self._dirty and not force):
            return False
        T = len(horizon)
        load = np.zeros(T)
        for k, ts in enumerate(horizon):
            load[k] = max(0.0, -self.position(ts))
        units = []
        for name in sorted(self.assets):
            asset = self.assets[name]
            spec = asset.spec
            p_max = np.array([asset.cap_at(ts) for ts in horizon]) / spec.pmax
            must = np.array([asset.floor_at(ts) for ts in horizon])
            if initial_at is not None:
                initial_dispatch = asset.dispatch.get(initial_at, 0.0)
                initial_status = int(asset.commitment.get(initial_at, 1))
            else:
                initial_dispatch = None
                initial_status = 1
            units.append(
                UnitSpec(
                    name=name,
                    node="portfolio",
                    pnom=spec.pmax,
                    srmc=spec.srmc,
                    p_min_pu=spec.pmin / spec.pmax,
                    p_max_pu=p_max,
                    committable=True,
                    start_up_cost=spec.start_up_cost if self.strategy.start_stop_costs else 0.0,
                    shut_down_cost=spec.shut_down_cost if self.strategy.start_stop_costs else 0.0,
                    ramp_up=spec.ramp_limit_up if self.strategy.ramp_limits else None,
                    ramp_down=spec.ramp_limit_down if self.strategy.ramp_limits else None,
                    ramp_start_up=spec.ramp_limit_start_up if self.strategy.ramp_limits else None,
                    ramp_shut_down=spec.ramp_limit_shut_down if self.strategy.ramp_limits else None,
                    min_up_time=min(spec.min_up_time, T) if self.strategy.min_up_down_time else 1,
                    min_down_time=min(spec.min_down_time, T) if self.strategy.min_up_down_time else 1,
                    initial_status=initial_status,
                    initial_dispatch=initial_dispatch,
                    must_run=must,
                )
            )
        problem = UCProblem(
            periods=T,
            units=units,
            loads={"portfolio": load},
            shortfall_penalty=IMBALANCE_PENALTY,
            surplus_penalty=IMBALANCE_PENALTY,
        )
        solution = solve_uc(problem)
        for name in sorted(self.assets):
            asset = self.assets[name]
            for k, ts in enumerate(horizon):
                asset.dispatch[ts] = float(solution.dispatch[name][k])
                asset.commitment[ts] = int(solution.commitment[name][k])
        for k, ts in enumerate(horizon):
            total = sum(self.assets[n].dispatch[ts] for n in self.assets)
            self.scheduled_imbalance[ts] = total + self.position(ts)
        self._refresh_available_capacity(horizon, initial_at)
        self._dirty = False
        return True

    def _refresh_available_capacity(self, horizon: list[TimeStamp], initial_at: TimeStamp | None):
        for name in sorted(self.assets):
            asset = self.assets[name]
            spec = asset.spec
            sd = np.array([asset.dispatch.get(ts, 0.0) for ts in horizon])
            pmax = np.array([asset.cap_at(ts) for ts in horizon])
            pmin = np.array(
                [max(spec.pmin, asset.floor_at(ts)) for ts in horizon]
            )
            sd_prev = asset.dispatch.get(initial_at) if initial_at is not None else None
            av_up, av_down, rr_up, rr_down = available_capacity(
                sd,
                pmax,
                pmin,
                spec.ramp_limit_up * spec.pmax,
                spec.ramp_limit_down * spec.pmax,
                sd_prev=sd_prev,
            )
            running = sd >= spec.pmin - 1e-9
            av_up = np.where(running, np.maximum(av_up, 0.0), 0.0)
            av_down = np.maximum(av_down, 0.0)
            rr_up = np.where(running, rr_up, 0.0)
            for k, ts in enumerate(horizon):
                # capacity at MTUs with open imbalance is reserved for the
                # imbalance strategy, keeping own quotes from self-crossing
                imbalanced = abs(self.scheduled_imbalance.get(ts, 0.0)) > 1e-6
                asset.av_up[ts] = 0.0 if imbalanced else float(av_up[k])
                asset.av_down[ts] = 0.0 if imbalanced else float(av_down[k])
                asset.rr_up[ts] = 0.0 if imbalanced else float(rr_up[k])
                asset.rr_down[ts] = 0.0 if imbalanced else float(rr_down[k])

    # ------------------------------------------------------------------
    # order placement

    def _next_order_id(self, market: str) -> str:
        self._order_count += 1
        return f"{self.agent_id}-{market}-{self._order_count}"

    def place_dam_orders(self, delivery_day: int) -> list[Order]:
        """Hourly blocks of the full remaining capacity at marginal cost."""
        orders = []
        for name in sorted(self.assets):
            spec = self.assets[name].spec
            for hour in range(1, 25):
                first = TimeStamp(delivery_day, (hour - 1) * 4 + 1)
                qty = spec.pmax
                if qty <= 0:
                    continue
                orders.append(
                    Order(
                        agent_id=self.agent_id,
                        market=DAM,
                        direction=SELL,
                        quantity=qty,
                        delivery_start=first,
                        price=spec.srmc,
                        delivery_duration=4,
                        order_kind=FILL_OR_KILL,
                        order_id=self._next_order_id(DAM),
                        area=spec.location,
                        asset_id=name,
                    )
                )
        return orders

    def place_rdm_orders(self, deliveries: list[TimeStamp], order_kind: str,
                         expected_prices, allow_blocks: bool = True) -> list[Order]:
        """Operational range plus start/stop blocks, priced srmc + mark-ups.

        ``expected_prices`` maps a TimeStamp to expected (short, long)
        imbalance prices used by the opportunity and ramping mark-ups.
        Start/stop blocks span several MTUs and are skipped when the
        market only admits single-ISP orders.
        """
        if not deliveries:
            return []
        pricing = self.strategy.RDM_pricing
        with_startstop = self.strategy.RDM_quantity == "all_plus_startstop" and allow_blocks
        orders = []
        for name in sorted(self.assets):
            asset = self.assets[name]
            spec = asset.spec
            for ts in deliveries:
                asset.rdm_offer_base[ts] = asset.dispatch.get(ts, 0.0)
                up = math.floor(asset.av_up.get(ts, 0.0))
                down = math.floor(asset.av_down.get(ts, 0.0))
                if up >= 1:
                    price = spec.srmc + self._rdm_markup(SELL, up, spec, ts, expected_prices, pricing)
                    orders.append(self._rdm_order(SELL, up, ts, 1, price, order_kind, name, spec))
                if down >= 1:
                    price = spec.srmc - self._rdm_markup(BUY, down, spec, ts, expected_prices, pricing)
                    orders.append(self._rdm_order(BUY, down, ts, 1, price, order_kind, name, spec))
            if with_startstop:
                orders.extend(
                    self._start_stop_blocks(asset, deliveries, order_kind, expected_prices, pricing)
                )
        return orders

    def _rdm_order(self, direction, qty, start, duration, price, kind, asset_name, spec):
        return Order(
            agent_id=self.agent_id,
            market=RDM,
            direction=direction,
            quantity=float(qty),
            delivery_start=start,
            price=price,
            delivery_duration=duration,
            order_kind=kind,
            order_id=self._next_order_id(RDM),
            area=spec.location,
            asset_id=asset_name,
        )

    def _rdm_markup(self, direction, qty_mw, spec, ts, expected_prices, pricing) -> float:
        """Opportunity plus ramping mark-up magnitude in EUR/MWh.

        Partial-call and double-score components are zero under the
        all-or-none pay-as-bid design and are not modeled.
        """
        if pricing == "srmc":
            return 0.0
        short_exp, long_exp = expected_prices(ts)
        offer_mwh = qty_mw * MTU_HOURS
        markup = 0.0
        if pricing in ("all_markup", "opportunity_markup"):
            if direction == SELL:
                forgone = max(0.0, long_exp - spec.srmc)
            else:
                forgone = max(0.0, spec.srmc - short_exp)
            markup += risk_markup(forgone, offer_mwh, offer_mwh)
        if pricing in ("all_markup", "ramping_markup"):
            ramp = (spec.ramp_limit_up if direction == SELL else spec.ramp_limit_down) * spec.pmax
            ramp_energy = _ramp_spill_mwh(qty_mw, ramp)
            if direction == SELL:
                loss = max(0.0, spec.srmc - long_exp)  # pre/post excess is long
            else:
                loss = max(0.0, short_exp - spec.srmc)  # pre/post deficit is short
            markup += risk_markup(loss, ramp_energy, offer_mwh)
        return markup

    def _start_stop_blocks(self, asset, deliveries, order_kind, expected_prices, pricing):
        """All-or-none blocks from offline (start) and minimum-load (stop) runs."""
        spec = asset.spec
        if spec.pmin <= 0:
            return []
        orders = []
        off_run, min_run = [], []

        def flush(run, direction, min_len):
            blocks = []
            while len(run) >= 2 * min_len:
                blocks.append(run[:min_len])
                run = run[min_len:]
            if len(run) >= min_len:
                blocks.append(run)
            for block in blocks:
                duration = len(block)
                fixed = spec.start_up_cost if direction == SELL else spec.shut_down_cost
                price = spec.srmc
                if pricing in ("all_markup", "startstop_markup"):
                    offer_mwh = spec.pmin * duration * MTU_HOURS
                    fee = risk_markup(fixed, 1.0, offer_mwh) if fixed else 0.0
                    price = spec.srmc + fee if direction == SELL else spec.srmc - fee
                orders.append(
                    self._rdm_order(direction, spec.pmin, block[0], duration, price,
                                    order_kind, spec.name, spec)
                )

        for ts in deliveries:
            sd = asset.dispatch.get(ts, 0.0)
            if sd < 1e-9 and asset.cap_at(ts) >= spec.pmin:
                off_run.append(ts)
            else:
                if len(off_run) >= max(spec.min_up_time, 1):
                    flush(off_run, SELL, spec.min_up_time)
                off_run = []
            at_min = abs(sd - spec.pmin) < 1e-9 and not asset.must_run_mw.get(ts)
            if at_min:
                min_run.append(ts)
            else:
                if len(min_run) >= max(spec.min_down_time, 1):
                    flush(min_run, BUY, spec.min_down_time)
                min_run = []
        if len(off_run) >= max(spec.min_up_time, 1):
            flush(off_run, SELL, spec.min_up_time)
        if len(min_run) >= max(spec.min_down_time, 1):
            flush(min_run, BUY, spec.min_down_time)
        return orders

    def place_idm_orders(self, deliveries: list[TimeStamp], now: TimeStamp,
                         rng, best_prices, dam_price) -> list[Order]:
        """Small random capacity quotes plus imbalance-closing orders.

        ``best_prices(ts)`` returns (best_bid, best_ask) of the book and
        ``dam_price(ts)`` the day-ahead price used as impatience reference.
        """
        orders = []
        small_random = self.strategy.IDM_quantity in ("random", "small_random")
        for name in sorted(self.assets):
            asset = self.assets[name]
            spec = asset.spec
            for ts in deliveries:
                rr_up = asset.rr_up.get(ts, 0.0)
                rr_down = asset.rr_down.get(ts, 0.0)
                qty_up = self._small_random_qty(rng, rr_up) if small_random else math.floor(rr_up)
                qty_down = self._small_random_qty(rng, rr_down) if small_random else math.floor(rr_down)
                bid, ask = best_prices(ts)
                sell_price = buy_price = None
                if self.strategy.IDM_pricing == "srmc+-1":
                    sell_price, buy_price = spec.srmc + 1, spec.srmc - 1
                else:  # marginal_orderbook_strategy
                    sell_price = marginal_orderbook_price(SELL, spec.srmc, bid, ask)
                    buy_price = marginal_orderbook_price(BUY, spec.srmc, bid, ask)
                if qty_up >= 1:
                    orders.append(self._idm_limit(SELL, qty_up, ts, sell_price, name))
                # suppress a buy that would cross the own sell at equal price
                if qty_down >= 1 and not (qty_up >= 1 and buy_price >= sell_price):
                    orders.append(self._idm_limit(BUY, qty_down, ts, buy_price, name))
        orders.extend(self._imbalance_orders(deliveries, now, dam_price, best_prices))
        return orders

    def _small_random_qty(self, rng, headroom: float) -> int:
        cap = min(SMALL_RANDOM_MAX_MW, math.floor(headroom))
        if cap < 1:
            return 0
        return int(rng.integers(1, cap + 1))

    def _idm_limit(self, direction, qty, ts, price, asset_name, kind=LIMIT):
        return Order(
            agent_id=self.agent_id,
            market=IDM,
            direction=direction,
            quantity=float(qty),
            delivery_start=ts,
            price=None if kind == MARKET else price,
            delivery_duration=1,
            order_kind=kind,
            order_id=self._next_order_id(IDM),
            asset_id=asset_name,
        )

    def _imbalance_orders(self, deliveries, now, dam_price, best_prices) -> list[Order]:
        """Close scheduled imbalances on the intraday market.

        The concession above/below the reference price grows linearly as
        gate closure nears; the last tradable step sends market orders.
        """
        orders = []
        for ts in deliveries:
            imbalance = self.scheduled_imbalance.get(ts, 0.0)
            qty = math.floor(abs(imbalance))
            if qty < 1:
                continue
            direction = BUY if imbalance < 0 else SELL
            lead = mtu_distance(now, ts)
            if lead <= 2:  # gate closes after this step
                orders.append(self._idm_limit(direction, qty, ts, None, "imbalance", kind=MARKET))
                continue
            remaining = max(0.0, min(1.0, (lead - 2) / IMPATIENCE_LOOKAHEAD_MTUS))
            concession = (1.0 - remaining) * IMPATIENCE_MAX_CONCESSION
            ref = dam_price(ts)
            if ref is None:
                ref = DAM_PRICE_FALLBACK
            price = ref + concession if direction == BUY else ref - concession
            orders.append(self._idm_limit(direction, qty, ts, quantize_price(price), "imbalance"))
        return orders

    def place_bem_orders(self, delivery: TimeStamp) -> list[Order]:
        """Remaining one-ISP ramp capacity at marginal cost, gate-closure timed."""
        orders = []
        for name in sorted(self.assets):
            asset = self.assets[name]
            spec = asset.spec
            up = math.floor(asset.rr_up.get(delivery, 0.0))
            down = math.floor(asset.rr_down.get(delivery, 0.0))
            common = dict(
                agent_id=self.agent_id,
                market=BEM,
                delivery_start=delivery,
                price=spec.srmc,
                delivery_duration=1,
                order_kind=LIMIT,
                area=spec.location,
                asset_id=name,
            )
            if up >= 1:
                orders.append(Order(direction=SELL, quantity=float(up),
                                    order_id=self._next_order_id(BEM), **common))
            if down >= 1:
                orders.append(Order(direction=BUY, quantity=float(down),
                                    order_id=self._next_order_id(BEM), **common))
        return orders


def _ramp_spill_mwh(qty_mw: float, ramp_mw: float) -> float:
    """Energy delivered outside the window while ramping a block in and out.

    A linear staircase needs ceil(q/ramp)-1 extra MTUs on each side; the
    spill per MTU k is q - k*ramp.
    """
    if ramp_mw <= 0 or qty_mw <= ramp_mw:
        return 0.0
    steps = math.ceil(qty_mw / ramp_mw) - 1
    spill = sum(max(0.0, qty_mw - k * ramp_mw) for k in range(1, steps + 1))
    return 2 * spill * MTU_HOURS
