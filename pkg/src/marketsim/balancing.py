"""Balancing-energy order intake, control states, and imbalance settlement.

The balancing market only collects orders for analysis; it has no clearing
and no settlement. Each step a regulation control state is drawn from an
exogenous distribution. The imbalance mechanism prices every delivered
ISP either at a fixed default or by sampling an empirical table keyed by
the day-ahead price bin and the control state, then settles each agent's
realized imbalance: shorts pay the short price, longs receive the long
price.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clock import MTU_HOURS, TimeStamp
from .errors import MarketSimError, MissingPriceKeyError, OrderValidationError
from .orders import BEM, Order, OrderBook

#: width of the day-ahead price bins keying the conditional table
DAM_PRICE_BIN_WIDTH = 10.0

FIXED_SINGLE = "fixed_single"
CONDITIONAL_TABLE = "conditional_table"
#: market-rule vocabulary for the conditional regime
DUTCH_PRICING = "Dutch_IB_pricing"


@dataclass
class ControlStateDistribution:
    states: list[int]
    weights: list[float]

    def __post_init__(self):
        if not self.states:
            raise MarketSimError("control state distribution is empty")
        if len(self.states) != len(self.weights):
            raise MarketSimError("control states and weights differ in length")
        if any(w < 0 for w in self.weights):
            raise MarketSimError("negative control state weight")
        total = sum(self.weights)
        if abs(total - 1.0) > 1e-9:
            raise MarketSimError(f"control state weights sum to {total}, not 1")


def sample_control_state(distribution: ControlStateDistribution, rng: np.random.Generator) -> int:
    """One regulation state for the current ISP from the dedicated stream."""
    idx = rng.choice(len(distribution.states), p=distribution.weights)
    return int(distribution.states[idx])


def dam_price_bin(dam_price: float) -> float:
    """Lower edge of the price bin containing dam_price."""
    return float(np.floor(dam_price / DAM_PRICE_BIN_WIDTH) * DAM_PRICE_BIN_WIDTH)


class ImbalancePriceTable:
    """Empirical (short, long) price pairs per (DAM price bin, control state).

    Rows carry sampling weights; weights are normalized per key. Lookup of
    an unseen key raises MissingPriceKeyError.
    """

    def __init__(self, rows):
        # rows: iterable of (dam_bin_low, control_state, short, long, weight)
        self._table: dict[tuple[float, int], list[tuple[float, float, float]]] = {}
        for bin_low, state, short, long_, weight in rows:
            if weight < 0:
                raise MarketSimError("negative weight in imbalance price table")
            key = (float(bin_low), int(state))
            self._table.setdefault(key, []).append((float(short), float(long_), float(weight)))
        if not self._table:
            raise MarketSimError("imbalance price table is empty")

    def keys(self):
        return self._table.keys()

    def sample(self, dam_price: float, control_state: int, rng: np.random.Generator):
        key = (dam_price_bin(dam_price), int(control_state))
        entries = self._table.get(key)
        if not entries:
            raise MissingPriceKeyError(
                f"no imbalance price entry for DAM bin {key[0]} and control state {key[1]}"
            )
        weights = np.array([w for (_, _, w) in entries], dtype=float)
        total = weights.sum()
        if total <= 0:
            raise MarketSimError(f"zero total weight for imbalance price key {key}")
        idx = rng.choice(len(entries), p=weights / total)
        short, long_, _ = entries[idx]
        return short, long_

    def expected_pair(self, dam_price: float, control_state: int):
        """Weight-averaged (short, long) for one key; None when unseen."""
        entries = self._table.get((dam_price_bin(dam_price), int(control_state)))
        if not entries:
            return None
        total = sum(w for (_, _, w) in entries)
        if total <= 0:
            return None
        short = sum(s * w for (s, _, w) in entries) / total
        long_ = sum(l * w for (_, l, w) in entries) / total
        return short, long_


@dataclass
class ImbalancePricing:
    """Pricing regime configuration."""

    regime: str  # fixed_single | conditional_table
    default_price: float = 0.0
    table: ImbalancePriceTable | None = None

    def __post_init__(self):
        if self.regime not in (FIXED_SINGLE, CONDITIONAL_TABLE):
            raise MarketSimError(f"unknown imbalance pricing regime '{self.regime}'")
        if self.regime == CONDITIONAL_TABLE and self.table is None:
            raise MarketSimError("conditional regime requires a price table")


def price_imbalance(
    pricing: ImbalancePricing,
    dam_price: float,
    control_state: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """(short, long) imbalance prices for one ISP."""
    if pricing.regime == FIXED_SINGLE:
        return pricing.default_price, pricing.default_price
    return pricing.table.sample(dam_price, control_state, rng)


def expected_prices(
    pricing: ImbalancePricing,
    distribution: ControlStateDistribution | None,
    dam_price: float,
) -> tuple[float, float]:
    """Expected (short, long) imbalance prices before the state is drawn.

    Used by agents to value risk in mark-ups. Under the conditional
    regime the per-state expectations are mixed with the control-state
    weights; unseen keys fall back to the day-ahead price.
    """
    if pricing.regime == FIXED_SINGLE:
        return pricing.default_price, pricing.default_price
    if distribution is None:
        return dam_price, dam_price
    exp_short = exp_long = weight_sum = 0.0
    for state, weight in zip(distribution.states, distribution.weights):
        pair = pricing.table.expected_pair(dam_price, state)
        if pair is None:
            continue
        exp_short += weight * pair[0]
        exp_long += weight * pair[1]
        weight_sum += weight
    if weight_sum <= 0:
        return dam_price, dam_price
    return exp_short / weight_sum, exp_long / weight_sum


def settle_imbalances(
    imbalances_mw: dict[str, float],
    prices: tuple[float, float],
) -> dict[str, float]:
    """Cashflow per agent for one delivered ISP, buyer-positive EUR.

    A negative (short) position pays the short price per MWh, a positive
    (long) position receives the long price; either way the cashflow is
    position * price * 0.25h, negative when the agent pays.
    """
    short_price, long_price = prices
    settlement = {}
    for agent, mw in imbalances_mw.items():
        price = short_price if mw < 0 else long_price
        settlement[agent] = mw * MTU_HOURS * price if mw != 0 else 0.0
    return settlement


def accept_bem_orders(book: OrderBook, orders: list[Order], now: TimeStamp,
                      gate_closure_offset: int = 2) -> list[str]:
    """Store balancing orders; they rest for analysis and never clear.

    The gate for delivery MTU d closes ``gate_closure_offset`` MTUs ahead
    of d; later submissions are rejected.
    """
    accepted = []
    for order in orders:
        lead = (order.delivery_start.day - now.day) * 96 + (order.delivery_start.mtu - now.mtu)
        if lead <= gate_closure_offset:
            raise OrderValidationError(
                f"{BEM} gate closed for delivery {order.delivery_start.as_tuple()} at {now.as_tuple()}"
            )
        accepted.append(book.insert(order, now=now))
    return accepted
