"""Day-ahead auction: hourly merit order against an inelastic residual load.

One buyer (the exogenous residual load) faces the collected sell offers.
With a single zone, additive costs and no coupling between hours, least
cost clearing reduces to sorting offers by price per hourly block, so no
optimization model is needed. The marginal offer may be cleared partially.
Results are uniform-priced per hour and replicated onto the hour's four
MTUs for settlement and reporting.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .clock import TimeStamp, hour_mtus
from .orders import BUY, DAM, Order, Transaction

#: synthetic counterparty holding the exogenous demand
RESIDUAL_LOAD_BUYER = "DA_residual_load"


@dataclass
class HourResult:
    day: int
    hour: int
    load: float  # MW
    price: float | None  # EUR/MWh; None when nothing traded
    cleared: dict[str, float]  # order_id -> MW
    unserved: float = 0.0  # MW of load left unmet (scarcity)

    @property
    def scarcity(self) -> bool:
        return self.unserved > 0


@dataclass
class DamResult:
    hours: list[HourResult] = field(default_factory=list)

    def price_series(self) -> dict[TimeStamp, float]:
        """Uniform hourly prices replicated onto each 15-minute MTU."""
        prices = {}
        for h in self.hours:
            if h.price is None:
                continue
            for ts in hour_mtus(h.day, h.hour):
                prices[ts] = h.price
        return prices

    def cleared_energy_mwh(self) -> float:
        return sum(sum(h.cleared.values()) for h in self.hours)  # MW x 1h blocks

    def turnover_eur(self) -> float:
        return sum(
            (h.price or 0.0) * sum(h.cleared.values()) for h in self.hours
        )


def clear_dam(
    sell_orders: list[Order],
    residual_load: dict[tuple[int, int], float],
    unavailability: dict[tuple[str, int, int], float] | None = None,
) -> DamResult:
    """Merit-order clearing per hourly block.

    ``residual_load`` maps (day, hour) to MW; ``unavailability`` maps
    (asset_id, day, hour) to the available fraction of the offer, applied
    as a cap before clearing. Offers are expected to cover whole hours
    (delivery on the hour's first MTU). Scarcity leaves unserved load and
    prices the hour at the highest accepted offer.
    """
    unavailability = unavailability or {}
    result = DamResult()
    for (day, hour), load in sorted(residual_load.items()):
        block = [
            o
            for o in sell_orders
            if o.delivery_start.day == day and o.delivery_start.hour == hour
        ]
        block.sort(key=lambda o: (o.price, o.init_time or (0, 0, 0)))
        remaining = load
        cleared: dict[str, float] = {}
        price = None
        for order in block:
            cap = unavailability.get((order.asset_id, day, hour), 1.0)
            offered = order.quantity * cap
            if remaining <= 0 or offered <= 0:
                continue
            take = min(offered, remaining)
            cleared[order.order_id] = take
            remaining -= take
            price = order.price
        result.hours.append(
            HourResult(day=day, hour=hour, load=load, price=price, cleared=cleared, unserved=remaining)
        )
    return result


def settle_dam(result: DamResult, orders: list[Order], executed_at: TimeStamp) -> list[Transaction]:
    """One transaction per cleared order per delivery MTU at the uniform price."""
    by_id = {o.order_id: o for o in orders}
    transactions = []
    for h in result.hours:
        for order_id, qty in h.cleared.items():
            order = by_id[order_id]
            for ts in hour_mtus(h.day, h.hour):
                transactions.append(
                    Transaction(
                        executed_at=executed_at,
                        market=DAM,
                        delivery=ts,
                        buyer=RESIDUAL_LOAD_BUYER,
                        seller=order.agent_id,
                        price=h.price,
                        quantity=qty,
                        sell_order_id=order_id,
                        seller_asset=order.asset_id,
                    )
                )
    return transactions
