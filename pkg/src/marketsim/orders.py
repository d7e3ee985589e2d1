"""Order data model and per-market order books.

Books keep price-time priority: sells rank by ascending price, buys by
descending price, ties broken by ascending insertion sequence. Quantities
are MW held over one MTU; energy per MTU is quantity * 0.25 MWh.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .clock import MTU_HOURS, TimeStamp, add_mtus
from .errors import OrderValidationError, OverMatchError

# markets
DAM = "DAM"
IDM = "IDM"
RDM = "RDM"
BEM = "BEM"

# order kinds
LIMIT = "limit"
MARKET = "market"
ALL_OR_NONE_BLOCK = "all_or_none_block"
FILL_OR_KILL = "fill_or_kill"
#: grid-operator demand rows; exempt from the market's supply-kind rules
DEMAND = "demand"

BUY = "buy"
SELL = "sell"

#: price tick; all order prices are quantized to two decimals
PRICE_TICK = 0.1


def quantize_price(price):
    """Snap a price to the two-decimal grid used throughout the simulator."""
    if price is None:
        return None
    return round(float(price), 2)


@dataclass
class Order:
    agent_id: str
    market: str
    direction: str  # buy | sell
    quantity: float  # MW
    delivery_start: TimeStamp
    price: float | None = None  # EUR/MWh; None for market orders
    delivery_duration: int = 1  # MTUs
    order_kind: str = LIMIT
    order_id: str | None = None
    area: str | None = None  # delivery zone, used by RDM
    asset_id: str | None = None  # originating asset, used for mark-up reports
    remaining_quantity: float = field(default=None)  # type: ignore[assignment]
    init_time: tuple = field(default=None)  # type: ignore[assignment]  # (day, mtu, seq)

    def __post_init__(self):
        self.price = quantize_price(self.price)
        if self.quantity < 0:
            raise OrderValidationError(f"negative quantity {self.quantity}")
        if self.delivery_duration < 1:
            raise OrderValidationError("delivery_duration must be >= 1 MTU")
        if self.order_kind == MARKET:
            if self.price is not None:
                raise OrderValidationError("market orders carry no price")
            if self.delivery_duration != 1:
                raise OrderValidationError("market orders cover a single MTU")
        elif self.order_kind != DEMAND and self.price is None:
            raise OrderValidationError(f"{self.order_kind} order requires a price")
        if self.remaining_quantity is None:
            self.remaining_quantity = self.quantity

    @property
    def delivery_end(self) -> TimeStamp:
        """Last delivered MTU (inclusive)."""
        return add_mtus(self.delivery_start, self.delivery_duration - 1)

    def covers(self, t: TimeStamp) -> bool:
        return self.delivery_start <= t <= self.delivery_end

    def delivery_mtus(self) -> list[TimeStamp]:
        return [add_mtus(self.delivery_start, k) for k in range(self.delivery_duration)]

    @property
    def energy_mwh(self) -> float:
        return self.quantity * self.delivery_duration * MTU_HOURS

    def sort_price(self) -> float:
        """Price key with market orders ranked most aggressive."""
        if self.price is not None:
            return self.price
        return float("-inf") if self.direction == SELL else float("inf")


@dataclass(frozen=True)
class OrderTypeRule:
    """Which order kinds (and delivery durations) a market admits."""

    name: str
    kinds: frozenset
    single_mtu_only: bool = False

    def permits(self, order: Order) -> bool:
        if order.order_kind == DEMAND:
            return True
        if order.order_kind not in self.kinds:
            return False
        if self.single_mtu_only and order.delivery_duration != 1:
            return False
        return True


ORDER_TYPE_RULES = {
    "fill_or_kill": OrderTypeRule("fill_or_kill", frozenset({FILL_OR_KILL})),
    "limit_and_market": OrderTypeRule(
        "limit_and_market", frozenset({LIMIT, MARKET}), single_mtu_only=True
    ),
    "all_or_none_ISP": OrderTypeRule(
        "all_or_none_ISP", frozenset({ALL_OR_NONE_BLOCK}), single_mtu_only=True
    ),
    "all_or_none_block": OrderTypeRule(
        "all_or_none_block", frozenset({ALL_OR_NONE_BLOCK})
    ),
    "limit_ISP": OrderTypeRule("limit_ISP", frozenset({LIMIT}), single_mtu_only=True),
    "limit_block": OrderTypeRule("limit_block", frozenset({LIMIT})),
    "FRR": OrderTypeRule("FRR", frozenset({LIMIT}), single_mtu_only=True),
}


class OrderBook:
    """Open orders of one market with price-time sorted views."""

    def __init__(self, market: str, order_type_rule: OrderTypeRule | None = None):
        self.market = market
        self.rule = order_type_rule
        self.orders: dict[str, Order] = {}
        self._seq = 0
        # delivery MTU -> order ids, so per-period views stay cheap
        self._by_mtu: dict[tuple[int, int], set] = {}

    def __len__(self):
        return len(self.orders)

    def _index(self, order: Order):
        for ts in order.delivery_mtus():
            self._by_mtu.setdefault(ts.as_tuple(), set()).add(order.order_id)

    def _unindex(self, order: Order):
        for ts in order.delivery_mtus():
            bucket = self._by_mtu.get(ts.as_tuple())
            if bucket is not None:
                bucket.discard(order.order_id)

    def register(self, order: Order, now: TimeStamp | None = None) -> str:
        """Assign an id and arrival sequence without storing the order.

        Used for arriving orders that are matched before (possibly)
        resting; the sequence fixes their price-time rank on arrival.
        """
        if order.market != self.market:
            raise OrderValidationError(
                f"order for market {order.market} sent to {self.market} book"
            )
        if self.rule is not None and not self.rule.permits(order):
            raise OrderValidationError(
                f"{self.market} accepts order types '{self.rule.name}'; "
                f"rejected {order.order_kind} with duration {order.delivery_duration}"
            )
        if order.init_time is None:
            self._seq += 1
            if order.order_id is None:
                order.order_id = f"{self.market}-{self._seq}"
            stamp = now or order.delivery_start
            order.init_time = (stamp.day, stamp.mtu, self._seq)
        return order.order_id

    def insert(self, order: Order, now: TimeStamp | None = None) -> str:
        """Validate against market rules, assign init sequence, store.

        Raises OrderValidationError when the order kind is not permitted
        by the market's configured order types.
        """
        self.register(order, now=now)
        if order.order_id in self.orders:
            raise OrderValidationError(f"duplicate order id {order.order_id}")
        self.orders[order.order_id] = order
        self._index(order)
        return order.order_id

    def sorted_view(self, direction: str, delivery_period: TimeStamp | None = None,
                    include_demand: bool = False) -> list[Order]:
        """Open orders of one side, best price first, earlier init first.

        Restricted to orders overlapping ``delivery_period`` when given.
        Pure: does not mutate the book.
        """
        sellside = direction == SELL
        if delivery_period is None:
            candidates = self.orders.values()
        else:
            ids = self._by_mtu.get(delivery_period.as_tuple(), ())
            candidates = (self.orders[i] for i in ids if i in self.orders)
        view = [
            o
            for o in candidates
            if o.direction == direction
            and o.remaining_quantity > 0
            and (include_demand or o.order_kind != DEMAND)
        ]
        view.sort(key=lambda o: (o.sort_price() if sellside else -o.sort_price(), o.init_time))
        return view

    def reduce(self, order_id: str, matched_qty: float) -> Order:
        """Decrement remaining quantity; drop the order once exhausted."""
        order = self.orders[order_id]
        if matched_qty > order.remaining_quantity + 1e-9:
            raise OverMatchError(
                f"matched {matched_qty} MW exceeds remaining "
                f"{order.remaining_quantity} MW of {order_id}"
            )
        order.remaining_quantity = max(0.0, order.remaining_quantity - matched_qty)
        if order.remaining_quantity <= 1e-9:
            order.remaining_quantity = 0.0
            del self.orders[order_id]
            self._unindex(order)
        return order

    def remove(self, order_id: str) -> None:
        order = self.orders.pop(order_id, None)
        if order is not None:
            self._unindex(order)

    def remove_agent_orders(self, agent_id: str, keep_demand: bool = True) -> None:
        """Withdraw an agent's resting orders (re-quoted every step)."""
        drop = [
            oid
            for oid, o in self.orders.items()
            if o.agent_id == agent_id and not (keep_demand and o.order_kind == DEMAND)
        ]
        for oid in drop:
            self._unindex(self.orders[oid])
            del self.orders[oid]

    def remove_market_orders(self) -> None:
        """Cancel resting market orders (immediate-or-cancel)."""
        drop = [oid for oid, o in self.orders.items() if o.order_kind == MARKET]
        for oid in drop:
            self._unindex(self.orders[oid])
            del self.orders[oid]

    def snapshot_rows(self, step: TimeStamp) -> list[dict]:
        """One row per open order for the per-step book dump."""
        rows = []
        for o in sorted(self.orders.values(), key=lambda o: o.init_time):
            rows.append(
                {
                    "step_day": step.day,
                    "step_mtu": step.mtu,
                    "market": self.market,
                    "order_id": o.order_id,
                    "agent_id": o.agent_id,
                    "asset_id": o.asset_id,
                    "direction": o.direction,
                    "order_kind": o.order_kind,
                    "area": o.area,
                    "price": o.price,
                    "quantity": o.quantity,
                    "remaining_quantity": o.remaining_quantity,
                    "delivery_day": o.delivery_start.day,
                    "delivery_mtu": o.delivery_start.mtu,
                    "delivery_duration": o.delivery_duration,
                }
            )
        return rows


@dataclass(frozen=True)
class Transaction:
    """A settled trade for a single delivery MTU.

    Block clearings are flattened to one transaction per covered MTU so
    downstream accounting works on a uniform grain.
    """

    executed_at: TimeStamp
    market: str
    delivery: TimeStamp
    buyer: str
    seller: str
    price: float  # EUR/MWh
    quantity: float  # MW over this MTU
    buy_order_id: str | None = None
    sell_order_id: str | None = None
    buyer_asset: str | None = None
    seller_asset: str | None = None

    @property
    def energy_mwh(self) -> float:
        return self.quantity * MTU_HOURS

    @property
    def cash(self) -> float:
        """EUR paid by the buyer to the seller for this MTU."""
        return self.price * self.energy_mwh


def expand_block_transaction(tx: Transaction, duration: int) -> list[Transaction]:
    """Per-MTU copies of a block trade starting at tx.delivery."""
    return [
        replace(tx, delivery=add_mtus(tx.delivery, k)) for k in range(duration)
    ]
