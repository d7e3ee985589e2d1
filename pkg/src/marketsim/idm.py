"""Continuous intraday double auction with an open order book.

Each arriving order walks the opposite side of the book for its delivery
MTU in price-time priority. A cross trades at the resting (older) order's
price for the smaller of the two remaining quantities and the walk
continues until the newcomer is exhausted or the book no longer crosses.
Unmatched limit orders rest; unmatched market orders are cancelled
(immediate-or-cancel). Within one submission batch the submitter's own
orders are processed most aggressive first.
"""
from __future__ import annotations

from .clock import TimeStamp
from .orders import BUY, MARKET, SELL, Order, OrderBook, Transaction


def _crosses(incoming: Order, resting: Order) -> bool:
    if incoming.price is None or resting.price is None:
        return True  # market orders accept any price
    if incoming.direction == BUY:
        return resting.price <= incoming.price
    return incoming.price <= resting.price


def _aggressiveness(order: Order) -> float:
    # ascending sells / descending buys; market orders lead
    price = order.sort_price()
    return price if order.direction == SELL else -price


def match(
    book: OrderBook,
    incoming_orders: list[Order],
    now: TimeStamp,
    allow_self_match: bool = False,
) -> list[Transaction]:
    """Match a batch of arriving orders against the book, mutating it.

    Returns the executed trades. Resting quantities are reduced in place;
    exhausted orders leave the book; surviving limit newcomers are
    inserted; market newcomers never rest.
    """
    trades = []
    for incoming in sorted(incoming_orders, key=_aggressiveness):
        book.register(incoming, now=now)
        opposite = BUY if incoming.direction == SELL else SELL
        while incoming.remaining_quantity > 0:
            view = book.sorted_view(opposite, incoming.delivery_start)
            if not allow_self_match:
                view = [o for o in view if o.agent_id != incoming.agent_id]
            if not view or not _crosses(incoming, view[0]):
                break
            resting = view[0]
            qty = min(incoming.remaining_quantity, resting.remaining_quantity)
            buyer, seller = (
                (incoming, resting) if incoming.direction == BUY else (resting, incoming)
            )
            trades.append(
                Transaction(
                    executed_at=now,
                    market=book.market,
                    delivery=incoming.delivery_start,
                    buyer=buyer.agent_id,
                    seller=seller.agent_id,
                    price=resting.price,
                    quantity=qty,
                    buy_order_id=buyer.order_id,
                    sell_order_id=seller.order_id,
                    buyer_asset=buyer.asset_id,
                    seller_asset=seller.asset_id,
                )
            )
            book.reduce(resting.order_id, qty)
            incoming.remaining_quantity -= qty
        if incoming.remaining_quantity > 0 and incoming.order_kind != MARKET:
            book.insert(incoming, now=now)
    return trades


def weighted_mean_price(trades: list[Transaction]) -> float | None:
    """Quantity-weighted mean price; None when there are no trades."""
    total = sum(t.quantity for t in trades)
    if total <= 0:
        return None
    return sum(t.price * t.quantity for t in trades) / total
