"""Exception types shared across the simulator."""


class MarketSimError(Exception):
    """Base class for simulator errors."""


class OrderValidationError(MarketSimError):
    """Order rejected by market rules (kind, gate, or field checks)."""


class OverMatchError(MarketSimError):
    """Attempt to reduce an order below zero remaining quantity."""


class InfeasibleProblemError(MarketSimError):
    """Dispatch problem has no feasible solution under slack-free mode."""

    def __init__(self, message, constraint_class=None):
        super().__init__(message)
        self.constraint_class = constraint_class


class ClearingError(MarketSimError):
    """Fatal clearing failure; carries the market and timestamp."""

    def __init__(self, message, market=None, time=None):
        super().__init__(message)
        self.market = market
        self.time = time


class ScenarioError(MarketSimError):
    """Scenario file violates its schema (reported with file/row/column)."""


class VocabularyError(ScenarioError):
    """Configuration name outside the accepted design-variable vocabulary."""


class NotImplementedOptionError(VocabularyError):
    """Name is recognized vocabulary but has no implementation."""

    def __init__(self, name, where=""):
        super().__init__(f"'{name}' is recognized but not implemented ({where})")
        self.option = name


class MissingPriceKeyError(MarketSimError):
    """Conditional imbalance price table has no entry for a (bin, state) key."""
