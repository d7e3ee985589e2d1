"""Simulation clock: days split into 96 market time units of 15 minutes.

A timestamp is a (day, mtu) pair. One MTU equals one imbalance settlement
period and one simulation step. Hours group four consecutive MTUs; the
day-ahead auction trades hourly blocks.
"""
from __future__ import annotations

from dataclasses import dataclass

MTU_PER_DAY = 96
MTU_PER_HOUR = 4
HOURS_PER_DAY = 24
#: fraction of an hour covered by one MTU, converts MW to MWh
MTU_HOURS = 0.25


@dataclass(frozen=True, order=True)
class TimeStamp:
    """(day, mtu) simulation time, ordered lexicographically."""

    day: int
    mtu: int

    def __post_init__(self):
        if self.day < 1:
            raise ValueError(f"day must be >= 1, got {self.day}")
        if not 1 <= self.mtu <= MTU_PER_DAY:
            raise ValueError(f"mtu must be in 1..{MTU_PER_DAY}, got {self.mtu}")

    @property
    def hour(self) -> int:
        """Hour of the day in 1..24 containing this MTU."""
        return (self.mtu - 1) // MTU_PER_HOUR + 1

    def as_tuple(self) -> tuple[int, int]:
        return (self.day, self.mtu)


def advance(t: TimeStamp) -> TimeStamp:
    """Successor timestamp; (d, 96) rolls over to (d+1, 1)."""
    if t.mtu == MTU_PER_DAY:
        return TimeStamp(t.day + 1, 1)
    return TimeStamp(t.day, t.mtu + 1)


def add_mtus(t: TimeStamp, n: int) -> TimeStamp:
    """Timestamp n MTUs after t (n may be negative)."""
    total = (t.day - 1) * MTU_PER_DAY + (t.mtu - 1) + n
    day, mtu = divmod(total, MTU_PER_DAY)
    return TimeStamp(day + 1, mtu + 1)


def mtu_distance(start: TimeStamp, end: TimeStamp) -> int:
    """Number of MTUs from start to end (positive when end is later)."""
    return ((end.day - start.day) * MTU_PER_DAY) + (end.mtu - start.mtu)


def mtu_range(start: TimeStamp, end: TimeStamp) -> list[TimeStamp]:
    """All timestamps from start to end inclusive."""
    if end < start:
        return []
    return [add_mtus(start, i) for i in range(mtu_distance(start, end) + 1)]


def hour_mtus(day: int, hour: int) -> list[TimeStamp]:
    """The four MTUs of an hourly delivery block (hour in 1..24)."""
    first = (hour - 1) * MTU_PER_HOUR + 1
    return [TimeStamp(day, first + k) for k in range(MTU_PER_HOUR)]


@dataclass
class ScheduleHorizon:
    """Window from the current step to the last day-ahead-traded MTU.

    ``end`` always falls on MTU 96 of the most recently auctioned delivery
    day; agents optimize and place orders inside this window only.
    """

    current: TimeStamp
    end: TimeStamp

    def __post_init__(self):
        if self.end < self.current:
            raise ValueError("horizon end before current time")
        if self.end.mtu != MTU_PER_DAY:
            raise ValueError("horizon end must fall on mtu 96")

    def timestamps(self, start: TimeStamp | None = None) -> list[TimeStamp]:
        """Timestamps from ``start`` (default: current) through ``end``."""
        return mtu_range(start or self.current, self.end)

    def contains(self, t: TimeStamp) -> bool:
        return self.current <= t <= self.end

    def extend_to_day(self, day: int) -> None:
        if day > self.end.day:
            self.end = TimeStamp(day, MTU_PER_DAY)

    def advance_current(self) -> None:
        self.current = advance(self.current)
