"""Event queue on an integer-nanosecond clock."""

from __future__ import annotations

import enum
import heapq
import itertools
from typing import Any, NamedTuple


class EventKind(enum.IntEnum):
    # value doubles as the tie-break priority at equal times
    FRAME_ARRIVAL = 0
    FLOWLET_START = 1
    FLOWLET_STOP = 2
    MIX_FLUSH = 3
    SLOT_TICK = 4
    OBSERVE = 5


class Event(NamedTuple):
    time: int
    kind: EventKind
    seq: int
    payload: Any


class EventQueue:
    """Min-heap ordered by (time, kind, insertion order)."""

    def __init__(self):
        self._heap = []
        self._seq = itertools.count()

    def push(self, time: int, kind: EventKind, payload=None) -> None:
        if not isinstance(time, int):
            raise TypeError("event times are integer nanoseconds")
        heapq.heappush(self._heap, Event(time, kind, next(self._seq), payload))

    def pop(self) -> Event:
        return heapq.heappop(self._heap)

    def peek_time(self):
        return self._heap[0].time if self._heap else None

    def __len__(self):
        return len(self._heap)
