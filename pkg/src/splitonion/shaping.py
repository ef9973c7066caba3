"""Constant-rate flowlet shaping.

Senders emit exactly one packet per slot (data, plain chaff, or a splittable
chaff packet aimed at one hop).  Nodes emit one packet per slot per flowlet,
falling back on cached split children and counting failures when both queues
are empty.

Packets are opaque here.  The sender builds them through a `PacketBuilder`,
so the same policy drives both the real codec and the simulator's fast
token packets.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Optional, Protocol, Sequence

NS_PER_S = 1_000_000_000


class FlowletTerminated(Exception):
    pass


@dataclass(frozen=True)
class FlowletConfig:
    rate_B: float  # packets per second
    lifetime_T: float  # seconds
    fail_threshold_H: int = 2
    chaff_cap_Lchf: int = 3
    split_prob: tuple = ()  # per hop, index 0 is the first node
    pad_max: int = 16
    failure_mode: str = "consecutive"  # or "cumulative"

    def __post_init__(self):
        if self.rate_B <= 0:
            raise ValueError("rate_B must be positive")
        if self.lifetime_T <= 0:
            raise ValueError("lifetime_T must be positive")
        if self.fail_threshold_H < 1:
            raise ValueError("H must be >= 1")
        if self.chaff_cap_Lchf < 0:
            raise ValueError("Lchf must be >= 0")
        if any(not 0 <= p <= 1 for p in self.split_prob):
            raise ValueError("split probabilities must lie in [0, 1]")
        if self.pad_max < 0:
            raise ValueError("pad_max must be >= 0")
        if self.failure_mode not in ("consecutive", "cumulative"):
            raise ValueError(f"unknown failure_mode {self.failure_mode!r}")
        object.__setattr__(self, "split_prob", tuple(float(p) for p in self.split_prob))

    @property
    def slot_ns(self) -> int:
        return round(NS_PER_S / self.rate_B)

    @property
    def lifetime_ns(self) -> int:
        return round(self.lifetime_T * NS_PER_S)

    @property
    def lifetime_slots(self) -> int:
        return -(-self.lifetime_ns // self.slot_ns)

    def probs_for(self, n_hops: int) -> list:
        """Split probability per hop of an n-hop path; the first hop never splits."""
        probs = list(self.split_prob[:n_hops]) + [0.0] * max(0, n_hops - len(self.split_prob))
        if probs:
            probs[0] = 0.0
        return probs


def uniform_split(p: float, n_hops: int) -> tuple:
    """Same split probability at every hop that may split."""
    return (0.0,) + (p,) * (n_hops - 1)


class PacketKind(enum.Enum):
    DATA = "data"
    CHAFF = "chaff"
    SPLIT = "split"


class PacketBuilder(Protocol):
    def data(self, payload: Any, now: int) -> Any: ...
    def chaff(self, now: int) -> Any: ...
    def splittable(self, hop: int, now: int) -> Any: ...


@dataclass
class Emission:
    kind: PacketKind
    packet: Any
    split_hop: Optional[int] = None


@dataclass
class SenderFlowlet:
    config: FlowletConfig
    n_hops: int
    builder: PacketBuilder
    start_ns: int = 0
    data_queue: deque = field(default_factory=deque)
    slots_emitted: int = 0
    pad_remaining: Optional[int] = None  # set by sender_shutdown
    stopped: bool = False
    counts: dict = field(default_factory=lambda: {k: 0 for k in PacketKind})

    def __post_init__(self):
        self._probs = self.config.probs_for(self.n_hops)

    @property
    def next_slot_ns(self) -> int:
        return self.start_ns + self.slots_emitted * self.config.slot_ns

    @property
    def end_ns(self) -> int:
        return self.start_ns + self.config.lifetime_ns

    @property
    def active(self) -> bool:
        return not self.stopped and self.next_slot_ns < self.end_ns


def sender_emit(flowlet: SenderFlowlet, now: int, rng) -> Emission:
    """Produce the single packet for the current slot.

    One uniform draw per hop is consumed every slot, split or not, so the
    random stream never depends on the data pattern.
    """
    if not flowlet.active:
        flowlet.stopped = True
        raise FlowletTerminated("flowlet is no longer active")
    draws = rng.random(flowlet.n_hops)
    hop = next((i for i, (u, p) in enumerate(zip(draws, flowlet._probs)) if u < p), None)
    b = flowlet.builder
    if hop is not None:
        em = Emission(PacketKind.SPLIT, b.splittable(hop, now), hop)
    elif flowlet.data_queue and flowlet.pad_remaining is None:
        em = Emission(PacketKind.DATA, b.data(flowlet.data_queue.popleft(), now))
    else:
        em = Emission(PacketKind.CHAFF, b.chaff(now))
    flowlet.counts[em.kind] += 1
    flowlet.slots_emitted += 1
    if flowlet.pad_remaining is not None:
        flowlet.pad_remaining -= 1
        if flowlet.pad_remaining <= 0:
            flowlet.stopped = True
    return em


def sender_shutdown(flowlet: SenderFlowlet, rng) -> int:
    """Schedule a random number of trailing chaff slots, then stop."""
    pad = int(rng.integers(0, flowlet.config.pad_max + 1))
    flowlet.pad_remaining = pad
    if pad == 0:
        flowlet.stopped = True
    return pad


class TickAction(enum.Enum):
    EMIT = "emit"
    EMIT_FROM_CHAFF = "emit_from_chaff"
    COUNT_FAILURE = "count_failure"
    TERMINATE = "terminate"


@dataclass
class TickResult:
    action: TickAction
    packet: Any = None


@dataclass
class CachedChaff:
    """A split child already processed by this node, ready to forward."""

    packet: Any
    route: Any = None
    expires_at: Optional[int] = None  # ns


@dataclass
class NodeFlowletState:
    config: FlowletConfig
    chaff_queue: deque = field(default_factory=deque)
    data_queue: deque = field(default_factory=deque)
    fail_count: int = 0
    terminated: bool = False
    last_slot: Optional[int] = None
    evicted: int = 0
    dropped_children: int = 0


def node_accept_split(state: NodeFlowletState, children: Sequence) -> int:
    """Cache split children; anything beyond Lchf is discarded.  Returns the number kept."""
    kept = 0
    for child in children:
        if len(state.chaff_queue) < state.config.chaff_cap_Lchf:
            state.chaff_queue.append(child)
            kept += 1
        else:
            state.dropped_children += 1
    return kept


def _evict_expired(state: NodeFlowletState, now: int) -> None:
    q = state.chaff_queue
    if not q:
        return
    keep = [c for c in q if getattr(c, "expires_at", None) is None or c.expires_at > now]
    state.evicted += len(q) - len(keep)
    if len(keep) != len(q):
        state.chaff_queue = deque(keep)


def node_tick(state: NodeFlowletState, data_arrival=None, now: int = 0) -> TickResult:
    """Emit one packet for this flowlet's slot, or record a failure."""
    if state.terminated:
        return TickResult(TickAction.TERMINATE)
    state.last_slot = now
    if data_arrival is not None:
        state.data_queue.append(data_arrival)
    _evict_expired(state, now)
    if state.data_queue:
        res = TickResult(TickAction.EMIT, state.data_queue.popleft())
    elif state.chaff_queue:
        res = TickResult(TickAction.EMIT_FROM_CHAFF, state.chaff_queue.popleft())
    else:
        state.fail_count += 1
        if state.fail_count > state.config.fail_threshold_H:
            state.terminated = True
            state.chaff_queue.clear()
            state.data_queue.clear()
            return TickResult(TickAction.TERMINATE)
        return TickResult(TickAction.COUNT_FAILURE)
    if state.config.failure_mode == "consecutive":
        state.fail_count = 0
    return res
