"""Deterministic discrete-event simulation of flowlets over a node network."""

from __future__ import annotations

import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .. import codec
from ..codec import Ctrl, PacketDropped, PayloadKind
from ..linklayer import FrameTag, LinkReceiver, LinkSender, link_receive, link_send_slot, rate_at
from ..mixer import Mixer, MixerConfig
from ..replay import ReplayConfig, RotatingBloom, Verdict
from ..shaping import (NS_PER_S, CachedChaff, FlowletConfig, FlowletTerminated, NodeFlowletState,
                       PacketKind, SenderFlowlet, TickAction, node_accept_split, node_tick,
                       sender_emit, sender_shutdown)
from .engines import Layer, Provisioned, make_engine
from .events import EventKind, EventQueue
from .topology import ConfigError, Topology
from .workload import Workload

COUNTER_BYTES = 16  # failure counter, last slot, grid anchor and flags per flowlet
_SETUP = struct.Struct(">4sI")


@dataclass(frozen=True)
class SimConfig:
    flowlet: FlowletConfig
    engine: str = "token"
    early_shutdown: bool = True
    delta_max: int = 5
    setup: bool = False
    mix_batch: int = 1
    mix_max_wait_ns: Optional[int] = None
    observe_ns: int = 0  # state sampling period; 0 disables
    record_departures: bool = True
    record_taps: bool = True
    drain_slots: int = 0  # extra time after the last flowlet before padded links stop


@dataclass
class ObserverTrace:
    taps: dict = field(default_factory=lambda: defaultdict(list))  # link -> [(time, length)]
    departures: dict = field(default_factory=lambda: defaultdict(list))  # (node, flowlet) -> [time]
    arrivals: dict = field(default_factory=lambda: defaultdict(list))  # (node, flowlet) -> [time]
    state_samples: list = field(default_factory=list)  # (time, node, bytes)


@dataclass
class RunMetrics:
    success: dict = field(default_factory=dict)  # flowlet -> bool
    sender_counts: dict = field(default_factory=dict)  # flowlet -> {kind: n}
    delivered: dict = field(default_factory=lambda: defaultdict(list))  # flowlet -> [(time, kind, seq)]
    terminations: dict = field(default_factory=dict)  # (node, flowlet) -> time
    last_departure: dict = field(default_factory=dict)  # (node or "sender", flowlet) -> time
    first_departure: dict = field(default_factory=dict)
    drops: Counter = field(default_factory=Counter)
    link_frames: Counter = field(default_factory=Counter)
    link_lost: Counter = field(default_factory=Counter)
    peak_flowlets: dict = field(default_factory=dict)  # node -> count
    peak_chaff_bytes: dict = field(default_factory=dict)
    state_bytes: dict = field(default_factory=dict)  # node -> peak bytes
    replay_bytes: dict = field(default_factory=dict)
    setup_latency_ns: list = field(default_factory=list)
    setup_hop_latency_ns: list = field(default_factory=list)
    spilled_data: int = 0

    @property
    def success_rate(self) -> float:
        return sum(self.success.values()) / len(self.success) if self.success else 1.0

    def _total(self, kind) -> int:
        return sum(c[kind] for c in self.sender_counts.values())

    @property
    def chaff_packets(self) -> int:
        return self._total(PacketKind.CHAFF) + self._total(PacketKind.SPLIT)

    @property
    def data_packets(self) -> int:
        return self._total(PacketKind.DATA)

    @property
    def chaff_fraction(self) -> float:
        total = self.chaff_packets + self.data_packets
        return self.chaff_packets / total if total else 0.0

    @property
    def overhead_ratio(self) -> float:
        return self.chaff_packets / self.data_packets if self.data_packets else 0.0

    def summary(self) -> dict:
        return {
            "flowlets": len(self.success),
            "success_rate": self.success_rate,
            "data_packets": self.data_packets,
            "chaff_packets": self.chaff_packets,
            "overhead_ratio": self.overhead_ratio,
            "delivered_data": sum(1 for v in self.delivered.values() for _, k, _ in v if k == PayloadKind.DATA),
            "delivered_chaff": sum(1 for v in self.delivered.values() for _, k, _ in v if k == PayloadKind.CHAFF),
            "replay_drops": self.drops["replay"],
            "mac_drops": self.drops["mac"],
            "expired_drops": self.drops["expired"],
            "link_lost": sum(self.link_lost.values()),
            "max_state_bytes": max(self.state_bytes.values(), default=0),
            "spilled_data": self.spilled_data,
        }


@dataclass
class _NodeFlowlet:
    state: NodeFlowletState
    flowlet_id: int


class _Node:
    def __init__(self, spec, replay_cfg: Optional[ReplayConfig], mixer: Mixer):
        self.id = spec.node_id
        self.sv = spec.sv
        self.replay = RotatingBloom(replay_cfg) if replay_cfg else None
        self.flowlets = {}
        self.tombstones = set()
        self.mixer = mixer
        self.peak = 0
        self.peak_chaff = 0
        self.chaff_total = 0


class _Link:
    def __init__(self, spec, seed: int, randbytes):
        self.spec = spec
        self.rng = np.random.default_rng([seed, 2, spec.link_id])
        self.tx = LinkSender(spec.padding, randbytes=randbytes) if spec.padding else None
        self.rx = LinkReceiver(spec.padding) if spec.padding else None


class _Sender:
    def __init__(self, spec, flowlet: SenderFlowlet, prov: Provisioned, rng):
        self.spec = spec
        self.flowlet = flowlet
        self.prov = prov
        self.rng = rng
        self.pending = list(spec.data_ns)  # offsets not yet handed to the sender queue
        self.next_seq = 0


class _Builder:
    """Shaping-side packet factory bound to one flowlet."""

    def __init__(self, engine, prov):
        self.engine = engine
        self.prov = prov

    def data(self, seq, now):
        return self.engine.build(self.prov, PayloadKind.DATA, seq, now)

    def chaff(self, now):
        return self.engine.build(self.prov, PayloadKind.CHAFF, None, now)

    def splittable(self, hop, now):
        return self.engine.build(self.prov, PayloadKind.CHAFF, None, now, split_hop=hop)


class Simulation:
    def __init__(self, topology: Topology, workload: Workload, seed: int, config: SimConfig,
                 adversary: Optional[Callable] = None):
        topology.validate()
        self.topo = topology
        self.workload = workload
        self.seed = seed
        self.cfg = config
        self.fc = config.flowlet
        self.slot = self.fc.slot_ns
        self.params = topology.params
        self.engine = make_engine(config.engine, self.params, seed)
        self.adversary = adversary
        self.q = EventQueue()
        self.now = 0
        self.metrics = RunMetrics()
        self.trace = ObserverTrace()
        self._check_workload()

        self._pad_rng = np.random.default_rng([seed, 4])
        replay_cfg = None
        if topology.replay is not None:
            replay_cfg = replace(topology.replay, ttl=topology.replay.ttl * NS_PER_S)
        self.nodes = {}
        for nid, spec in sorted(topology.nodes.items()):
            mix = Mixer(MixerConfig(config.mix_batch, max_wait=config.mix_max_wait_ns),
                        rng=np.random.default_rng([seed, 5, nid]))
            self.nodes[nid] = _Node(spec, replay_cfg, mix)
        self.links = {lid: _Link(spec, seed, self._pad_rng.bytes) for lid, spec in sorted(topology.links.items())}
        self.senders = {}
        self.setup_started = {}
        self._active_senders = 0
        self.horizon = 0
        self.per_flowlet_bytes = self.fc.chaff_cap_Lchf * self.params.packet_len + COUNTER_BYTES

    # -- setup -------------------------------------------------------------

    def _check_workload(self) -> None:
        for f in self.workload.flowlets:
            if not 1 <= len(f.path) <= self.params.max_hops:
                raise ConfigError(f"flowlet {f.flowlet_id} path length {len(f.path)}")
            if f.src not in self.topo.hosts or f.dst not in self.topo.hosts:
                raise ConfigError(f"flowlet {f.flowlet_id} uses an unknown host")
            if self.topo.hosts[f.src].node_id != f.path[0] or self.topo.hosts[f.dst].node_id != f.path[-1]:
                raise ConfigError(f"flowlet {f.flowlet_id} path does not connect its hosts")
            self.topo.route_links(f.src, f.dst, list(f.path))
            if f.data_ns and max(f.data_ns) >= self.fc.lifetime_ns:
                raise ConfigError(f"flowlet {f.flowlet_id} has data beyond its lifetime")

    def run(self):
        fc = self.fc
        last_end = 0
        for f in self.workload.flowlets:
            self.q.push(f.start_ns, EventKind.FLOWLET_START, f)
            last_end = max(last_end, f.start_ns + fc.lifetime_ns)
        n = max((len(f.path) for f in self.workload.flowlets), default=0)
        drain = (fc.chaff_cap_Lchf + fc.fail_threshold_H + 2) * self.slot + self.topo.max_link_delay_ns + self.topo.playout_ns
        self.horizon = last_end + n * drain + self.cfg.drain_slots * self.slot
        for link in self.links.values():
            if link.tx is not None:
                self.q.push(0, EventKind.SLOT_TICK, ("link", link.spec.link_id))
        if self.cfg.observe_ns:
            self.q.push(0, EventKind.OBSERVE, None)

        handlers = {
            EventKind.FRAME_ARRIVAL: self._on_frame,
            EventKind.FLOWLET_START: self._on_start,
            EventKind.FLOWLET_STOP: self._on_stop,
            EventKind.MIX_FLUSH: self._on_mix_flush,
            EventKind.SLOT_TICK: self._on_tick,
            EventKind.OBSERVE: self._on_observe,
        }
        while self.q:
            ev = self.q.pop()
            self.now = ev.time
            handlers[ev.kind](ev.payload)
        self._finish()
        return self.metrics, self.trace

    def _on_start(self, spec) -> None:
        rng = np.random.default_rng([self.seed, 1, spec.flowlet_id])
        routes = self.topo.route_links(spec.src, spec.dst, list(spec.path))
        deltas = codec.draw_offsets(len(spec.path), self.cfg.delta_max, rng)
        svs = {n: self.topo.nodes[n].sv for n in spec.path}
        prov = self.engine.provision(spec.flowlet_id, spec.path, routes, deltas, svs)
        fl = SenderFlowlet(self.fc, len(spec.path), _Builder(self.engine, prov), start_ns=self.now)
        self.senders[spec.flowlet_id] = _Sender(spec, fl, prov, rng)
        self._active_senders += 1
        self.q.push(self.now, EventKind.SLOT_TICK, ("sender", spec.flowlet_id))
        self.q.push(self.now + self.fc.lifetime_ns, EventKind.FLOWLET_STOP, spec.flowlet_id)
        if self.cfg.setup:
            self.setup_started[spec.flowlet_id] = self.now
            self._transmit(self.topo.hosts[spec.src].uplink, self._setup_blob(spec.flowlet_id), FrameTag.SETUP)

    def _setup_blob(self, fid: int) -> bytes:
        head = _SETUP.pack(b"SETP", fid)
        return head + bytes(self.params.packet_len - len(head))

    def _on_stop(self, fid: int) -> None:
        s = self.senders[fid]
        if not s.flowlet.stopped:
            s.flowlet.stopped = True
            self._sender_done(s)

    def _sender_done(self, s: _Sender) -> None:
        self._active_senders -= 1
        self.metrics.spilled_data += len(s.pending) + len(s.flowlet.data_queue)

    # -- slots -------------------------------------------------------------

    def _on_tick(self, payload) -> None:
        kind = payload[0]
        if kind == "sender":
            self._sender_tick(self.senders[payload[1]])
        elif kind == "node":
            self._node_tick(payload[1], payload[2])
        else:
            self._link_tick(self.links[payload[1]])

    def _sender_tick(self, s: _Sender) -> None:
        fl = s.flowlet
        if fl.stopped:
            return
        start = s.spec.start_ns
        while s.pending and start + s.pending[0] <= self.now:
            s.pending.pop(0)
            fl.data_queue.append(s.next_seq)
            s.next_seq += 1
        try:
            em = sender_emit(fl, self.now, s.rng)
        except FlowletTerminated:
            self._sender_done(s)
            return
        fid = s.spec.flowlet_id
        self.metrics.last_departure[("sender", fid)] = self.now
        self.metrics.first_departure.setdefault(("sender", fid), self.now)
        self._transmit(self.topo.hosts[s.spec.src].uplink, em.packet)
        if (self.cfg.early_shutdown and fl.pad_remaining is None and not s.pending
                and not fl.data_queue and em.kind is PacketKind.DATA):
            sender_shutdown(fl, s.rng)
        if fl.stopped:
            self._sender_done(s)
        elif fl.active:
            self.q.push(fl.next_slot_ns, EventKind.SLOT_TICK, ("sender", fid))

    def _node_tick(self, nid: int, key) -> None:
        node = self.nodes[nid]
        nf = node.flowlets.get(key)
        if nf is None:
            return
        before = len(nf.state.chaff_queue)
        res = node_tick(nf.state, None, self.now)
        node.chaff_total += len(nf.state.chaff_queue) - before
        fid = nf.flowlet_id
        if res.action is TickAction.TERMINATE:
            del node.flowlets[key]
            node.tombstones.add(key)
            self.metrics.terminations[(nid, fid)] = self.now
            return
        if res.action in (TickAction.EMIT, TickAction.EMIT_FROM_CHAFF):
            item = res.packet
            egress = item.egress if isinstance(item, Layer) else item.route
            self.metrics.last_departure[(nid, fid)] = self.now
            self.metrics.first_departure.setdefault((nid, fid), self.now)
            if self.cfg.record_departures:
                self.trace.departures[(nid, fid)].append(self.now)
            self._transmit(egress, item.packet)
        self._track_state(node)
        self.q.push(self.now + self.slot, EventKind.SLOT_TICK, ("node", nid, key))

    def _link_tick(self, link: _Link) -> None:
        if self.now > self.horizon:
            return
        frame = link_send_slot(link.tx, None, self.now)
        self._wire(link, frame)
        rate = rate_at(link.spec.padding, self.now / NS_PER_S)
        self.q.push(self.now + round(NS_PER_S / rate), EventKind.SLOT_TICK, ("link", link.spec.link_id))

    # -- links -------------------------------------------------------------

    def _transmit(self, link_id: int, raw: bytes, tag: FrameTag = FrameTag.PROTOCOL) -> None:
        link = self.links[link_id]
        if link.tx is not None:
            if not link.tx.enqueue(raw, tag):
                self.metrics.drops["link_backlog"] += 1
            return
        self._wire(link, (tag, raw))

    def _wire(self, link: _Link, frame) -> None:
        spec = link.spec
        length = len(frame) if isinstance(frame, bytes) else len(frame[1])
        self.metrics.link_frames[spec.link_id] += 1
        if self.cfg.record_taps:
            self.trace.taps[spec.link_id].append((self.now, length))
        if self.adversary is not None:
            self.adversary(self, spec.link_id, self.now, frame)
        # both draws happen for every frame so random streams never depend on content
        lost = link.rng.random() < spec.drop
        jitter = int(link.rng.integers(0, spec.jitter_ns + 1)) if spec.jitter_ns else 0
        if lost:
            self.metrics.link_lost[spec.link_id] += 1
            return
        self.q.push(self.now + spec.latency_ns + jitter, EventKind.FRAME_ARRIVAL, (spec.link_id, frame))

    def inject(self, link_id: int, at_ns: int, frame) -> None:
        """Adversary hook: deliver `frame` at the far end of a link at time at_ns."""
        self.q.push(max(at_ns, self.now), EventKind.FRAME_ARRIVAL, (link_id, frame))

    def _on_frame(self, payload) -> None:
        link_id, frame = payload
        link = self.links[link_id]
        if link.rx is not None:
            got = link_receive(link.rx, frame)
            if got is None:
                return
            tag, raw = got
        else:
            tag, raw = frame
        kind, ident = link.spec.dst
        if tag is FrameTag.SETUP:
            self._setup_arrival(kind, ident, raw, link_id)
        elif kind == "host":
            self._host_receive(ident, raw)
        else:
            self._node_receive(self.nodes[ident], raw, link_id)

    # -- node pipeline -----------------------------------------------------

    def _process(self, node: _Node, raw: bytes) -> Optional[Layer]:
        try:
            layer = self.engine.process(node.id, node.sv, raw)
        except PacketDropped as e:
            self.metrics.drops[e.reason] += 1
            return None
        if self.now >= layer.exp * NS_PER_S:
            self.metrics.drops["expired"] += 1
            return None
        if node.replay is not None and node.replay.check_and_insert(layer.replay_key, self.now) is Verdict.REPLAY:
            self.metrics.drops["replay"] += 1
            return None
        return layer

    def _node_receive(self, node: _Node, raw: bytes, link_id: int) -> None:
        layer = self._process(node, raw)
        if layer is None:
            return
        key = layer.state_key
        if key in node.tombstones:
            self.metrics.drops["terminated"] += 1
            return
        nf = node.flowlets.get(key)
        fid = self.engine.owner(key)
        if nf is None:
            nf = node.flowlets[key] = _NodeFlowlet(NodeFlowletState(self.fc), fid)
            self.q.push(self.now + self.topo.playout_ns, EventKind.SLOT_TICK, ("node", node.id, key))
            self._track_state(node)
        if self.cfg.record_departures:
            self.trace.arrivals[(node.id, fid)].append(self.now)
        if layer.ctrl is Ctrl.SPLIT:
            kids = []
            for child_raw in self.engine.split(node.id, layer):
                child = self._process(node, child_raw)
                if child is not None:
                    kids.append(CachedChaff(child.packet, child.egress, child.exp * NS_PER_S))
            node.chaff_total += node_accept_split(nf.state, kids)
            self._track_state(node)
        else:
            nf.state.data_queue.append(layer)

    def _track_state(self, node: _Node) -> None:
        node.peak = max(node.peak, len(node.flowlets))
        node.peak_chaff = max(node.peak_chaff, node.chaff_total)

    def node_state_bytes(self, node: _Node, live: Optional[int] = None) -> int:
        live = len(node.flowlets) if live is None else live
        rb = node.replay.nbytes if node.replay is not None else 0
        return live * self.per_flowlet_bytes + rb

    # -- hosts and setup ---------------------------------------------------

    def _host_receive(self, host: int, raw: bytes) -> None:
        try:
            d = self.engine.deliver(raw)
        except PacketDropped as e:
            self.metrics.drops["host_" + e.reason] += 1
            return
        self.metrics.delivered[d.flowlet_id].append((self.now, d.kind, d.seq))

    def _setup_arrival(self, kind: str, ident: int, raw: bytes, link_id: int) -> None:
        _, fid = _SETUP.unpack_from(raw)
        if kind == "host":
            self.metrics.setup_latency_ns.append(self.now - self.setup_started[fid])
            return
        node = self.nodes[ident]
        batch = node.mixer.offer((fid, self.now), self.now)
        if batch is not None:
            self._forward_setup(node, batch)
        elif node.mixer.config.max_wait is not None and len(node.mixer.pending) == 1:
            self.q.push(self.now + node.mixer.config.max_wait, EventKind.MIX_FLUSH, node.id)

    def _on_mix_flush(self, nid: int) -> None:
        node = self.nodes[nid]
        batch = node.mixer.flush_due(self.now)
        if batch is not None:
            self._forward_setup(node, batch)
        if node.mixer.pending and node.mixer.config.max_wait is not None:
            self.q.push(node.mixer.oldest() + node.mixer.config.max_wait, EventKind.MIX_FLUSH, nid)

    def _forward_setup(self, node: _Node, batch: list) -> None:
        for fid, arrived in batch:
            self.metrics.setup_hop_latency_ns.append(self.now - arrived)
            spec = self.senders[fid].spec
            i = spec.path.index(node.id)
            routes = self.senders[fid].prov.routes
            self._transmit(routes[i][1], self._setup_blob(fid), FrameTag.SETUP)

    # -- observation and wrap-up -------------------------------------------

    def _on_observe(self, _) -> None:
        for nid, node in self.nodes.items():
            self.trace.state_samples.append((self.now, nid, self.node_state_bytes(node)))
        if self.now <= self.horizon:
            self.q.push(self.now + self.cfg.observe_ns, EventKind.OBSERVE, None)

    def _finish(self) -> None:
        m = self.metrics
        max_delay = self.topo.max_link_delay_ns + self.topo.playout_ns
        for fid, s in sorted(self.senders.items()):
            m.sender_counts[fid] = dict(s.flowlet.counts)
            ok = True
            upstream = ("sender", fid)
            for nid in s.spec.path:
                term = m.terminations.get((nid, fid))
                up = m.last_departure.get(upstream)
                if term is None and up is not None:
                    # state installed at setup but no packet ever arrived: the node's
                    # counter would have run out H+1 slots after the first one was due
                    fc = s.flowlet.config
                    term = m.first_departure[upstream] + (fc.fail_threshold_H + 1) * fc.slot_ns
                if term is not None and up is not None and term < up + max_delay:
                    ok = False
                upstream = (nid, fid)
            m.success[fid] = ok
        for nid, node in self.nodes.items():
            m.peak_flowlets[nid] = node.peak
            m.peak_chaff_bytes[nid] = node.peak_chaff * self.params.packet_len
            m.state_bytes[nid] = self.node_state_bytes(node, node.peak)
            m.replay_bytes[nid] = node.replay.nbytes if node.replay is not None else 0


def run_simulation(topology: Topology, workload: Workload, seed: int, config: SimConfig,
                   adversary: Optional[Callable] = None):
    """Run one simulation; returns (RunMetrics, ObserverTrace)."""
    return Simulation(topology, workload, seed, config, adversary).run()
