"""Packet engines: how the simulator builds, processes and opens packets.

``CryptoEngine`` runs the real onion codec.  ``TokenEngine`` encodes the same
information (flowlet, hop, split target, kind, sequence number) in clear
inside a packet-sized blob and looks routes and expirations up from the
provisioning table, which makes large sweeps cheap.  Both consume the
simulator's random streams identically, so a run produces the same metrics
under either engine.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from .. import codec, replay
from ..codec import Ctrl, HopMaterial, PacketDropped, PathMaterial, PayloadKind, RoutingSegment


@dataclass
class Layer:
    """What a node learns from one valid packet."""

    ctrl: Ctrl
    exp: int  # seconds
    ingress: int
    egress: int
    packet: bytes  # next packet on the wire
    state_key: Any  # per-flowlet key at this node
    replay_key: bytes
    extra: Any = None  # engine-private data for splitting


@dataclass
class Delivery:
    flowlet_id: int
    kind: PayloadKind
    seq: Optional[int]


@dataclass
class Provisioned:
    """Sender-side view of one flowlet after setup."""

    flowlet_id: int
    path: tuple  # node ids
    routes: list  # (ingress, egress) per hop
    deltas: list
    material: Any = None


class TokenEngine:
    name = "token"
    _HDR = struct.Struct(">4sIQBBbBIq")  # magic, flowlet, uid, hop, kind, split_hop, is_child, exp_min, seq
    _MAGIC = b"TOKN"

    def __init__(self, params=codec.DEFAULT_PARAMS, seed: int = 0):
        self.params = params
        self.flowlets = {}
        self._uid = 0
        self._pad = bytes(params.packet_len - self._HDR.size)

    def provision(self, flowlet_id: int, path: tuple, routes: list, deltas: list, node_svs: dict) -> Provisioned:
        p = Provisioned(flowlet_id, tuple(path), list(routes), list(deltas))
        self.flowlets[flowlet_id] = p
        return p

    def _encode(self, fid, uid, hop, kind, split_hop, child, exp_min, seq) -> bytes:
        return self._HDR.pack(self._MAGIC, fid, uid, hop, kind, split_hop, child, exp_min, seq) + self._pad

    def _next_uid(self) -> int:
        self._uid += 1
        return self._uid

    def build(self, prov: Provisioned, kind: PayloadKind, seq: Optional[int], now: int,
              split_hop: Optional[int] = None) -> bytes:
        exp_min = codec.exp_min_for(now)
        return self._encode(prov.flowlet_id, self._next_uid(), 0, kind,
                            -1 if split_hop is None else split_hop, 0, exp_min,
                            -1 if seq is None else seq)

    def process(self, node_id: int, sv: bytes, raw: bytes) -> Layer:
        if len(raw) != self.params.packet_len:
            raise PacketDropped("length")
        magic, fid, uid, hop, kind, split_hop, child, exp_min, seq = self._HDR.unpack_from(raw)
        prov = self.flowlets.get(fid) if magic == self._MAGIC else None
        # stands in for the per-hop MAC: only the addressed node can process the packet
        if prov is None or hop >= len(prov.path) or prov.path[hop] != node_id:
            raise PacketDropped("mac")
        ingress, egress = prov.routes[hop]
        ctrl = Ctrl.SPLIT if split_hop == hop and not child else Ctrl.FWD
        nxt = self._encode(fid, uid, hop + 1, kind, split_hop, child, exp_min, seq)
        key = (fid, hop)
        rkey = hashlib.blake2b(struct.pack(">IQBB", fid, uid, hop, child), digest_size=16).digest()
        return Layer(ctrl, exp_min + prov.deltas[hop], ingress, egress, nxt, key, rkey,
                     (fid, uid, hop, exp_min))

    def owner(self, state_key) -> int:
        return state_key[0]

    def split(self, node_id: int, layer: Layer) -> tuple:
        fid, uid, hop, exp_min = layer.extra
        return tuple(self._encode(fid, self._next_uid(), hop, PayloadKind.CHAFF, -1, 1, exp_min, -1)
                     for _ in range(2))

    def deliver(self, raw: bytes) -> Delivery:
        magic, fid, uid, hop, kind, split_hop, child, exp_min, seq = self._HDR.unpack_from(raw)
        prov = self.flowlets.get(fid) if magic == self._MAGIC else None
        if prov is None or hop != len(prov.path):
            raise PacketDropped("mac")
        return Delivery(fid, PayloadKind(kind), None if seq < 0 else seq)


class CryptoEngine:
    name = "crypto"

    def __init__(self, params=codec.DEFAULT_PARAMS, seed: int = 0):
        self.params = params
        self.rng = np.random.default_rng([seed, 0xC0DEC])
        # provisioning oracle tables
        self.by_final_iv = {}  # final IV -> Provisioned
        self.by_key = {}  # hop key -> flowlet id

    def provision(self, flowlet_id: int, path: tuple, routes: list, deltas: list, node_svs: dict) -> Provisioned:
        hops = []
        for node, (ing, eg), delta in zip(path, routes, deltas):
            s = self.rng.bytes(16)
            fs = codec.fs_create(node_svs[node], s, RoutingSegment(ing, eg))
            hops.append(HopMaterial(s, fs, delta))
            self.by_key[s] = flowlet_id
        material = PathMaterial(tuple(hops), self.rng.bytes(16))
        return Provisioned(flowlet_id, tuple(path), list(routes), list(deltas), material)

    def _seal(self, prov, hops, iv, kind, seq, size) -> bytes:
        final_iv = codec.iv_chain(hops, iv)[-1]
        self.by_final_iv[final_iv] = prov
        body = b"" if seq is None else struct.pack(">Q", seq)
        return codec.seal_payload(prov.material.s_sd, final_iv, kind, body, size)

    def build(self, prov: Provisioned, kind: PayloadKind, seq: Optional[int], now: int,
              split_hop: Optional[int] = None) -> bytes:
        p, path = self.params, prov.material
        exps = codec.assign_expirations(path, codec.exp_min_for(now))
        iv = self.rng.bytes(p.iv_len)
        if split_hop is None:
            payload = self._seal(prov, path.hops, iv, kind, seq, p.m)
            pkt = codec.create_onion(p, path.hops, [Ctrl.FWD] * len(path), exps, iv, payload, self.rng)
        else:
            tail = path.hops[split_hop:]
            ivs = [self.rng.bytes(p.iv_len) for _ in range(2)]
            cps = [self._seal(prov, tail, civ, PayloadKind.CHAFF, None, p.child_payload_len) for civ in ivs]
            pkt = codec.create_splittable(p, path.hops, exps, iv, ivs[0], ivs[1], cps[0], cps[1],
                                          split_hop, self.rng)
        return pkt.to_bytes()

    def process(self, node_id: int, sv: bytes, raw: bytes) -> Layer:
        if len(raw) != self.params.packet_len:
            raise PacketDropped("length")
        out = codec.remove_layer(self.params, codec.OnionPacket.from_bytes(self.params, raw), sv)
        return Layer(out.ctrl, out.exp, out.route.ingress, out.route.egress, out.next_packet.to_bytes(),
                     out.s, replay.replay_key(out.s, out.iv), out)

    def owner(self, state_key) -> int:
        return self.by_key.get(state_key, -1)

    def split(self, node_id: int, layer: Layer) -> tuple:
        out = layer.extra
        kids = codec.split_onion(self.params, out.next_packet.payload, out.s, out.iv)
        return tuple(k.to_bytes() for k in kids)

    def deliver(self, raw: bytes) -> Delivery:
        pkt = codec.OnionPacket.from_bytes(self.params, raw)
        prov = self.by_final_iv.pop(pkt.iv, None)
        if prov is None:
            raise PacketDropped("unknown flowlet")
        kind, body = codec.open_payload(prov.material.s_sd, pkt.iv, pkt.payload)
        seq = struct.unpack(">Q", body)[0] if len(body) == 8 else None
        return Delivery(prov.flowlet_id, kind, seq)


ENGINES = {"token": TokenEngine, "crypto": CryptoEngine}


def make_engine(name: str, params=codec.DEFAULT_PARAMS, seed: int = 0):
    try:
        return ENGINES[name](params, seed)
    except KeyError:
        raise ValueError(f"unknown packet engine {name!r}") from None
