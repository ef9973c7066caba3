"""Onion packet wire format with size-preserving layer removal and splitting.

Wire layout with default parameters (octet offsets)::

    [0, 16)      iv
    [16, 40)     fs      forwarding segment, PRP(SV, s || R)
    [40, 56)     gamma   per-hop MAC over fs || beta || payload
    [56, 371)    beta    (r-1) blocks of d = ctrl || exp || fs' || gamma'
    [371, 1395)  payload

A node strips one d-octet block from beta and appends d octets of keystream,
so the header never changes size.  The sender precomputes that keystream tail
(the "filler") so every downstream MAC covers exactly what the node will see.
"""

from __future__ import annotations

import enum
import secrets
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from . import crypto
from .crypto import KdfLabel, kdf, prg, xor

DELIVER = 0xFFFFFFFF
RandBytes = Callable[[int], bytes]


class Ctrl(enum.IntEnum):
    FWD = 0
    SPLIT = 1


class PayloadKind(enum.IntEnum):
    DATA = 0x00
    CHAFF = 0x01


class PacketDropped(Exception):
    """A packet failed verification and must be discarded."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class PacketParams:
    r: int = 8
    iv_len: int = 16
    fs_len: int = 24
    mac_len: int = 16
    ctrl_len: int = 1
    exp_len: int = 4
    m: int = 1024

    def __post_init__(self):
        widths = (self.iv_len, self.fs_len, self.mac_len, self.ctrl_len, self.exp_len, self.m)
        if min(widths) <= 0 or self.r < 2:
            raise ValueError("all widths must be positive and r >= 2")
        if self.iv_len != crypto.IV_LEN or self.mac_len != crypto.MAC_LEN:
            raise ValueError("iv_len and mac_len are fixed by the block cipher (16)")
        if self.fs_len != crypto.FS_PLAIN_LEN:
            raise ValueError("fs_len must be 24 (key || routing segment)")
        if self.m % 2:
            raise ValueError("payload length m must be even")
        if self.m < 2 * self.hdr_len:
            raise ValueError(f"m={self.m} too small to carry two children (needs >= {2 * self.hdr_len})")

    @property
    def b(self) -> int:
        return self.ctrl_len + self.exp_len

    @property
    def c(self) -> int:
        return self.fs_len + self.mac_len

    @property
    def d(self) -> int:
        return self.b + self.c

    @property
    def beta_len(self) -> int:
        return (self.r - 1) * self.d

    @property
    def hdr_len(self) -> int:
        return self.iv_len + self.fs_len + self.mac_len + self.beta_len

    @property
    def packet_len(self) -> int:
        return self.hdr_len + self.m

    @property
    def max_hops(self) -> int:
        return self.r - 1

    @property
    def child_payload_len(self) -> int:
        """Sender-chosen octets that survive inside each split child (t)."""
        return self.m // 2 - self.hdr_len

    @property
    def split_pad_len(self) -> int:
        return self.m // 2 + self.hdr_len


DEFAULT_PARAMS = PacketParams()


@dataclass(frozen=True)
class RoutingSegment:
    ingress: int
    egress: int

    def to_bytes(self) -> bytes:
        return struct.pack(">II", self.ingress, self.egress)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "RoutingSegment":
        return cls(*struct.unpack(">II", raw))

    @property
    def delivers(self) -> bool:
        return self.egress == DELIVER


@dataclass(frozen=True)
class OnionPacket:
    iv: bytes
    fs: bytes
    gamma: bytes
    beta: bytes
    payload: bytes

    def to_bytes(self) -> bytes:
        return b"".join((self.iv, self.fs, self.gamma, self.beta, self.payload))

    def __len__(self) -> int:
        return len(self.iv) + len(self.fs) + len(self.gamma) + len(self.beta) + len(self.payload)

    @classmethod
    def from_bytes(cls, params: PacketParams, raw: bytes) -> "OnionPacket":
        if len(raw) != params.packet_len:
            raise ValueError(f"packet must be {params.packet_len} octets, got {len(raw)}")
        o = 0
        parts = []
        for n in (params.iv_len, params.fs_len, params.mac_len, params.beta_len, params.m):
            parts.append(raw[o:o + n])
            o += n
        return cls(*parts)


@dataclass(frozen=True)
class HopMaterial:
    """Sender-side secrets for one hop of a flowlet path."""

    s: bytes
    fs: bytes
    delta: int = 0


@dataclass(frozen=True)
class PathMaterial:
    hops: tuple
    s_sd: bytes

    def __post_init__(self):
        if not self.hops:
            raise ValueError("path needs at least one hop")

    def __len__(self):
        return len(self.hops)


@dataclass(frozen=True)
class LayerOutput:
    ctrl: Ctrl
    exp: int
    route: RoutingSegment
    next_packet: OnionPacket
    # key and incoming IV of this layer; consumed by splitting and replay detection
    s: bytes = field(repr=False)
    iv: bytes = field(repr=False)


def _rand(rng) -> RandBytes:
    if rng is None:
        return secrets.token_bytes
    return rng.bytes


def fs_create(sv: bytes, s: bytes, route: RoutingSegment) -> bytes:
    return crypto.prp_encrypt(sv, s + route.to_bytes())


def fs_open(sv: bytes, fs: bytes) -> tuple:
    plain = crypto.prp_decrypt(sv, fs)
    return plain[:crypto.KEY_LEN], RoutingSegment.from_bytes(plain[crypto.KEY_LEN:])


def iv_chain(hops: Sequence[HopMaterial], iv: bytes) -> list:
    """IVs seen by each hop, plus the IV left on the packet after the last hop."""
    ivs = [iv]
    for h in hops:
        ivs.append(crypto.prp_encrypt(kdf(h.s, KdfLabel.PRP), ivs[-1]))
    return ivs


def _ctrl_exp(params: PacketParams, ctrl: int, exp: int) -> bytes:
    if not 0 <= exp < 1 << (8 * params.exp_len):
        raise ValueError(f"expiration {exp} does not fit in {params.exp_len} octets")
    return int(ctrl).to_bytes(params.ctrl_len, "big") + int(exp).to_bytes(params.exp_len, "big")


def _check_path(params: PacketParams, n: int) -> None:
    if not 1 <= n <= params.max_hops:
        raise ValueError(f"path length {n} outside [1, {params.max_hops}]")


def create_onion(params: PacketParams, hops: Sequence[HopMaterial], ctrls: Sequence[int],
                 exps: Sequence[int], iv: bytes, payload: bytes, rng=None) -> OnionPacket:
    """Wrap `payload` in one onion layer per hop; the packet is addressed to hops[0]."""
    n = len(hops)
    _check_path(params, n)
    if len(ctrls) != n or len(exps) != n:
        raise ValueError("need one ctrl and one exp per hop")
    if len(payload) != params.m:
        raise ValueError(f"payload must be {params.m} octets, got {len(payload)}")
    if len(iv) != params.iv_len:
        raise ValueError("bad IV length")
    r, d, b = params.r, params.d, params.b

    ivs = iv_chain(hops[:-1], iv)
    streams = [prg(kdf(h.s + ivs[i], KdfLabel.PRG), r * d) for i, h in enumerate(hops)]

    filler = b""
    for i in range(n - 1):
        filler = xor(filler + bytes(d), streams[i][(r - i - 1) * d:])

    # innermost block: random prefix whose first b octets decrypt to ctrl || exp
    prefix = _rand(rng)((r - n) * d)
    head = xor(_ctrl_exp(params, ctrls[-1], exps[-1]), streams[-1][:b])
    beta = head + prefix[b:] + filler

    last = hops[-1]
    body = crypto.stream_encrypt(kdf(last.s, KdfLabel.ENC), ivs[-1], payload)
    gamma = crypto.mac(kdf(last.s + ivs[-1], KdfLabel.MAC), last.fs + beta + body)
    keep = (r - 2) * d
    for i in range(n - 2, -1, -1):
        h = hops[i]
        plain = _ctrl_exp(params, ctrls[i], exps[i]) + hops[i + 1].fs + gamma + beta[:keep]
        beta = xor(plain, streams[i][:(r - 1) * d])
        body = crypto.stream_encrypt(kdf(h.s, KdfLabel.ENC), ivs[i], body)
        gamma = crypto.mac(kdf(h.s + ivs[i], KdfLabel.MAC), h.fs + beta + body)
    return OnionPacket(iv, hops[0].fs, gamma, beta, body)


def remove_layer(params: PacketParams, packet: OnionPacket, sv: bytes) -> LayerOutput:
    """Verify and strip the outer layer.  Raises PacketDropped on a bad MAC."""
    iv, fs, beta, body = packet.iv, packet.fs, packet.beta, packet.payload
    s, route = fs_open(sv, fs)
    if not crypto.mac_verify(kdf(s + iv, KdfLabel.MAC), fs + beta + body, packet.gamma):
        raise PacketDropped("mac")
    r, d = params.r, params.d
    zeta = xor(beta + bytes(d), prg(kdf(s + iv, KdfLabel.PRG), r * d))
    cl, el = params.ctrl_len, params.exp_len
    raw_ctrl = int.from_bytes(zeta[:cl], "big")
    try:
        ctrl = Ctrl(raw_ctrl)
    except ValueError:
        raise PacketDropped("ctrl") from None
    exp = int.from_bytes(zeta[cl:cl + el], "big")
    o = params.b
    next_fs = zeta[o:o + params.fs_len]
    o += params.fs_len
    next_gamma = zeta[o:o + params.mac_len]
    next_beta = zeta[d:]
    next_body = crypto.stream_decrypt(kdf(s, KdfLabel.ENC), iv, body)
    next_iv = crypto.prp_encrypt(kdf(s, KdfLabel.PRP), iv)
    nxt = OnionPacket(next_iv, next_fs, next_gamma, next_beta, next_body)
    return LayerOutput(ctrl, exp, route, nxt, s, iv)


def split_padding(params: PacketParams, s: bytes, iv: bytes, side: str) -> bytes:
    return prg(kdf(s + iv, KdfLabel.PRG, side.encode()), params.split_pad_len)


def split_onion(params: PacketParams, payload: bytes, s: bytes, iv: bytes) -> tuple:
    """Expand a SPLIT payload into two full-size children.

    `s` and `iv` are the splitting hop's key and the parent's incoming IV.
    """
    if len(payload) != params.m:
        raise ValueError("split payload must be m octets")
    half = params.m // 2
    left = payload[:half] + split_padding(params, s, iv, "left")
    right = payload[half:] + split_padding(params, s, iv, "right")
    return OnionPacket.from_bytes(params, left), OnionPacket.from_bytes(params, right)


def _layered_keystream(params: PacketParams, hops: Sequence[HopMaterial], iv: bytes) -> bytes:
    """XOR of every hop's payload keystream; CTR mode makes onion encryption x -> x ^ K."""
    ivs = iv_chain(hops, iv)
    ks = bytes(params.m)
    for h, hop_iv in zip(hops, ivs):
        ks = crypto.stream_encrypt(kdf(h.s, KdfLabel.ENC), hop_iv, ks)
    return ks


def create_splittable(params: PacketParams, hops: Sequence[HopMaterial], exps: Sequence[int],
                      iv: bytes, iv0: bytes, iv1: bytes, child_payload0: bytes,
                      child_payload1: bytes, k: int, rng=None) -> OnionPacket:
    """Build a packet that hop `k` splits into two packets for hops k..n-1.

    Each child carries `child_payload_len` sender octets.  The children's
    outer layer again targets hop k, which processes them like any arrival.
    """
    n = len(hops)
    _check_path(params, n)
    if not 1 <= k <= n - 1:
        raise ValueError(f"split index {k} outside [1, {n - 1}]")
    t = params.child_payload_len
    if len(child_payload0) != t or len(child_payload1) != t:
        raise ValueError(f"child payloads must be {t} octets")
    if len(exps) != n:
        raise ValueError("need one exp per hop")

    iv_k = iv_chain(hops[:k], iv)[-1]
    s_k = hops[k].s
    tail = hops[k:]
    half = params.m // 2
    halves = []
    for side, civ, data in (("left", iv0, child_payload0), ("right", iv1, child_payload1)):
        pad = split_padding(params, s_k, iv_k, side)
        # choose the plaintext tail so the encrypted child ends in exactly `pad`
        ks = _layered_keystream(params, tail, civ)
        plain = data + xor(pad, ks[t:])
        child = create_onion(params, tail, [Ctrl.FWD] * len(tail), exps[k:], civ, plain, rng)
        halves.append(child.to_bytes()[:half])
    ctrls = [Ctrl.FWD] * k + [Ctrl.SPLIT]
    return create_onion(params, hops[:k + 1], ctrls, exps[:k + 1], iv, b"".join(halves), rng)


def draw_offsets(n: int, delta_max: int, rng) -> list:
    """Per-hop expiration offsets, uniform over the integers 0..delta_max."""
    if delta_max < 0:
        raise ValueError("delta_max must be >= 0")
    return [int(x) for x in rng.integers(0, delta_max + 1, size=n)]


def assign_expirations(path: PathMaterial, exp_min: int) -> list:
    return [exp_min + h.delta for h in path.hops]


def exp_min_for(now_ns: int, slack_s: int = 1) -> int:
    """Earliest allowed expiration: local time rounded up to a second, plus slack."""
    return -(-now_ns // 1_000_000_000) + slack_s


def seal_payload(s_sd: bytes, nonce: bytes, kind: PayloadKind, body: bytes, size: int) -> bytes:
    """End-to-end framing: kind(1) || length(2) || body, zero-filled, then encrypted."""
    if len(body) > size - 3:
        raise ValueError("body does not fit")
    plain = bytes([kind]) + len(body).to_bytes(2, "big") + body
    plain += bytes(size - len(plain))
    return crypto.stream_encrypt(kdf(s_sd, KdfLabel.ENC), nonce, plain)


def open_payload(s_sd: bytes, nonce: bytes, data: bytes) -> tuple:
    plain = crypto.stream_decrypt(kdf(s_sd, KdfLabel.ENC), nonce, data)
    try:
        kind = PayloadKind(plain[0])
    except ValueError:
        raise PacketDropped("payload kind") from None
    n = int.from_bytes(plain[1:3], "big")
    return kind, plain[3:3 + n]

