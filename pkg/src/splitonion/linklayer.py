"""Neighbor link encryption and padding.

Frame layout (octets)::

    [0, 16)   nonce   big-endian frame counter << 64
    [16, 17)  tag     encrypted; PROTOCOL, LINK_CHAFF or SETUP
    [17, ...) body    encrypted; exactly body_len octets

Every frame on a link has the same length and the sender emits exactly one
frame per link slot, so a tap sees the same pattern whatever the load.
"""

from __future__ import annotations

import enum
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

from . import crypto
from .codec import DEFAULT_PARAMS
from .crypto import KdfLabel, kdf

NONCE_LEN = 16
TAG_LEN = 1


class FrameTag(enum.IntEnum):
    PROTOCOL = 0
    LINK_CHAFF = 1
    SETUP = 2


class MalformedFrame(Exception):
    pass


@dataclass(frozen=True)
class ScheduleEntry:
    start: float
    end: float
    rate: float


@dataclass(frozen=True)
class LinkConfig:
    link_key: bytes
    base_rate: float  # frames per second
    schedule: tuple = ()
    body_len: int = DEFAULT_PARAMS.packet_len
    backlog: int = 1  # queued packets beyond this are dropped

    def __post_init__(self):
        if len(self.link_key) != crypto.KEY_LEN:
            raise ValueError("link_key must be 16 octets")
        if self.base_rate <= 0:
            raise ValueError("base_rate must be positive")
        entries = sorted(self.schedule, key=lambda e: e.start)
        for e in entries:
            if e.rate <= 0 or e.end <= e.start:
                raise ValueError(f"bad schedule entry {e}")
        for a, b in zip(entries, entries[1:]):
            if b.start < a.end:
                raise ValueError("schedule intervals overlap")
        object.__setattr__(self, "schedule", tuple(entries))

    @property
    def frame_len(self) -> int:
        return NONCE_LEN + TAG_LEN + self.body_len


def _interval_at(cfg: LinkConfig, now) -> Optional[ScheduleEntry]:
    for e in cfg.schedule:
        if e.start <= now < e.end:
            return e
    return None


def rate_at(cfg: LinkConfig, now) -> float:
    e = _interval_at(cfg, now)
    return e.rate if e else cfg.base_rate


def scheduled_rate(cfg: LinkConfig, now, hist_mean: float, hist_std: float, k_f: float) -> float:
    """Padded rate for a scheduled interval: historic mean plus k_f standard deviations."""
    if _interval_at(cfg, now) is None:
        return cfg.base_rate
    return hist_mean + k_f * hist_std


def _frame_key(link_key: bytes) -> bytes:
    return kdf(link_key, KdfLabel.ENC, b"link")


def seal_frame(link_key: bytes, counter: int, tag: FrameTag, body: bytes) -> bytes:
    nonce = (counter << 64).to_bytes(NONCE_LEN, "big")
    return nonce + crypto.stream_encrypt(_frame_key(link_key), nonce, bytes([tag]) + body)


def open_frame(link_key: bytes, frame: bytes, body_len: int) -> tuple:
    if len(frame) != NONCE_LEN + TAG_LEN + body_len:
        raise MalformedFrame(f"frame length {len(frame)}")
    nonce = frame[:NONCE_LEN]
    plain = crypto.stream_decrypt(_frame_key(link_key), nonce, frame[NONCE_LEN:])
    try:
        tag = FrameTag(plain[0])
    except ValueError:
        raise MalformedFrame(f"unknown tag {plain[0]}") from None
    return tag, plain[1:]


@dataclass
class LinkSender:
    config: LinkConfig
    counter: int = 0
    queue: deque = field(default_factory=deque)  # (tag, body)
    dropped: int = 0
    sent: dict = field(default_factory=lambda: {t: 0 for t in FrameTag})
    randbytes: Callable[[int], bytes] = os.urandom

    def enqueue(self, body: bytes, tag: FrameTag = FrameTag.PROTOCOL) -> bool:
        if len(body) != self.config.body_len:
            raise ValueError(f"link body must be {self.config.body_len} octets")
        if len(self.queue) >= self.config.backlog:
            self.dropped += 1
            return False
        self.queue.append((tag, body))
        return True


def link_send_slot(state: LinkSender, queued: Optional[bytes] = None, now=0) -> bytes:
    """Emit the one frame for this link slot."""
    if queued is not None:
        state.enqueue(queued)
    if state.queue:
        tag, body = state.queue.popleft()
    else:
        tag, body = FrameTag.LINK_CHAFF, state.randbytes(state.config.body_len)
    frame = seal_frame(state.config.link_key, state.counter, tag, body)
    state.counter += 1
    state.sent[tag] += 1
    return frame


class Inbound(NamedTuple):
    tag: FrameTag
    body: bytes


@dataclass
class LinkReceiver:
    config: LinkConfig
    malformed: int = 0
    chaff: int = 0


def link_receive(state: LinkReceiver, frame: bytes) -> Optional[Inbound]:
    """Decrypt one frame; link chaff and malformed frames yield None."""
    try:
        tag, body = open_frame(state.config.link_key, frame, state.config.body_len)
    except MalformedFrame:
        state.malformed += 1
        return None
    if tag is FrameTag.LINK_CHAFF:
        state.chaff += 1
        return None
    return Inbound(tag, body)
