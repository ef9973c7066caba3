"""Replay detection with three time-phased blocked Bloom filters.

A key inserted during epoch i (epochs are ttl/2 long) lives in sub-filter
i mod 3 until that sub-filter is cleared at the start of epoch i + 3, which
gives every entry a lifetime between ttl and 1.5 * ttl.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np

from . import crypto
from .crypto import KdfLabel

N_SUBFILTERS = 3
KEY_LEN = 16
MAX_HASHES = 32


class Verdict(enum.Enum):
    FRESH = "fresh"
    REPLAY = "replay"


@dataclass(frozen=True)
class ReplayConfig:
    ttl: float  # any time unit, as long as `now` uses the same one
    target_fp: float = 1e-6
    capacity: int = 100_000  # insertions per ttl/2 window
    block_size: int = 64  # octets

    def __post_init__(self):
        if self.ttl <= 0:
            raise ValueError("ttl must be positive")
        if not 0 < self.target_fp < 1:
            raise ValueError("target_fp must be in (0, 1)")
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.block_size < 8 or self.block_size & (self.block_size - 1):
            raise ValueError("block_size must be a power of two >= 8")


def replay_key(s: bytes, iv: bytes) -> bytes:
    """Keyed digest of (s, iv) so filter positions are unpredictable."""
    return crypto.mac(crypto.kdf(s, KdfLabel.MAC), iv)[:KEY_LEN]


def standard_bloom_bits(n: int, p: float) -> float:
    """Textbook optimum -n ln p / (ln 2)^2 for a classic Bloom filter."""
    return -n * math.log(p) / math.log(2) ** 2


def blocked_fp(n: int, n_blocks: int, block_bits: int, k: int) -> float:
    """False-positive rate of a blocked Bloom filter holding n keys.

    Block loads are Poisson(n / n_blocks); within a block the filter is a
    classic Bloom filter of block_bits bits.
    """
    lam = n / n_blocks
    if lam <= 0:
        return 0.0
    j = np.arange(int(lam + 12 * math.sqrt(lam) + 30) + 1)
    log_pois = j * math.log(lam) - lam - np.array([math.lgamma(x + 1) for x in j])
    fill = -np.expm1(k * j * math.log1p(-1.0 / block_bits))
    return float(np.sum(np.exp(log_pois) * fill ** k))


def _best_k(n: int, n_blocks: int, block_bits: int) -> tuple:
    bits_per_key = n_blocks * block_bits / n
    k0 = max(1, round(bits_per_key * math.log(2)))
    best = None
    k0 = min(k0, MAX_HASHES)
    for k in range(max(1, k0 - 4), min(k0 + 3, MAX_HASHES + 1)):
        fp = blocked_fp(n, n_blocks, block_bits, k)
        if best is None or fp < best[1]:
            best = (k, fp)
    return best


@functools.lru_cache(maxsize=64)
def dimension(cfg: ReplayConfig) -> tuple:
    """(blocks per sub-filter, hash count) meeting cfg.target_fp.

    A query consults all three sub-filters, so each one is sized for a third
    of the target, starting from the classic optimum and growing until the
    blocked layout meets it.
    """
    block_bits = cfg.block_size * 8
    p_sub = cfg.target_fp / N_SUBFILTERS
    n = cfg.capacity
    n_blocks = max(1, math.ceil(standard_bloom_bits(n, p_sub) / block_bits))
    while True:
        k, fp = _best_k(n, n_blocks, block_bits)
        if fp <= p_sub:
            return n_blocks, k
        n_blocks = max(n_blocks + 1, math.ceil(n_blocks * 1.01))


def size_filter(cfg: ReplayConfig) -> int:
    """Total detector memory in octets (three sub-filters)."""
    n_blocks, _ = dimension(cfg)
    return N_SUBFILTERS * n_blocks * cfg.block_size


class BlockedBloom:
    """Cache-line blocked Bloom filter over 16-octet pseudo-random keys."""

    def __init__(self, n_blocks: int, k: int, block_size: int = 64):
        self.n_blocks = n_blocks
        self.k = k
        self.block_size = block_size
        self.words = block_size // 8
        self.bits = np.zeros((n_blocks, self.words), dtype=np.uint64)
        self._j = np.arange(1, k + 1, dtype=np.uint64) * np.uint64(0x9E3779B97F4A7C15)
        self._mask = np.uint64(block_size * 8 - 1)

    @property
    def nbytes(self) -> int:
        return self.bits.nbytes

    def _positions(self, keys: np.ndarray):
        # keys: (N, 16) uint8; first 8 octets pick the block, last 8 seed the bit hashes.
        # Plain double hashing inside a 512-bit block produces correlated
        # progressions, so each probe gets its own splitmix64 finalization.
        lanes = keys.view(np.uint64).reshape(-1, 2)
        block = (lanes[:, 0] % np.uint64(self.n_blocks)).astype(np.intp)
        x = lanes[:, 1][:, None] + self._j[None, :]
        x ^= x >> np.uint64(30)
        x *= np.uint64(0xBF58476D1CE4E5B9)
        x ^= x >> np.uint64(27)
        x *= np.uint64(0x94D049BB133111EB)
        x ^= x >> np.uint64(31)
        bit = x & self._mask
        return block, (bit >> np.uint64(6)).astype(np.intp), np.uint64(1) << (bit & np.uint64(63))

    @staticmethod
    def _as_array(keys) -> np.ndarray:
        if isinstance(keys, (bytes, bytearray)):
            keys = [keys]
        if isinstance(keys, np.ndarray):
            arr = np.ascontiguousarray(keys, dtype=np.uint8)
        else:
            arr = np.frombuffer(b"".join(keys), dtype=np.uint8)
        return arr.reshape(-1, KEY_LEN)

    def add(self, keys) -> None:
        block, word, bit = self._positions(self._as_array(keys))
        np.bitwise_or.at(self.bits, (block[:, None], word), bit)

    def contains(self, keys) -> np.ndarray:
        block, word, bit = self._positions(self._as_array(keys))
        return np.all(self.bits[block[:, None], word] & bit, axis=1)

    def __contains__(self, key: bytes) -> bool:
        return bool(self.contains(key)[0])

    def clear(self) -> None:
        self.bits[:] = 0


class RotatingBloom:
    """Replay detector: check_and_insert() reports FRESH or REPLAY.

    Rotation is lazy; each call first clears every sub-filter whose clearing
    time has passed, then queries, then inserts.
    """

    def __init__(self, cfg: ReplayConfig, epoch_origin: float = 0):
        self.cfg = cfg
        n_blocks, k = dimension(cfg)
        self.subfilters = [BlockedBloom(n_blocks, k, cfg.block_size) for _ in range(N_SUBFILTERS)]
        self.epoch_origin = epoch_origin
        self.current_epoch = None

    @property
    def nbytes(self) -> int:
        return sum(f.nbytes for f in self.subfilters)

    def epoch_of(self, now) -> int:
        return int((2 * (now - self.epoch_origin)) // self.cfg.ttl)

    def advance(self, now) -> int:
        e = self.epoch_of(now)
        if self.current_epoch is None:
            self.current_epoch = e
        elif e < self.current_epoch:
            raise ValueError("time went backwards")
        elif e > self.current_epoch:
            first = max(self.current_epoch + 1, e - N_SUBFILTERS + 1)
            for j in range(first, e + 1):
                self.subfilters[j % N_SUBFILTERS].clear()
            self.current_epoch = e
        return e

    def check_and_insert(self, key: bytes, now) -> Verdict:
        e = self.advance(now)
        arr = BlockedBloom._as_array(key)
        if any(f.contains(arr)[0] for f in self.subfilters):
            return Verdict.REPLAY
        self.subfilters[e % N_SUBFILTERS].add(arr)
        return Verdict.FRESH

    def insert_many(self, keys, now) -> None:
        """Bulk insert without querying (used to load a filter to capacity)."""
        e = self.advance(now)
        self.subfilters[e % N_SUBFILTERS].add(keys)

    def query_many(self, keys, now) -> np.ndarray:
        self.advance(now)
        arr = BlockedBloom._as_array(keys)
        hit = np.zeros(len(arr), dtype=bool)
        for f in self.subfilters:
            hit |= f.contains(arr)
        return hit


def check_and_insert(state: RotatingBloom, key: bytes, now) -> Verdict:
    return state.check_and_insert(key, now)
