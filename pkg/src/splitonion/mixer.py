"""Batch-and-shuffle mixing for setup messages."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np


@dataclass(frozen=True)
class MixerConfig:
    batch_size_m: int
    seed: Optional[int] = None
    max_wait: Optional[int] = None  # flush a partial batch after this long; None disables

    def __post_init__(self):
        if self.batch_size_m < 1:
            raise ValueError("batch_size_m must be >= 1")
        if self.max_wait is not None and self.max_wait < 0:
            raise ValueError("max_wait must be >= 0")


@dataclass
class Mixer:
    config: MixerConfig
    pending: list = field(default_factory=list)  # (msg, arrival time)
    rng: Any = None

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.default_rng(self.config.seed)

    def offer(self, msg, now) -> Optional[list]:
        self.pending.append((msg, now))
        if len(self.pending) >= self.config.batch_size_m:
            return self._emit()
        return None

    def flush_due(self, now) -> Optional[list]:
        """Release a partial batch whose oldest message has waited max_wait."""
        w = self.config.max_wait
        if w is None or not self.pending or now - self.pending[0][1] < w:
            return None
        return self._emit()

    def oldest(self):
        return self.pending[0][1] if self.pending else None

    def _emit(self) -> list:
        batch = [m for m, _ in self.pending]
        self.pending.clear()
        order = self.rng.permutation(len(batch))
        return [batch[i] for i in order]


def mixer_offer(state: Mixer, msg, now) -> Optional[list]:
    return state.offer(msg, now)


def expected_batch_latency(batch_size: int, r_setup: float) -> float:
    """Time to collect one batch at arrival rate r_setup (seconds)."""
    if r_setup <= 0:
        raise ValueError("r_setup must be positive")
    return batch_size / r_setup


def expected_message_delay(batch_size: int, r_setup: float) -> float:
    """Mean wait of a message in a full batch under steady arrivals: (m-1) / (2r)."""
    if r_setup <= 0:
        raise ValueError("r_setup must be positive")
    return (batch_size - 1) / (2 * r_setup)


def simulate_mix_latency(batch_size: int, rate: float, n_batches: int, rng) -> dict:
    """Poisson arrivals into one mixer; returns per-message and per-batch delays (seconds).

    Only full batches are counted.
    """
    n = batch_size * n_batches
    arrivals = np.cumsum(rng.exponential(1.0 / rate, size=n))
    groups = arrivals.reshape(n_batches, batch_size)
    flush = groups[:, -1]
    return {
        "message_delay": (flush[:, None] - groups).ravel(),
        "batch_fill": flush - groups[:, 0],
    }
