"""Run-time statistics: saturation counts and spike counts per site.

Both collectors only ever add, so merging is order-free; a lock makes
concurrent updates safe.
"""

from __future__ import annotations

import threading
from collections import Counter
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = ["SaturationCounter", "FiringStats", "SpikeRecorder", "SpikeContext"]


class SaturationCounter:
    """Per-site count of inputs clamped to a calibrated range."""

    def __init__(self):
        self._lock = threading.Lock()
        self._counts = Counter()

    def add(self, site, n):
        n = int(n)
        if n:
            with self._lock:
                self._counts[site] += n

    def snapshot(self) -> dict:
        with self._lock:
            return dict(self._counts)

    def merge(self, other: "SaturationCounter"):
        for site, n in other.snapshot().items():
            self.add(site, n)


@dataclass
class FiringStats:
    """Spike and slot counts of one site, summed over forwards.

    ``slots`` counts ``T * N * elements``.
    """

    spikes: int = 0
    slots: int = 0
    elements: int = 0

    def add(self, spikes, T, N, elements):
        self.spikes += int(spikes)
        self.slots += int(T) * int(N) * int(elements)
        self.elements += int(elements)

    def merge(self, other: "FiringStats") -> "FiringStats":
        return FiringStats(self.spikes + other.spikes, self.slots + other.slots, self.elements + other.elements)

    def to_dict(self):
        return {"spikes": self.spikes, "slots": self.slots, "elements": self.elements}


class SpikeRecorder:
    """Accumulates :class:`FiringStats` keyed by ``(site, component)``."""

    def __init__(self):
        self._lock = threading.Lock()
        self.stats = {}

    def record(self, key, spikes, n_basis=1):
        """``spikes``: boolean array whose trailing axes are ``(n_basis, T)``
        (or just ``(T,)`` when ``n_basis`` is 1)."""
        spikes = np.asarray(spikes)
        T = spikes.shape[-1]
        elements = spikes.size // (T * n_basis)
        count = np.count_nonzero(spikes)
        with self._lock:
            self.stats.setdefault(key, FiringStats()).add(count, T, n_basis, elements)

    def merge(self, other: "SpikeRecorder"):
        with self._lock:
            for key, s in other.stats.items():
                self.stats[key] = self.stats.get(key, FiringStats()).merge(s)


@dataclass
class SpikeContext:
    """Where an operation reports clamping and spikes; all fields optional."""

    site: Optional[str] = None
    saturation: Optional[SaturationCounter] = None
    recorder: Optional[SpikeRecorder] = None

    def clamped(self, n):
        if self.saturation is not None:
            self.saturation.add(self.site, n)

    def spikes(self, component, spikes, n_basis=1):
        if self.recorder is not None:
            self.recorder.record((self.site, component), spikes, n_basis)
