"""Spike-driven multiplication with fixed identity encoders.

A value ``x`` in ``[lo, hi]`` is written as ``x = lo + m`` and ``m`` is
spike-encoded by an MBE neuron with a binary geometric schedule
``d[t] = (hi - lo) * 2**-(t+1)`` (equal intensity, reset and threshold).  The
product of two encoded values then expands into

    (lo1 + m1)(lo2 + m2) = s1 D s2 + a1 . s1 + a2 . s2 + c

with the precomputed intensity matrix ``D = outer(d1, d2)`` and constant
offset vectors, so the only input-dependent work is spike-gated additions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Optional

import numpy as np

from .errors import InvalidArgument
from .neuron import simulate_spikes
from .stats import SpikeContext

__all__ = [
    "IdentityEncoder",
    "IntensityMatrix",
    "SpikeTrain",
    "make_identity_encoder",
    "encode",
    "decode",
    "intensity_matrix",
    "spike_multiply",
    "spike_matmul",
]


@dataclass(frozen=True)
class IdentityEncoder:
    lo: float
    hi: float
    T: int

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
            raise InvalidArgument(f"encoder range needs finite lo < hi, got [{self.lo}, {self.hi}]")
        if int(self.T) != self.T or self.T < 1:
            raise InvalidArgument(f"T must be a positive integer, got {self.T}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "T", int(self.T))

    @property
    def offset(self) -> float:
        return self.lo

    @cached_property
    def d(self) -> np.ndarray:
        d = np.ldexp(np.full(self.T, self.hi - self.lo), -(np.arange(self.T) + 1))
        d.setflags(write=False)
        return d

    @property
    def step(self) -> float:
        return float(np.ldexp(self.hi - self.lo, -self.T))


@dataclass(frozen=True, eq=False)
class SpikeTrain:
    """Binary spikes (trailing axis ``T``) and a mask of clamped inputs."""

    spikes: np.ndarray
    clamped: np.ndarray


@dataclass(frozen=True, eq=False)
class IntensityMatrix:
    """``D = scale * outer(d1, d2)`` plus the pre-scaled offset terms."""

    D: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    c: float
    provenance: tuple
    scale: float


def make_identity_encoder(range, T: int) -> IdentityEncoder:
    lo, hi = range
    return IdentityEncoder(lo, hi, T)


def encode(encoder: IdentityEncoder, x, ctx: Optional[SpikeContext] = None, component="enc") -> SpikeTrain:
    """Spike-encode ``x`` (any shape); values outside the range are clamped.

    Clamped inputs and emitted spikes are reported to ``ctx`` if given.
    """
    x = np.asarray(x, dtype=np.float64)
    clamped = (x < encoder.lo) | (x > encoder.hi)
    m = np.clip(x, encoder.lo, encoder.hi) - encoder.lo
    d = encoder.d[None, :]
    spikes, _ = simulate_spikes(m[..., None], d, d, d)
    spikes = spikes[..., 0, :]
    if ctx is not None:
        ctx.clamped(np.count_nonzero(clamped))
        ctx.spikes(component, spikes)
    return SpikeTrain(spikes, clamped)


def decode(encoder: IdentityEncoder, train) -> np.ndarray:
    spikes = train.spikes if isinstance(train, SpikeTrain) else np.asarray(train)
    return encoder.offset + spikes @ encoder.d


@lru_cache(maxsize=256)
def intensity_matrix(e1: IdentityEncoder, e2: IdentityEncoder, scale: float = 1.0) -> IntensityMatrix:
    """Precompute (and memoise) the intensity matrix of an encoder pair."""
    scale = float(scale)
    D = scale * np.outer(e1.d, e2.d)
    a1 = scale * e2.lo * e1.d
    a2 = scale * e1.lo * e2.d
    for arr in (D, a1, a2):
        arr.setflags(write=False)
    return IntensityMatrix(D, a1, a2, scale * e1.lo * e2.lo, (e1, e2), scale)


def _check_pair(e1, e2, D):
    if D.D.shape != (e1.T, e2.T):
        raise InvalidArgument(f"intensity matrix shape {D.D.shape} does not match T=({e1.T}, {e2.T})")
    if D.provenance != (e1, e2):
        raise InvalidArgument("intensity matrix was built for a different encoder pair")


def spike_multiply(e1: IdentityEncoder, x1, e2: IdentityEncoder, x2, D: IntensityMatrix,
                   ctx: Optional[SpikeContext] = None, component="mul") -> np.ndarray:
    """Elementwise product of ``x1`` and ``x2`` computed from their spike trains.

    Equals ``D.scale * decode(e1, x1) * decode(e2, x2)`` up to rounding.
    """
    _check_pair(e1, e2, D)
    s1 = encode(e1, x1, ctx, component + ".a").spikes.astype(np.float64)
    s2 = encode(e2, x2, ctx, component + ".b").spikes.astype(np.float64)
    s1, s2 = np.broadcast_arrays(s1, s2)
    return np.einsum("...i,ij,...j->...", s1, D.D, s2) + s1 @ D.a1 + s2 @ D.a2 + D.c


def spike_matmul(A, B, ea: IdentityEncoder, eb: IdentityEncoder, D: IntensityMatrix,
                 ctx: Optional[SpikeContext] = None, component="mul") -> np.ndarray:
    """``A @ B`` over the last two axes with both operands spike-encoded."""
    _check_pair(ea, eb, D)
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim < 2 or B.ndim < 2 or A.shape[-1] != B.shape[-2]:
        raise InvalidArgument(f"cannot multiply shapes {A.shape} and {B.shape}")
    K = A.shape[-1]
    sa = encode(ea, A, ctx, component + ".a").spikes.astype(np.float64)  # (..., I, K, T)
    sb = encode(eb, B, ctx, component + ".b").spikes.astype(np.float64)  # (..., K, J, T)
    prod = np.einsum("...ikt,tu,...kju->...ij", sa, D.D, sb, optimize=True)
    row = np.sum(sa @ D.a1, axis=-1)[..., :, None]  # lo_b * sum_k m_a[i, k]
    col = np.sum(sb @ D.a2, axis=-2)[..., None, :]  # lo_a * sum_k m_b[k, j]
    return prod + row + col + K * D.c
