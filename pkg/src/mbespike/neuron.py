"""Few-spike (FS) and multi-basis exponential-decay (MBE) neuron simulation.

Both neurons are simulated exactly over ``T`` discrete timesteps: the membrane
starts at the input, a spike fires whenever ``u >= threshold`` and the
membrane is then lowered by the reset value.  The decoded output is the sum of
the spike intensities of the steps that fired.

The simulators are vectorised over inputs; the scalar entry points
(:func:`fs_simulate`, :func:`mbe_simulate`) return a full :class:`SpikeRecord`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgument

__all__ = [
    "FSParams",
    "MBEBasis",
    "MBENeuron",
    "FreeScheduleNeuron",
    "SpikeRecord",
    "decay_schedule",
    "binary_fs_params",
    "fs_simulate",
    "mbe_simulate",
    "simulate_spikes",
    "forward",
    "readout",
]


def decay_schedule(alpha: float, tau: float, dt: float, T: int) -> np.ndarray:
    """Return ``alpha * exp(-t * dt / tau)`` for ``t = 0 .. T-1``."""
    if not tau > 0:
        raise InvalidArgument(f"tau must be positive, got {tau}")
    if not dt > 0:
        raise InvalidArgument(f"dt must be positive, got {dt}")
    if int(T) != T or T < 1:
        raise InvalidArgument(f"T must be a positive integer, got {T}")
    t = np.arange(int(T), dtype=np.float64)
    return alpha * np.exp(-t * (dt / tau))


@dataclass(frozen=True, eq=False)
class FSParams:
    """Per-timestep intensities ``d``, resets ``r`` and thresholds ``vth``."""

    d: np.ndarray
    r: np.ndarray
    vth: np.ndarray

    def __post_init__(self):
        arrs = [np.array(a, dtype=np.float64).reshape(-1) for a in (self.d, self.r, self.vth)]
        if len({a.size for a in arrs}) != 1:
            raise InvalidArgument("d, r and vth must have the same length")
        if arrs[0].size < 1:
            raise InvalidArgument("FS schedules need at least one timestep")
        for name, a in zip(("d", "r", "vth"), arrs):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def T(self) -> int:
        return self.d.size

    # uniform view used by the batch simulator
    def schedules(self):
        return self.d[None, :], self.r[None, :], self.vth[None, :]

    @property
    def w(self) -> np.ndarray:
        return np.ones(1)

    @property
    def n_basis(self) -> int:
        return 1

    def initial_membrane(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64)[..., None]


def binary_fs_params(T: int, scale: float) -> FSParams:
    """Binary schedule ``d = r = vth = scale * 2**-(t+1)``.

    Every ``k * scale * 2**-T`` with ``0 <= k < 2**T`` decodes exactly; any
    ``x`` in ``[0, scale)`` decodes with error below ``scale * 2**-T``.
    The ``2**(T-t)`` variant is ``binary_fs_params(T, 2**(T+1))``.
    """
    if int(T) != T or T < 1:
        raise InvalidArgument(f"T must be a positive integer, got {T}")
    if not scale > 0:
        raise InvalidArgument(f"scale must be positive, got {scale}")
    d = np.ldexp(np.full(int(T), float(scale)), -(np.arange(int(T)) + 1))
    return FSParams(d, d.copy(), d.copy())


@dataclass(frozen=True, eq=False)
class MBEBasis:
    """Time constants of one basis plus its fixed input map.

    The basis membrane starts at ``input_gain * (x - input_offset)``; the
    default map is the identity.
    """

    tau_d: float
    tau_r: float
    tau_vth: float
    dt: float = 1.0
    input_offset: float = 0.0
    input_gain: float = 1.0

    def __post_init__(self):
        for name in ("tau_d", "tau_r", "tau_vth", "dt"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidArgument(f"{name} must be positive and finite, got {v}")
        if not (np.isfinite(self.input_gain) and self.input_gain != 0):
            raise InvalidArgument("input_gain must be finite and non-zero")


class _BasisBank:
    """Shared behaviour of neurons made of ``N`` parallel bases."""

    input_offsets: np.ndarray
    input_gains: np.ndarray
    w: np.ndarray

    @property
    def n_basis(self) -> int:
        return self.w.size

    def initial_membrane(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x[..., None] - self.input_offsets) * self.input_gains


@dataclass(frozen=True, eq=False)
class MBENeuron(_BasisBank):
    """``N`` exponentially decaying bases sharing the scale ``alpha``.

    Schedules are materialised once per neuron and cached.
    """

    alpha: float
    bases: tuple
    w: np.ndarray
    T: int

    def __post_init__(self):
        bases = tuple(self.bases)
        if len(bases) < 1:
            raise InvalidArgument("an MBE neuron needs at least one basis")
        w = np.array(self.w, dtype=np.float64).reshape(-1)
        if w.size != len(bases):
            raise InvalidArgument("need exactly one readout weight per basis")
        if not np.all(np.isfinite(w)):
            raise InvalidArgument("readout weights must be finite")
        if int(self.T) != self.T or self.T < 1:
            raise InvalidArgument(f"T must be a positive integer, got {self.T}")
        if not np.isfinite(self.alpha):
            raise InvalidArgument("alpha must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "bases", bases)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "T", int(self.T))
        object.__setattr__(self, "alpha", float(self.alpha))

    @cached_property
    def _schedules(self):
        out = []
        for attr in ("tau_d", "tau_r", "tau_vth"):
            s = np.stack([decay_schedule(self.alpha, getattr(b, attr), b.dt, self.T) for b in self.bases])
            s.setflags(write=False)
            out.append(s)
        return tuple(out)

    def schedules(self):
        """``(d, r, vth)``, each of shape ``(N, T)``."""
        return self._schedules

    @cached_property
    def input_offsets(self) -> np.ndarray:
        return np.array([b.input_offset for b in self.bases])

    @cached_property
    def input_gains(self) -> np.ndarray:
        return np.array([b.input_gain for b in self.bases])


@dataclass(frozen=True, eq=False)
class FreeScheduleNeuron(_BasisBank):
    """Multi-basis neuron whose per-timestep schedules are free parameters.

    Used for the no-decay ablation: the same readout as :class:`MBENeuron`
    but without the exponential constraint tying the timesteps together.
    """

    d: np.ndarray
    r: np.ndarray
    vth: np.ndarray
    w: np.ndarray
    input_offsets: np.ndarray = field(default=None)
    input_gains: np.ndarray = field(default=None)

    def __post_init__(self):
        arrs = [np.array(a, dtype=np.float64) for a in (self.d, self.r, self.vth)]
        if arrs[0].ndim != 2 or any(a.shape != arrs[0].shape for a in arrs):
            raise InvalidArgument("d, r and vth must share an (N, T) shape")
        n = arrs[0].shape[0]
        w = np.array(self.w, dtype=np.float64).reshape(-1)
        if w.size != n:
            raise InvalidArgument("need exactly one readout weight per basis")
        off = np.zeros(n) if self.input_offsets is None else np.array(self.input_offsets, dtype=np.float64)
        gain = np.ones(n) if self.input_gains is None else np.array(self.input_gains, dtype=np.float64)
        for name, a in zip(("d", "r", "vth", "w", "input_offsets", "input_gains"), arrs + [w, off, gain]):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def T(self) -> int:
        return self.d.shape[1]

    def schedules(self):
        return self.d, self.r, self.vth


@dataclass(frozen=True, eq=False)
class SpikeRecord:
    spikes: np.ndarray
    approx: float
    membrane_trace: Optional[np.ndarray] = None


def simulate_spikes(u0: np.ndarray, d: np.ndarray, r: np.ndarray, vth: np.ndarray, trace: bool = False):
    """Run ``N`` bases over a batch of initial membranes.

    ``u0`` has shape ``(..., N)``; schedules have shape ``(N, T)``.  Returns a
    boolean spike array of shape ``(..., N, T)`` and, if ``trace`` is set, the
    membrane potential seen at each step (same shape).
    """
    u = np.array(u0, dtype=np.float64)
    T = d.shape[1]
    spikes = np.empty(u.shape + (T,), dtype=bool)
    mem = np.empty(u.shape + (T,)) if trace else None
    for t in range(T):
        if trace:
            mem[..., t] = u
        s = u >= vth[:, t]
        spikes[..., t] = s
        u = u - s * r[:, t]
    return spikes, mem


def readout(spikes: np.ndarray, d: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``sum_n w[n] * sum_t d[n, t] * s[n, t]`` over the trailing two axes."""
    per_basis = np.sum(d * spikes, axis=-1)
    return np.sum(w * per_basis, axis=-1)


def forward(neuron, x, return_spikes: bool = False):
    """Vectorised decode of ``neuron`` at every element of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    d, r, vth = neuron.schedules()
    spikes, _ = simulate_spikes(neuron.initial_membrane(x), d, r, vth)
    out = readout(spikes, d, neuron.w)
    if return_spikes:
        return out, spikes
    return out


def _record(neuron, x: float, trace: bool) -> SpikeRecord:
    d, r, vth = neuron.schedules()
    spikes, mem = simulate_spikes(neuron.initial_membrane(np.float64(x)), d, r, vth, trace=trace)
    approx = float(readout(spikes, d, neuron.w))
    return SpikeRecord(spikes=spikes.astype(np.uint8), approx=approx, membrane_trace=mem)


def fs_simulate(params: FSParams, x: float, trace: bool = False) -> SpikeRecord:
    """Simulate one FS neuron; ``spikes`` has shape ``(1, T)``."""
    return _record(params, x, trace)


def mbe_simulate(neuron, x: float, trace: bool = False) -> SpikeRecord:
    """Simulate every basis of ``neuron`` on the scalar input ``x``."""
    return _record(neuron, x, trace)


def fs_as_mbe(params: FSParams, w: Sequence[float] = (1.0,)) -> FreeScheduleNeuron:
    return FreeScheduleNeuron(params.d[None], params.r[None], params.vth[None], np.asarray(w, dtype=np.float64))
