"""Energy estimates and approximation-bound terms.

Energies are in pJ.  The bound calculators return the three gap terms of the
FS and MBE error bounds with all big-O constants set to one (natural logs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from .errors import InvalidArgument
from .stats import FiringStats

__all__ = [
    "EnergyConstants",
    "BoundInputs",
    "BoundTerms",
    "FiringStats",
    "energy_mbe",
    "energy_fp_mult",
    "energy_ratio",
    "gelu_energy_comparison",
    "bound_fs",
    "bound_mbe",
    "firing_rate",
]

# float GELU cost used for the activation energy comparison
GELU_FLOPS = 70
GELU_MACS = 35


@dataclass(frozen=True)
class EnergyConstants:
    e_mac: float = 4.6
    e_ac: float = 0.9

    def __post_init__(self):
        if not (self.e_mac > 0 and self.e_ac > 0):
            raise InvalidArgument("energy constants must be positive")


DEFAULT_CONSTANTS = EnergyConstants()


def _rate(eta, name="eta"):
    eta = float(eta)
    if not 0.0 <= eta <= 1.0:
        raise InvalidArgument(f"{name} must lie in [0, 1], got {eta}")
    return eta


def _count(v, name):
    if v < 0:
        raise InvalidArgument(f"{name} must be non-negative, got {v}")
    return v


def energy_mbe(T, eta, N, C=1, N_h=1, consts: EnergyConstants = DEFAULT_CONSTANTS) -> float:
    """``T * eta * N * C * N_h * e_ac`` for one MBE-approximated operation."""
    eta = _rate(eta)
    for v, name in ((T, "T"), (N, "N"), (C, "C"), (N_h, "N_h")):
        _count(v, name)
    return T * eta * N * C * N_h * consts.e_ac


def energy_fp_mult(T, eta1, eta2, MO=1, consts: EnergyConstants = DEFAULT_CONSTANTS) -> float:
    """``T**2 * eta1 * eta2 * MO * e_ac`` for ``MO`` spike multiplications."""
    eta1, eta2 = _rate(eta1, "eta1"), _rate(eta2, "eta2")
    _count(T, "T")
    _count(MO, "MO")
    return T * T * eta1 * eta2 * MO * consts.e_ac


def energy_ratio(sops, flops, consts: EnergyConstants = DEFAULT_CONSTANTS) -> float:
    """Spiking over float energy: ``(sops * e_ac) / (flops * e_mac)``."""
    if not flops > 0:
        raise InvalidArgument(f"flops must be positive, got {flops}")
    _count(sops, "sops")
    return (sops * consts.e_ac) / (flops * consts.e_mac)


def gelu_energy_comparison(T=16, eta=0.3822, N=4, consts: EnergyConstants = DEFAULT_CONSTANTS) -> dict:
    """MBE GELU energy against a float GELU costed as 70 FLOPs and as 35 MACs."""
    e = energy_mbe(T, eta, N, consts=consts)
    return {
        "mbe_pj": e,
        "float_pj_70_flops": GELU_FLOPS * consts.e_mac,
        "float_pj_35_macs": GELU_MACS * consts.e_mac,
        "ratio_70_flops": e / (GELU_FLOPS * consts.e_mac),
        "ratio_35_macs": e / (GELU_MACS * consts.e_mac),
    }


@dataclass(frozen=True)
class BoundInputs:
    T: int = 16
    N: int = 1
    M: float = 10000
    L_f: float = 1.0
    y_max: float = 1.0
    d_l1: float = 0.0
    w_l1: float = 0.0
    alpha_abs: float = 0.0
    tau_max: float = 1.0
    dt: float = 1.0

    def __post_init__(self):
        if self.T < 1 or self.N < 1:
            raise InvalidArgument("T and N must be at least 1")
        if self.M < 2:
            raise InvalidArgument("M must be at least 2")
        for name in ("L_f", "y_max", "d_l1", "w_l1", "alpha_abs"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"{name} must be non-negative")
        if not (self.tau_max > 0 and self.dt > 0):
            raise InvalidArgument("tau_max and dt must be positive")


@dataclass(frozen=True)
class BoundTerms:
    """Gap terms, up to constants."""

    empirical: float
    parametric: float
    quantization: float

    def as_tuple(self):
        return (self.empirical, self.parametric, self.quantization)


def bound_fs(inputs: BoundInputs) -> BoundTerms:
    """FS terms: ``sqrt(T ln T ln M / M)``, ``L_f y_max / T``, ``||d||_1 / T``."""
    T, M = inputs.T, inputs.M
    return BoundTerms(
        math.sqrt(T * math.log(T) * math.log(M) / M),
        inputs.L_f * inputs.y_max / T,
        inputs.d_l1 / T,
    )


def bound_mbe(inputs: BoundInputs) -> BoundTerms:
    """MBE terms: ``sqrt(N ln N ln M / M)``, ``L_f y_max / (N T)``,
    ``||w||_1 |alpha| tau_max / (T dt)``."""
    T, N, M = inputs.T, inputs.N, inputs.M
    return BoundTerms(
        math.sqrt(N * math.log(N) * math.log(M) / M),
        inputs.L_f * inputs.y_max / (N * T),
        inputs.w_l1 * inputs.alpha_abs * inputs.tau_max / (T * inputs.dt),
    )


def firing_rate(stats) -> "float | dict":
    """Spikes per ``T * N * element`` slot.

    Accepts one :class:`FiringStats` or a mapping of site -> stats (returns
    a mapping of site -> rate).
    """
    if isinstance(stats, Mapping):
        return {site: firing_rate(s) for site, s in stats.items()}
    if stats.elements <= 0 or stats.slots <= 0:
        raise InvalidArgument("firing rate needs at least one recorded element")
    return stats.spikes / stats.slots
