"""Spike-driven activation, exponential, reciprocal, softmax and LayerNorm.

Every nonlinearity is evaluated by a fitted MBE approximator on a fixed
interval; range reduction to that interval only uses exact power-of-two
scaling (``ldexp``) and exponent bookkeeping.  Products of two activations
go through :func:`spike_multiply`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .arith import IdentityEncoder, intensity_matrix, spike_multiply
from .errors import InvalidArgument, NotFittedError
from .fitting import FittedApproximator
from .neuron import forward
from .stats import SpikeContext

__all__ = [
    "FrexpParts",
    "SpikingOpSet",
    "SoftmaxEncoders",
    "LayerNormEncoders",
    "spiking_activation",
    "spiking_exp",
    "frexp_decompose",
    "spiking_reciprocal",
    "spiking_inv_sqrt",
    "spiking_softmax",
    "spiking_layernorm",
]

LOG2E = float(np.log2(np.e))


@dataclass(frozen=True)
class FrexpParts:
    M: np.ndarray
    E: np.ndarray


@dataclass(frozen=True, eq=False)
class SpikingOpSet:
    """Fitted approximators shared by the spiking operators.

    ``exp2frac``, ``inv`` and ``invsqrt`` are expected on ``[0, 1]``,
    ``[0.5, 1]`` and ``[0.5, 2]``.
    """

    exp2frac: Optional[FittedApproximator] = None
    inv: Optional[FittedApproximator] = None
    invsqrt: Optional[FittedApproximator] = None
    gelu: Optional[FittedApproximator] = None
    tanh: Optional[FittedApproximator] = None

    def require(self, name):
        op = getattr(self, name)
        if op is None:
            raise NotFittedError(f"no fitted {name} approximator in the op set")
        return op


@dataclass(frozen=True)
class SoftmaxEncoders:
    """Encoders of the final ``exp * (1 / sum)`` product."""

    exp: IdentityEncoder
    recip: IdentityEncoder
    min_input: float = -np.inf

    @classmethod
    def default(cls, T, K=None):
        # after the max shift exp values lie in (0, 1] and 1/sum in [1/K, 1]
        return cls(IdentityEncoder(0.0, 1.25, T), IdentityEncoder(0.0, 1.25, T))


@dataclass(frozen=True)
class LayerNormEncoders:
    """Encoders of the centered inputs and of the inverse standard deviation."""

    centered: IdentityEncoder
    invstd: IdentityEncoder


def _clip(x, lo, hi, ctx):
    if ctx is not None:
        ctx.clamped(np.count_nonzero((x < lo) | (x > hi)))
    return np.clip(x, lo, hi)


def _apply(op: FittedApproximator, x, ctx, component):
    if ctx is None or ctx.recorder is None:
        return op(x)
    out, spikes = forward(op.neuron, x, return_spikes=True)
    ctx.spikes(component, spikes, op.neuron.n_basis)
    return out


def spiking_activation(op: Optional[FittedApproximator], x, ctx: Optional[SpikeContext] = None):
    """Elementwise MBE approximation; inputs are clipped to the fitted interval."""
    if op is None:
        raise NotFittedError("activation approximator is not fitted")
    a, b = op.target.interval
    return _apply(op, _clip(np.asarray(x, dtype=np.float64), a, b, ctx), ctx, op.target.id.value)


def spiking_exp(x, exp2frac: FittedApproximator, ctx: Optional[SpikeContext] = None):
    """``e**x = 2**k * 2**frac`` with ``k = floor(x log2 e)``, ``frac`` in ``[0, 1)``."""
    z = np.asarray(x, dtype=np.float64) * LOG2E
    k = np.floor(z)
    frac = z - k
    return np.ldexp(_apply(exp2frac, frac, ctx, "exp2frac"), k.astype(np.int64))


def frexp_decompose(x) -> FrexpParts:
    """Mantissa ``M`` in ``[0.5, 1)`` and integer exponent with ``M * 2**E == x``."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise InvalidArgument("frexp_decompose needs finite, strictly positive inputs")
    M, E = np.frexp(x)
    return FrexpParts(M, E)


def spiking_reciprocal(x, inv: FittedApproximator, ctx: Optional[SpikeContext] = None):
    """``1/x = 2**-E / M`` with ``1/M`` from the MBE approximator."""
    p = frexp_decompose(x)
    return np.ldexp(_apply(inv, p.M, ctx, "inv"), -p.E)


def spiking_inv_sqrt(x, invsqrt: FittedApproximator, ctx: Optional[SpikeContext] = None):
    """``x**-0.5`` with an even exponent: odd ``E`` moves one factor 2 into ``M``."""
    p = frexp_decompose(x)
    odd = (p.E & 1).astype(bool)
    M = np.where(odd, 2.0 * p.M, p.M)
    E = p.E - odd
    return np.ldexp(_apply(invsqrt, M, ctx, "invsqrt"), -(E // 2))


def spiking_softmax(x, ops: SpikingOpSet, encoders: SoftmaxEncoders, axis=-1, shift=True,
                    ctx: Optional[SpikeContext] = None, trace=None):
    """Softmax along ``axis``: exp, sum, reciprocal, then spike products.

    ``trace``, if given, is a dict that receives the intermediate values.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or x.shape[axis] == 0:
        raise InvalidArgument("softmax needs at least one element")
    if shift:
        x = x - np.max(x, axis=axis, keepdims=True)
    if np.isfinite(encoders.min_input):
        x = _clip(x, encoders.min_input, np.inf, ctx)
    e = spiking_exp(x, ops.require("exp2frac"), ctx)
    s = np.sum(e, axis=axis, keepdims=True)
    r = spiking_reciprocal(s, ops.require("inv"), ctx)
    D = intensity_matrix(encoders.exp, encoders.recip)
    out = spike_multiply(encoders.exp, e, encoders.recip, r, D, ctx, "mul")
    if trace is not None:
        trace.update(input=x, exp=e, sum=s, recip=r)
    return out


def spiking_layernorm(x, ops: SpikingOpSet, encoders: LayerNormEncoders, gamma=None, beta=None, eps=1e-5,
                      ctx: Optional[SpikeContext] = None, trace=None):
    """LayerNorm over the last axis.

    The variance uses an intensity matrix pre-scaled by ``1/n``; ``gamma`` and
    ``beta`` are applied as constant scale and shift.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 1:
        raise InvalidArgument("layernorm needs at least one element")
    c = x - np.mean(x, axis=-1, keepdims=True)
    ec = encoders.centered
    sq = spike_multiply(ec, c, ec, c, intensity_matrix(ec, ec, 1.0 / n), ctx, "var")
    var = np.sum(sq, axis=-1, keepdims=True)
    # encoded squares are non-negative; guard the rounding of the offset terms
    v = np.maximum(var, 0.0) + eps
    istd = spiking_inv_sqrt(v, ops.require("invsqrt"), ctx)
    out = spike_multiply(ec, c, encoders.invstd, istd, intensity_matrix(ec, encoders.invstd), ctx, "mul")
    if trace is not None:
        trace.update(centered=c, var=var, invstd=istd)
    if gamma is not None:
        out = out * np.asarray(gamma, dtype=np.float64)
    if beta is not None:
        out = out + np.asarray(beta, dtype=np.float64)
    return out
