"""Reference pre-LN Transformer, calibration, conversion and fidelity.

The float model calls four hooks on a backend object for every operation
that is not spike-friendly: ``layernorm``, ``matmul`` (activation times
activation), ``softmax`` and ``activation``.  Calibration, float and spiking
execution are different backends over the same forward code, so the weights
and the linear layers are shared untouched.

Site ids are ``L{layer}.{ln1|qk|softmax|av|ln2|act}``.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .arith import IdentityEncoder, IntensityMatrix, intensity_matrix, spike_matmul
from .errors import ConversionError, InvalidArgument
from .fitting import ApproximatorCache, FitConfig, FittedApproximator, TargetFn
from .ops import (
    LayerNormEncoders,
    SoftmaxEncoders,
    SpikingOpSet,
    spiking_activation,
    spiking_layernorm,
    spiking_softmax,
)
from .stats import SaturationCounter, SpikeContext, SpikeRecorder

__all__ = [
    "RefTransformerConfig",
    "FloatTransformer",
    "CalibrationProfile",
    "RoleStats",
    "SiteConversion",
    "SpikingTransformer",
    "Fidelity",
    "RunStats",
    "build_reference",
    "calibrate",
    "convert",
    "forward_spiking",
    "forward_float",
    "compare",
    "audit_sites",
    "OP_INTERVALS",
]

LN_EPS = 1e-5
HIST_BINS = 32
RANGE_PAD = 0.05
OP_INTERVALS = {"exp2frac": (0.0, 1.0), "inv": (0.5, 1.0), "invsqrt": (0.5, 2.0)}
# the shared ops appear at every softmax and LayerNorm site, so they get a
# wider structure search than the per-site activations
OP_FIT_CONFIG = FitConfig(n_starts=4)

SITE_KINDS = {
    "ln1": "layernorm",
    "qk": "matmul",
    "softmax": "softmax",
    "av": "matmul",
    "ln2": "layernorm",
    "act": "activation",
}
ROLES = {
    "layernorm": ("input", "centered", "var", "invstd"),
    "matmul": ("a", "b"),
    "softmax": ("input", "exp", "sum", "recip"),
    "activation": ("input",),
}


def _gelu(x):
    return TargetFn("gelu", (-1.0, 1.0))(x)


ACTIVATIONS = {"gelu": _gelu, "tanh": np.tanh}


@dataclass(frozen=True)
class RefTransformerConfig:
    d_model: int = 32
    n_heads: int = 2
    d_ff: int = 64
    n_layers: int = 2
    seq_len: int = 8
    seed: int = 0
    activation: str = "gelu"

    def __post_init__(self):
        for name in ("d_model", "n_heads", "d_ff", "seq_len"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidArgument(f"{name} must be a positive integer, got {v}")
        if int(self.n_layers) != self.n_layers or self.n_layers < 0:
            raise InvalidArgument(f"n_layers must be a non-negative integer, got {self.n_layers}")
        if self.d_model % self.n_heads:
            raise InvalidArgument("d_model must be divisible by n_heads")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(f"activation must be one of {sorted(ACTIVATIONS)}")

    @property
    def d_head(self):
        return self.d_model // self.n_heads


# --------------------------------------------------------------------------
# float model


class FloatBackend:
    def layernorm(self, site, x, gamma, beta):
        c = x - x.mean(axis=-1, keepdims=True)
        return c / np.sqrt(np.mean(c * c, axis=-1, keepdims=True) + LN_EPS) * gamma + beta

    def matmul(self, site, a, b):
        return a @ b

    def softmax(self, site, x):
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    def activation(self, site, x, kind):
        return ACTIVATIONS[kind](x)


def _layer_names(i):
    p = f"L{i}."
    return {
        "ln1.gamma": p + "ln1.gamma", "ln1.beta": p + "ln1.beta",
        "wq": p + "attn.wq", "wk": p + "attn.wk", "wv": p + "attn.wv", "wo": p + "attn.wo",
        "bq": p + "attn.bq", "bk": p + "attn.bk", "bv": p + "attn.bv", "bo": p + "attn.bo",
        "ln2.gamma": p + "ln2.gamma", "ln2.beta": p + "ln2.beta",
        "w1": p + "mlp.w1", "b1": p + "mlp.b1", "w2": p + "mlp.w2", "b2": p + "mlp.b2",
    }


class FloatTransformer:
    """Random-weight pre-LN Transformer encoder stack (no final LayerNorm)."""

    def __init__(self, config: RefTransformerConfig, weights: dict):
        self.config = config
        self.weights = {}
        for k, v in weights.items():
            a = np.array(v, dtype=np.float64)
            a.setflags(write=False)
            self.weights[k] = a

    def sites(self):
        """``[(site_id, kind), ...]`` in execution order."""
        return [(f"L{i}.{s}", kind) for i in range(self.config.n_layers) for s, kind in SITE_KINDS.items()]

    def forward(self, x, backend=None, return_layers=False):
        """``x``: ``(seq, d_model)`` or ``(batch, seq, d_model)``."""
        cfg = self.config
        backend = backend or FloatBackend()
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (2, 3) or x.shape[-1] != cfg.d_model:
            raise InvalidArgument(f"input must be (..., seq, {cfg.d_model}), got {x.shape}")
        H, dh = cfg.n_heads, cfg.d_head
        layers = []
        for i in range(cfg.n_layers):
            W = {k: self.weights[v] for k, v in _layer_names(i).items()}
            p = f"L{i}."
            h = backend.layernorm(p + "ln1", x, W["ln1.gamma"], W["ln1.beta"])
            q, k, v = (h @ W["w" + n] + W["b" + n] for n in "qkv")
            # (..., seq, d) -> (..., H, seq, dh)
            q, k, v = (np.moveaxis(t.reshape(t.shape[:-1] + (H, dh)), -2, -3) for t in (q, k, v))
            scores = backend.matmul(p + "qk", q, np.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
            probs = backend.softmax(p + "softmax", scores)
            o = backend.matmul(p + "av", probs, v)
            o = np.moveaxis(o, -3, -2).reshape(x.shape)
            x = x + o @ W["wo"] + W["bo"]
            h = backend.layernorm(p + "ln2", x, W["ln2.gamma"], W["ln2.beta"])
            a = backend.activation(p + "act", h @ W["w1"] + W["b1"], cfg.activation)
            x = x + a @ W["w2"] + W["b2"]
            layers.append(x)
        return (x, layers) if return_layers else x


def build_reference(config: RefTransformerConfig) -> FloatTransformer:
    """Deterministic random weights for ``config``.

    Matrices have std ``1/sqrt(fan_in)``; the two projections that write into
    the residual stream (``wo``, ``w2``) are further scaled by
    ``1/sqrt(2 n_layers)``, the usual GPT-2 style initialisation.
    """
    rng = np.random.default_rng(config.seed)
    d, f = config.d_model, config.d_ff
    res = 1.0 / math.sqrt(2 * max(config.n_layers, 1))
    weights = {}
    for i in range(config.n_layers):
        n = _layer_names(i)
        for ln in ("ln1", "ln2"):
            weights[n[ln + ".gamma"]] = 1.0 + 0.1 * rng.standard_normal(d)
            weights[n[ln + ".beta"]] = 0.1 * rng.standard_normal(d)
        for w in ("wq", "wk", "wv", "wo"):
            weights[n[w]] = rng.standard_normal((d, d)) / math.sqrt(d) * (res if w == "wo" else 1.0)
        for b in ("bq", "bk", "bv", "bo"):
            weights[n[b]] = 0.02 * rng.standard_normal(d)
        weights[n["w1"]] = rng.standard_normal((d, f)) / math.sqrt(d)
        weights[n["b1"]] = 0.02 * rng.standard_normal(f)
        weights[n["w2"]] = rng.standard_normal((f, d)) / math.sqrt(f) * res
        weights[n["b2"]] = 0.02 * rng.standard_normal(d)
    return FloatTransformer(config, weights)


def forward_float(model: FloatTransformer, x, return_layers=False):
    return model.forward(x, FloatBackend(), return_layers)


# --------------------------------------------------------------------------
# calibration


@dataclass(frozen=True)
class RoleStats:
    min: float
    max: float
    count: int
    edges: tuple
    counts: tuple

    @classmethod
    def from_values(cls, values):
        v = np.concatenate([np.ravel(a) for a in values])
        counts, edges = np.histogram(v, bins=HIST_BINS)
        return cls(float(v.min()), float(v.max()), int(v.size), tuple(edges.tolist()), tuple(int(c) for c in counts))

    def padded(self, pad=RANGE_PAD):
        span = self.max - self.min
        m = pad * max(span, 1e-3 * max(abs(self.min), abs(self.max), 1.0))
        return self.min - m, self.max + m


@dataclass(frozen=True)
class CalibrationProfile:
    """``sites[site] = {"kind": kind, "roles": {role: RoleStats}}``."""

    sites: dict

    def role(self, site, role) -> RoleStats:
        try:
            return self.sites[site]["roles"][role]
        except KeyError:
            raise ConversionError(f"calibration profile has no record for {site}/{role}", site) from None


class CalibratingBackend(FloatBackend):
    """Float execution that keeps every operand seen at each site."""

    def __init__(self):
        self.values = {}
        self.kinds = {}

    def _keep(self, site, kind, **roles):
        self.kinds[site] = kind
        rec = self.values.setdefault(site, {})
        for role, v in roles.items():
            rec.setdefault(role, []).append(np.array(v, dtype=np.float64))

    def layernorm(self, site, x, gamma, beta):
        c = x - x.mean(axis=-1, keepdims=True)
        var = np.mean(c * c, axis=-1, keepdims=True) + LN_EPS
        self._keep(site, "layernorm", input=x, centered=c, var=var, invstd=1.0 / np.sqrt(var))
        return super().layernorm(site, x, gamma, beta)

    def matmul(self, site, a, b):
        self._keep(site, "matmul", a=a, b=b)
        return a @ b

    def softmax(self, site, x):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        s = e.sum(axis=-1, keepdims=True)
        self._keep(site, "softmax", input=z, exp=e, sum=s, recip=1.0 / s)
        return e / s

    def activation(self, site, x, kind):
        self._keep(site, "activation", input=x)
        return super().activation(site, x, kind)


def calibrate(model: FloatTransformer, batches) -> CalibrationProfile:
    """Run float forwards over ``batches`` and summarise every site operand."""
    batches = list(batches)
    if not batches:
        raise InvalidArgument("calibration needs at least one batch")
    backend = CalibratingBackend()
    for b in batches:
        model.forward(b, backend)
    sites = {
        site: {"kind": backend.kinds[site], "roles": {r: RoleStats.from_values(v) for r, v in roles.items()}}
        for site, roles in backend.values.items()
    }
    return CalibrationProfile(sites)


# --------------------------------------------------------------------------
# conversion


@dataclass(frozen=True, eq=False)
class SiteConversion:
    kind: str
    encoders: tuple = ()
    D: Optional[IntensityMatrix] = None
    softmax: Optional[SoftmaxEncoders] = None
    layernorm: Optional[LayerNormEncoders] = None
    approximator: Optional[FittedApproximator] = None


@dataclass(frozen=True, eq=False)
class SpikingTransformer:
    reference: FloatTransformer
    sites: dict
    ops: SpikingOpSet
    T: int
    N_act: int
    N_other: int


def _encoder(stats: RoleStats, T, symmetric=False):
    lo, hi = stats.padded()
    if symmetric:
        r = max(abs(lo), abs(hi))
        lo, hi = -r, r
    return IdentityEncoder(lo, hi, T)


def _activation_interval(stats: RoleStats):
    # snapped outward to integers so sites with similar ranges share a fit
    lo, hi = stats.padded()
    a, b = math.floor(lo), math.ceil(hi)
    return (float(a), float(b if b > a else a + 1))


def build_opset(T, N_other, cache=None, config: FitConfig = OP_FIT_CONFIG) -> SpikingOpSet:
    cache = cache if cache is not None else ApproximatorCache()
    return SpikingOpSet(**{name: cache.get(TargetFn(name, iv), N_other, T, config) for name, iv in OP_INTERVALS.items()})


def convert(model: FloatTransformer, profile: CalibrationProfile, cache=None, T=16, N_act=4, N_other=8,
            act_config: Optional[FitConfig] = None, op_config: FitConfig = OP_FIT_CONFIG) -> SpikingTransformer:
    """Swap every non-spike-friendly site of ``model`` for its spiking version.

    ``cache`` provides fitted approximators (anything with the
    :class:`ApproximatorCache` ``get`` signature); fits happen on demand.
    """
    if profile is None:
        raise InvalidArgument("conversion needs a calibration profile")
    cache = cache if cache is not None else ApproximatorCache()
    act_config = act_config or FitConfig()
    sites = {}
    for site, kind in model.sites():
        if site not in profile.sites:
            raise ConversionError(f"site {site} is not covered by the calibration profile", site)
        if kind == "matmul":
            ea = _encoder(profile.role(site, "a"), T)
            eb = _encoder(profile.role(site, "b"), T)
            sites[site] = SiteConversion(kind, (ea, eb), intensity_matrix(ea, eb))
        elif kind == "softmax":
            enc = SoftmaxEncoders(
                _encoder(profile.role(site, "exp"), T),
                _encoder(profile.role(site, "recip"), T),
                profile.role(site, "input").padded()[0],
            )
            sites[site] = SiteConversion(kind, softmax=enc)
        elif kind == "layernorm":
            enc = LayerNormEncoders(
                _encoder(profile.role(site, "centered"), T, symmetric=True),
                _encoder(profile.role(site, "invstd"), T),
            )
            sites[site] = SiteConversion(kind, layernorm=enc)
        else:
            target = TargetFn(model.config.activation, _activation_interval(profile.role(site, "input")))
            sites[site] = SiteConversion(kind, approximator=cache.get(target, N_act, T, act_config))
    ops = build_opset(T, N_other, cache, op_config) if sites else SpikingOpSet()
    return SpikingTransformer(model, sites, ops, int(T), int(N_act), int(N_other))


def audit_sites(snn: SpikingTransformer):
    """Model sites left without a spiking replacement (empty when complete)."""
    return [site for site, kind in snn.reference.sites() if site not in snn.sites or snn.sites[site].kind != kind]


# --------------------------------------------------------------------------
# spiking execution


@dataclass
class RunStats:
    saturation: SaturationCounter = field(default_factory=SaturationCounter)
    recorder: SpikeRecorder = field(default_factory=SpikeRecorder)
    # scalar products per (site, component), for the multiplication energy
    products: Counter = field(default_factory=Counter)


class SpikingBackend:
    def __init__(self, snn: SpikingTransformer, stats: RunStats):
        self.snn, self.stats = snn, stats

    def _ctx(self, site):
        return SpikeContext(site, self.stats.saturation, self.stats.recorder)

    def layernorm(self, site, x, gamma, beta):
        conv = self.snn.sites[site]
        self.stats.products[(site, "var")] += x.size
        self.stats.products[(site, "mul")] += x.size
        return spiking_layernorm(x, self.snn.ops, conv.layernorm, gamma, beta, LN_EPS, self._ctx(site))

    def matmul(self, site, a, b):
        conv = self.snn.sites[site]
        self.stats.products[(site, "mul")] += a.size * b.shape[-1]
        return spike_matmul(a, b, *conv.encoders, conv.D, self._ctx(site))

    def softmax(self, site, x):
        conv = self.snn.sites[site]
        self.stats.products[(site, "mul")] += x.size
        return spiking_softmax(x, self.snn.ops, conv.softmax, ctx=self._ctx(site))

    def activation(self, site, x, kind):
        return spiking_activation(self.snn.sites[site].approximator, x, self._ctx(site))


def forward_spiking(snn: SpikingTransformer, x, stats: Optional[RunStats] = None, return_layers=False):
    """Spiking forward; statistics accumulate into ``stats`` (returned)."""
    stats = stats if stats is not None else RunStats()
    out = snn.reference.forward(x, SpikingBackend(snn, stats), return_layers)
    return out, stats


# --------------------------------------------------------------------------
# fidelity


@dataclass(frozen=True)
class Fidelity:
    mse: float
    linf: float
    cosine: float


def compare(float_out, spiking_out) -> Fidelity:
    a = np.asarray(float_out, dtype=np.float64)
    b = np.asarray(spiking_out, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgument(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 and nb == 0:
        cos = 1.0
    elif na == 0 or nb == 0:
        cos = 0.0
    else:
        cos = float(np.clip(np.vdot(a, b) / (na * nb), -1.0, 1.0))
    linf = float(np.max(np.abs(d))) if d.size else 0.0
    return Fidelity(float(np.mean(d * d)) if d.size else 0.0, linf, cos)
