"""JSON store documents for approximators, calibration profiles and models.

Every document is ``{"format_version", "kind", "payload", "created_with"}``
written with sorted keys, so saving a loaded document reproduces the file
byte for byte.  Floats go through ``repr`` and survive the round trip
exactly.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .arith import IdentityEncoder, intensity_matrix
from .errors import InvalidArgument, StoreVersionError
from .fitting import ApproximatorCache, FitConfig, FittedApproximator, TargetFn, _cache_key
from .neuron import FreeScheduleNeuron, MBEBasis, MBENeuron
from .ops import LayerNormEncoders, SoftmaxEncoders, SpikingOpSet
from .transformer import (
    CalibrationProfile,
    FloatTransformer,
    RefTransformerConfig,
    RoleStats,
    SiteConversion,
    SpikingTransformer,
)

__all__ = [
    "FORMAT_VERSION",
    "KINDS",
    "STORE_ENV",
    "StoreDocument",
    "ApproximatorStore",
    "dumps",
    "loads",
    "save_document",
    "load_document",
    "approximator_to_payload",
    "approximator_from_payload",
    "profile_to_payload",
    "profile_from_payload",
    "model_to_payload",
    "model_from_payload",
    "snn_to_payload",
    "snn_from_payload",
]

FORMAT_VERSION = 1
KINDS = ("approximator", "calibration", "model", "report")
STORE_ENV = "MBE_STORE_DIR"


@dataclass
class StoreDocument:
    kind: str
    payload: dict
    created_with: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def to_dict(self):
        return {
            "format_version": self.format_version,
            "kind": self.kind,
            "payload": self.payload,
            "created_with": self.created_with,
        }


def _plain(obj):
    """Convert numpy scalars/arrays and tuples into JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dumps(doc: StoreDocument) -> str:
    if doc.kind not in KINDS:
        raise InvalidArgument(f"unknown document kind {doc.kind!r}")
    return json.dumps(_plain(doc.to_dict()), sort_keys=True, indent=2, allow_nan=False) + "\n"


def loads(text: str, kind: Optional[str] = None) -> StoreDocument:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise InvalidArgument(f"not a store document: {e}") from None
    if not isinstance(raw, dict) or "format_version" not in raw:
        raise InvalidArgument("not a store document: missing format_version")
    version = raw["format_version"]
    if version != FORMAT_VERSION:
        raise StoreVersionError(f"unsupported format_version {version} (this build reads {FORMAT_VERSION})")
    if raw.get("kind") not in KINDS:
        raise InvalidArgument(f"unknown document kind {raw.get('kind')!r}")
    if kind is not None and raw["kind"] != kind:
        raise InvalidArgument(f"expected a {kind} document, got {raw['kind']}")
    return StoreDocument(raw["kind"], raw["payload"], raw.get("created_with", {}), version)


def save_document(doc: StoreDocument, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(doc))
    return path


def load_document(path, kind: Optional[str] = None) -> StoreDocument:
    return loads(Path(path).read_text(), kind)


# --------------------------------------------------------------------------
# payload converters


def _target_payload(t: TargetFn):
    return {"id": t.id.value, "interval": list(t.interval)}


def _neuron_payload(n):
    if isinstance(n, MBENeuron):
        return {
            "type": "mbe",
            "alpha": n.alpha,
            "T": n.T,
            "w": n.w,
            "bases": [asdict(b) for b in n.bases],
        }
    if isinstance(n, FreeScheduleNeuron):
        return {
            "type": "free",
            "d": n.d, "r": n.r, "vth": n.vth, "w": n.w,
            "input_offsets": n.input_offsets, "input_gains": n.input_gains,
        }
    raise InvalidArgument(f"cannot serialise neuron of type {type(n).__name__}")


def _neuron_from(p):
    if p["type"] == "mbe":
        return MBENeuron(p["alpha"], tuple(MBEBasis(**b) for b in p["bases"]), np.array(p["w"]), p["T"])
    if p["type"] == "free":
        return FreeScheduleNeuron(
            np.array(p["d"]), np.array(p["r"]), np.array(p["vth"]), np.array(p["w"]),
            np.array(p["input_offsets"]), np.array(p["input_gains"]),
        )
    raise InvalidArgument(f"unknown neuron type {p['type']!r}")


def approximator_to_payload(fa: FittedApproximator) -> dict:
    return {
        "target": _target_payload(fa.target),
        "neuron": _neuron_payload(fa.neuron),
        "mse": fa.mse,
        "config": asdict(fa.config),
        "format_version": fa.format_version,
    }


def approximator_from_payload(p: dict) -> FittedApproximator:
    t = TargetFn(p["target"]["id"], tuple(p["target"]["interval"]))
    return FittedApproximator(t, _neuron_from(p["neuron"]), float(p["mse"]), FitConfig(**p["config"]), p["format_version"])


def profile_to_payload(profile: CalibrationProfile) -> dict:
    return {
        "sites": {
            site: {"kind": rec["kind"], "roles": {r: asdict(s) for r, s in rec["roles"].items()}}
            for site, rec in profile.sites.items()
        }
    }


def profile_from_payload(p: dict) -> CalibrationProfile:
    sites = {}
    for site, rec in p["sites"].items():
        roles = {
            r: RoleStats(s["min"], s["max"], s["count"], tuple(s["edges"]), tuple(s["counts"]))
            for r, s in rec["roles"].items()
        }
        sites[site] = {"kind": rec["kind"], "roles": roles}
    return CalibrationProfile(sites)


def model_to_payload(model: FloatTransformer) -> dict:
    return {"config": asdict(model.config), "weights": {k: v for k, v in model.weights.items()}}


def model_from_payload(p: dict) -> FloatTransformer:
    cfg = RefTransformerConfig(**p["config"])
    return FloatTransformer(cfg, {k: np.array(v, dtype=np.float64) for k, v in p["weights"].items()})


def _enc(e: IdentityEncoder):
    return [e.lo, e.hi, e.T]


def _enc_from(v):
    return IdentityEncoder(*v)


def snn_to_payload(snn: SpikingTransformer) -> dict:
    sites = {}
    for site, c in snn.sites.items():
        rec = {"kind": c.kind}
        if c.kind == "matmul":
            rec["encoders"] = [_enc(e) for e in c.encoders]
        elif c.kind == "softmax":
            rec["softmax"] = {"exp": _enc(c.softmax.exp), "recip": _enc(c.softmax.recip), "min_input": c.softmax.min_input}
        elif c.kind == "layernorm":
            rec["layernorm"] = {"centered": _enc(c.layernorm.centered), "invstd": _enc(c.layernorm.invstd)}
        else:
            rec["approximator"] = approximator_to_payload(c.approximator)
        sites[site] = rec
    ops = {name: approximator_to_payload(getattr(snn.ops, name))
           for name in ("exp2frac", "inv", "invsqrt", "gelu", "tanh") if getattr(snn.ops, name) is not None}
    return {
        "type": "spiking",
        "reference": model_to_payload(snn.reference),
        "T": snn.T,
        "N_act": snn.N_act,
        "N_other": snn.N_other,
        "ops": ops,
        "sites": sites,
    }


def snn_from_payload(p: dict) -> SpikingTransformer:
    if p.get("type") != "spiking":
        raise InvalidArgument("model document does not hold a converted (spiking) model")
    sites = {}
    for site, rec in p["sites"].items():
        kind = rec["kind"]
        if kind == "matmul":
            ea, eb = (_enc_from(v) for v in rec["encoders"])
            sites[site] = SiteConversion(kind, (ea, eb), intensity_matrix(ea, eb))
        elif kind == "softmax":
            s = rec["softmax"]
            sites[site] = SiteConversion(kind, softmax=SoftmaxEncoders(_enc_from(s["exp"]), _enc_from(s["recip"]), s["min_input"]))
        elif kind == "layernorm":
            s = rec["layernorm"]
            sites[site] = SiteConversion(kind, layernorm=LayerNormEncoders(_enc_from(s["centered"]), _enc_from(s["invstd"])))
        else:
            sites[site] = SiteConversion(kind, approximator=approximator_from_payload(rec["approximator"]))
    ops = SpikingOpSet(**{k: approximator_from_payload(v) for k, v in p["ops"].items()})
    return SpikingTransformer(model_from_payload(p["reference"]), sites, ops, p["T"], p["N_act"], p["N_other"])


def created_with(**kw) -> dict:
    return {"package_version": __version__, **kw}


# --------------------------------------------------------------------------
# approximator store


class ApproximatorStore(ApproximatorCache):
    """:class:`ApproximatorCache` backed by one JSON document per fit.

    ``directory`` defaults to ``$MBE_STORE_DIR``; with neither, the store is
    memory-only.
    """

    def __init__(self, directory=None):
        super().__init__()
        directory = directory if directory is not None else os.environ.get(STORE_ENV)
        self.directory = Path(directory) if directory else None

    def path_for(self, target, N, T, cfg, no_decay=False) -> Path:
        key = repr(_cache_key(target, N, T, cfg, no_decay)).encode()
        digest = hashlib.sha256(key).hexdigest()[:16]
        tag = "nodecay-" if no_decay else ""
        return self.directory / f"{target.id.value}-{tag}N{N}-T{T}-{digest}.json"

    def _load_or_fit(self, target, N, T, cfg, no_decay):
        if self.directory is None:
            return super()._load_or_fit(target, N, T, cfg, no_decay)
        path = self.path_for(target, N, T, cfg, no_decay)
        if path.exists():
            return approximator_from_payload(load_document(path, "approximator").payload)
        fa = super()._load_or_fit(target, N, T, cfg, no_decay)
        doc = StoreDocument("approximator", approximator_to_payload(fa),
                            created_with(seed=cfg.seed, no_decay=no_decay))
        save_document(doc, path)
        return fa
