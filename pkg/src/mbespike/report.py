"""Report builders: fidelity/firing/energy of a spiking run, energy tables
from firing-rate files, and bound-term tables.

Every builder returns a plain dict (the ``report`` store payload) whose
``rows`` list is what goes to CSV.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import asdict
from importlib import resources

import numpy as np

from .errors import InvalidArgument
from .metrics import (
    GELU_FLOPS,
    BoundInputs,
    EnergyConstants,
    bound_fs,
    bound_mbe,
    energy_fp_mult,
    energy_mbe,
    energy_ratio,
    gelu_energy_comparison,
)
from .transformer import SpikingTransformer, compare, forward_float, forward_spiking

__all__ = [
    "FLOAT_COST",
    "RUN_FIELDS",
    "run_report",
    "energy_table",
    "load_rates",
    "bundled_rates_path",
    "bounds_table",
    "write_csv",
    "csv_text",
]

# float operation counts (MAC-equivalents) of the replaced ops, per unit:
# matmul per scalar product, the others per element
FLOAT_COST = {
    "matmul": 1,
    "activation": GELU_FLOPS,
    "softmax": 24,  # max, shift, exp (~20), sum, divide
    "layernorm": 10,  # mean, centre, square, sum, scale; rsqrt amortised per row
}

_MBE_COMPONENTS = ("exp2frac", "inv", "invsqrt", "gelu", "tanh")
RUN_FIELDS = ("site", "kind", "component", "elements", "spikes", "firing_rate", "products", "sops", "energy_pj")


def _split(component):
    """``'mul.a'`` -> ``('mul', 'a')``; MBE components -> ``(name, None)``."""
    head, _, side = component.rpartition(".")
    if side in ("a", "b") and head:
        return head, side
    return component, None


def run_report(snn: SpikingTransformer, x, consts: EnergyConstants = EnergyConstants(), seed=None) -> dict:
    """Spiking forward on ``x`` compared with the float forward.

    Rows are one per ``(site, component)``.  MBE components cost one
    accumulate per spike; a spike product costs ``T^2 eta_a eta_b`` per
    scalar product (both operand spike trains are recorded).
    """
    x = np.asarray(x, dtype=np.float64)
    ref, ref_layers = forward_float(snn.reference, x, return_layers=True)
    (out, layers), stats = forward_spiking(snn, x, return_layers=True)
    fid = compare(ref, out)
    kinds = dict(snn.reference.sites())
    T = snn.T

    fs = stats.recorder.stats
    rows = []
    pairs = defaultdict(dict)
    for (site, comp), s in sorted(fs.items()):
        head, side = _split(comp)
        eta = s.spikes / s.slots if s.slots else 0.0
        row = {
            "site": site,
            "kind": kinds.get(site, ""),
            "component": comp,
            "elements": s.elements,
            "spikes": s.spikes,
            "firing_rate": eta,
            "products": 0,
            "sops": 0.0,
            "energy_pj": 0.0,
        }
        if side is None:
            row["sops"] = float(s.spikes)
            row["energy_pj"] = s.spikes * consts.e_ac
        else:
            pairs[(site, head)][side] = (row, eta)
        rows.append(row)
    for (site, head), sides in pairs.items():
        if set(sides) != {"a", "b"}:
            continue
        MO = stats.products.get((site, head), 0)
        (ra, eta_a), (rb, eta_b) = sides["a"], sides["b"]
        e = energy_fp_mult(T, eta_a, eta_b, MO, consts)
        # the product cost is booked on the first operand row
        ra["products"] = MO
        ra["sops"] = T * T * eta_a * eta_b * MO
        ra["energy_pj"] = e

    flops = 0.0
    for site, kind in snn.reference.sites():
        if kind == "matmul":
            flops += FLOAT_COST["matmul"] * stats.products.get((site, "mul"), 0)
        else:
            n = max((s.elements for (st, c), s in fs.items() if st == site and c in _MBE_COMPONENTS + ("mul.a",)), default=0)
            flops += FLOAT_COST[kind] * n
    sops = sum(r["sops"] for r in rows)
    spikes = sum(r["spikes"] for r in rows)
    spiking_pj = sum(r["energy_pj"] for r in rows)
    return {
        "type": "run",
        "seed": seed,
        "input_shape": list(x.shape),
        "T": T,
        "N_act": snn.N_act,
        "N_other": snn.N_other,
        "fidelity": asdict(fid),
        "layers": [asdict(compare(a, b)) for a, b in zip(ref_layers, layers)],
        "saturation": dict(sorted(stats.saturation.snapshot().items())),
        "constants": asdict(consts),
        "rows": rows,
        "totals": {
            "spikes": spikes,
            "sops": sops,
            "spiking_pj": spiking_pj,
            "float_flops": flops,
            "float_pj": flops * consts.e_mac,
            "energy_ratio": energy_ratio(sops, flops, consts) if flops > 0 else None,
        },
    }


# --------------------------------------------------------------------------
# energy tables from firing-rate files

_RATE_FIELDS = ("op", "kind", "T", "eta", "eta2", "N", "C", "N_h", "MO")


def bundled_rates_path():
    """Firing rates of the reference energy table (T=16), as CSV."""
    return resources.files("mbespike") / "data" / "g4_rates.csv"


def load_rates(path) -> list:
    """Rows ``op, kind (mbe|mult), T, eta, eta2, N, C, N_h, MO``; rates in [0, 1]."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = {"op", "kind", "eta"} - set(reader.fieldnames or ())
        if missing:
            raise InvalidArgument(f"rates file lacks columns {sorted(missing)}")
        rows = []
        for raw in reader:
            try:
                rec = {
                    "op": raw["op"],
                    "kind": raw["kind"],
                    "T": int(raw.get("T") or 16),
                    "eta": float(raw["eta"]),
                    "eta2": float(raw.get("eta2") or raw["eta"]),
                    "N": int(raw.get("N") or 1),
                    "C": int(raw.get("C") or 1),
                    "N_h": int(raw.get("N_h") or 1),
                    "MO": int(raw.get("MO") or 1),
                }
            except ValueError as e:
                raise InvalidArgument(f"bad rates row {raw}: {e}") from None
            if rec["kind"] not in ("mbe", "mult"):
                raise InvalidArgument(f"rates kind must be mbe or mult, got {rec['kind']!r}")
            rows.append(rec)
    return rows


def energy_table(rates, consts: EnergyConstants = EnergyConstants()) -> dict:
    rows = []
    for r in rates:
        if r["kind"] == "mbe":
            e = energy_mbe(r["T"], r["eta"], r["N"], r["C"], r["N_h"], consts)
            formula = "T*eta*N*C*N_h*e_ac"
        else:
            e = energy_fp_mult(r["T"], r["eta"], r["eta2"], r["MO"], consts)
            formula = "T^2*eta1*eta2*MO*e_ac"
        rows.append({**{k: r[k] for k in _RATE_FIELDS}, "energy_pj": e, "formula": formula})
    gelu = [r for r in rates if r["op"].lower() == "gelu" and r["kind"] == "mbe"]
    extra = gelu_energy_comparison(gelu[0]["T"], gelu[0]["eta"], gelu[0]["N"], consts) if gelu else None
    return {"type": "energy", "constants": asdict(consts), "rows": rows, "gelu_comparison": extra}


# --------------------------------------------------------------------------
# bounds


def bounds_table(inputs: BoundInputs, T_values=(4, 8, 10, 12, 16, 32), N_values=(1, 2, 4, 8)) -> dict:
    """FS and MBE bound terms (up to constants) at ``inputs`` and over a T/N grid."""
    rows = []
    for T in T_values:
        for N in N_values:
            b = BoundInputs(**{**asdict(inputs), "T": T, "N": N})
            fs, mbe = bound_fs(b), bound_mbe(b)
            rows.append({
                "T": T, "N": N, "M": b.M,
                "fs_empirical": fs.empirical, "fs_parametric": fs.parametric, "fs_quantization": fs.quantization,
                "mbe_empirical": mbe.empirical, "mbe_parametric": mbe.parametric, "mbe_quantization": mbe.quantization,
            })
    return {
        "type": "bounds",
        "note": "terms up to constants, natural logarithms",
        "inputs": asdict(inputs),
        "fs": asdict(bound_fs(inputs)),
        "mbe": asdict(bound_mbe(inputs)),
        "rows": rows,
    }


# --------------------------------------------------------------------------
# CSV


def csv_text(rows, fields=None) -> str:
    """CSV with columns ``fields`` (default: the keys of the first row)."""
    if not rows:
        return ""
    buf = io.StringIO()
    fields = list(fields or rows[0].keys())
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else repr(r[k]) if isinstance(r.get(k), float) else r[k]) for k in fields})
    return buf.getvalue()


def write_csv(rows, path, fields=None):
    with open(path, "w", newline="") as f:
        f.write(csv_text(rows, fields))
    return path
