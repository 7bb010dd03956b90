"""``mbespike`` command line: fit, calibrate, convert, run, report, repro.

Exit codes: 0 success, 1 a reproduction table has failing rows, 2 usage
error, 3 fit failure, 4 a model site is not covered, 5 store version
mismatch.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConversionError, FitFailure, InvalidArgument, StoreVersionError
from .fitting import FitConfig, TargetFn, TargetId, fit_mbe, fit_mbe_no_decay
from .metrics import BoundInputs, EnergyConstants
from .report import RUN_FIELDS, bounds_table, bundled_rates_path, energy_table, load_rates, run_report, write_csv
from .store import (
    ApproximatorStore,
    StoreDocument,
    approximator_to_payload,
    created_with,
    load_document,
    model_from_payload,
    model_to_payload,
    profile_from_payload,
    profile_to_payload,
    save_document,
    snn_from_payload,
    snn_to_payload,
)
from .transformer import OP_FIT_CONFIG, RefTransformerConfig, build_reference, calibrate, convert

EXIT_OK, EXIT_FAILED_ROWS, EXIT_USAGE, EXIT_FIT, EXIT_SITE, EXIT_VERSION = 0, 1, 2, 3, 4, 5


class _Usage(Exception):
    pass


def _interval(text):
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"interval must look like a,b (got {text!r})") from None
    if not a < b:
        raise argparse.ArgumentTypeError(f"interval needs a < b (got {text!r})")
    return a, b


def _siblings(out):
    out = Path(out)
    return out, out.with_suffix(".csv"), out.with_suffix(".png")


def _load_data(path):
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            return np.asarray(z[z.files[0]], dtype=np.float64)
    return np.asarray(np.load(path), dtype=np.float64)


# --------------------------------------------------------------------------
# commands


def cmd_fit(args):
    if args.target == TargetId.IDENTITY.value:
        raise _Usage("identity mappings use fixed binary parameters and are not fitted")
    target = TargetFn(args.target, args.interval)
    cfg = FitConfig(seed=args.seed, epochs=args.epochs, n_starts=args.starts)
    fit = fit_mbe_no_decay if args.no_decay else fit_mbe
    fa = fit(target, args.n, args.t, cfg)
    doc = StoreDocument("approximator", approximator_to_payload(fa), created_with(seed=args.seed, no_decay=args.no_decay))
    save_document(doc, args.out)
    if args.plot:
        from .plotting import plot_fit

        plot_fit(fa, args.plot)
    print(f"MSE {fa.mse:.6e}")
    return EXIT_OK


def cmd_init_model(args):
    cfg = RefTransformerConfig(args.d_model, args.n_heads, args.d_ff, args.n_layers, args.seq_len, args.seed, args.activation)
    model = build_reference(cfg)
    save_document(StoreDocument("model", {"type": "float", **model_to_payload(model)}, created_with(seed=args.seed)), args.out)
    print(f"wrote {args.out}: {len(model.sites())} convertible sites")
    return EXIT_OK


def cmd_sample_data(args):
    doc = load_document(args.model, "model")
    cfg = RefTransformerConfig(**doc.payload["config"])
    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal((args.n, cfg.seq_len, cfg.d_model))
    with open(args.out, "wb") as f:
        np.save(f, x)
    print(f"wrote {args.out}: {x.shape}")
    return EXIT_OK


def cmd_calibrate(args):
    model = model_from_payload(load_document(args.model, "model").payload)
    data = _load_data(args.data)
    batches = np.array_split(data, max(1, len(data) // args.batch)) if data.ndim == 3 else [data]
    profile = calibrate(model, batches)
    doc = StoreDocument("calibration", profile_to_payload(profile), created_with(samples=int(len(data))))
    save_document(doc, args.out)
    print(f"wrote {args.out}: {len(profile.sites)} sites")
    return EXIT_OK


def cmd_convert(args):
    model = model_from_payload(load_document(args.model, "model").payload)
    profile = profile_from_payload(load_document(args.profile, "calibration").payload)
    store = ApproximatorStore(args.store)
    act = FitConfig(n_starts=OP_FIT_CONFIG.n_starts, seed=args.seed)
    snn = convert(model, profile, store, T=args.t, N_act=args.n_act, N_other=args.n_other, act_config=act)
    cw = created_with(seed=args.seed, T=args.t, N_act=args.n_act, N_other=args.n_other)
    save_document(StoreDocument("model", snn_to_payload(snn), cw), args.out)
    print(f"wrote {args.out}: {len(snn.sites)} spiking sites, T={args.t}")
    return EXIT_OK


def _render_run(payload, out):
    from .plotting import plot_energy, plot_firing_rates

    json_path, csv_path, png_path = _siblings(out)
    write_csv(payload["rows"], csv_path, RUN_FIELDS)
    plot_firing_rates(payload, png_path)
    plot_energy(payload, png_path.with_name(png_path.stem + "_energy.png"))


def cmd_run(args):
    snn = snn_from_payload(load_document(args.snn, "model").payload)
    x = _load_data(args.input)
    payload = run_report(snn, x)
    save_document(StoreDocument("report", payload, created_with(input=Path(args.input).name)), args.report)
    _render_run(payload, args.report)
    fid = payload["fidelity"]
    print(f"cosine {fid['cosine']:.6f}  mse {fid['mse']:.6e}  linf {fid['linf']:.6e}")
    print(f"energy ratio {payload['totals']['energy_ratio']:.4f}")
    return EXIT_OK


def cmd_report(args):
    from .plotting import plot_bounds, plot_energy

    consts = EnergyConstants(args.e_mac, args.e_ac)
    out, csv_path, png_path = _siblings(args.out)
    if args.kind == "energy":
        rates = load_rates(args.rates or bundled_rates_path())
        payload = energy_table(rates, consts)
        write_csv(payload["rows"], csv_path)
        plot_energy(payload, png_path)
        for r in payload["rows"]:
            print(f"{r['op']:<28s} {r['energy_pj']:10.4f} pJ")
    elif args.kind == "bounds":
        inputs = BoundInputs(args.t, args.n, args.m, args.lf, args.ymax, args.dl1, args.wl1, args.alpha, args.tau_max, args.dt)
        payload = bounds_table(inputs)
        write_csv(payload["rows"], csv_path)
        plot_bounds(payload, png_path)
        print("FS  (empirical, parametric, quantization):", tuple(payload["fs"].values()))
        print("MBE (empirical, parametric, quantization):", tuple(payload["mbe"].values()))
    else:
        if not args.run:
            raise _Usage("report --kind fidelity needs --run REPORT (written by `run`)")
        payload = load_document(args.run, "report").payload
        if payload.get("type") != "run":
            raise _Usage(f"{args.run} is not a run report")
        _render_run(payload, args.out)
        print(f"cosine {payload['fidelity']['cosine']:.6f}  mse {payload['fidelity']['mse']:.6e}")
    save_document(StoreDocument("report", payload, created_with(kind=args.kind)), out)
    return EXIT_OK


def cmd_repro(args):
    from .plotting import plot_repro
    from .repro import TABLES

    seeds = tuple(range(args.seeds)) if args.seeds else None
    kw = {"seeds": seeds} if seeds else {}
    if args.table != "edi":
        kw["cache"] = ApproximatorStore(args.store)
    payload = TABLES[args.table](**kw)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = out_dir / f"repro_{args.table}.json"
    save_document(StoreDocument("report", payload, created_with(table=args.table)), base)
    rows = [{k: v for k, v in r.items() if k != "per_seed"} for r in payload["rows"]]
    write_csv(rows, base.with_suffix(".csv"))
    plot_repro(payload, base.with_suffix(".png"))
    for r in rows:
        m = "" if r["measured"] is None else f"{r['measured']:.4g}"
        p = "" if r["reference"] is None else f"{r['reference']:.4g}"
        print(f"{'PASS' if r['pass'] else 'FAIL'}  {r['item']:<36s} {m:>11s} {p:>11s}  {r['tolerance']}")
    return EXIT_OK if payload["pass"] else EXIT_FAILED_ROWS


# --------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(prog="mbespike", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit an MBE approximator")
    f.add_argument("--target", required=True, choices=[t.value for t in TargetId])
    f.add_argument("--interval", required=True, type=_interval)
    f.add_argument("--n", type=int, default=4)
    f.add_argument("--t", type=int, default=16)
    f.add_argument("--no-decay", action="store_true")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--epochs", type=int, default=FitConfig.epochs)
    f.add_argument("--starts", type=int, default=1, help="structure-search starts")
    f.add_argument("--out", required=True)
    f.add_argument("--plot", help="PNG of target, fit and error")
    f.set_defaults(func=cmd_fit)

    m = sub.add_parser("init-model", help="write a random reference Transformer")
    d = RefTransformerConfig()
    m.add_argument("--d-model", type=int, default=d.d_model)
    m.add_argument("--n-heads", type=int, default=d.n_heads)
    m.add_argument("--d-ff", type=int, default=d.d_ff)
    m.add_argument("--n-layers", type=int, default=d.n_layers)
    m.add_argument("--seq-len", type=int, default=d.seq_len)
    m.add_argument("--activation", default=d.activation, choices=["gelu", "tanh"])
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_init_model)

    s = sub.add_parser("sample-data", help="standard-normal inputs shaped for a model (.npy)")
    s.add_argument("--model", required=True)
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample_data)

    c = sub.add_parser("calibrate", help="record per-site operand ranges")
    c.add_argument("--model", required=True)
    c.add_argument("--data", required=True, help=".npy/.npz array (batch, seq, d_model)")
    c.add_argument("--batch", type=int, default=16)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_calibrate)

    v = sub.add_parser("convert", help="build the spiking model")
    v.add_argument("--model", required=True)
    v.add_argument("--profile", required=True)
    v.add_argument("--store", help="approximator store directory (default $MBE_STORE_DIR)")
    v.add_argument("--t", type=int, default=16)
    v.add_argument("--n-act", type=int, default=4)
    v.add_argument("--n-other", type=int, default=8)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_convert)

    r = sub.add_parser("run", help="spiking forward with fidelity, firing and energy report")
    r.add_argument("--snn", required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--report", required=True)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("report", help="energy, bounds or fidelity report")
    e.add_argument("--kind", required=True, choices=["energy", "bounds", "fidelity"])
    e.add_argument("--out", required=True)
    e.add_argument("--rates", help="firing-rate CSV (default: bundled reference rates)")
    e.add_argument("--run", help="run report JSON (fidelity)")
    e.add_argument("--e-mac", type=float, default=EnergyConstants.e_mac)
    e.add_argument("--e-ac", type=float, default=EnergyConstants.e_ac)
    b = BoundInputs()
    e.add_argument("--t", type=int, default=b.T)
    e.add_argument("--n", type=int, default=4)
    e.add_argument("--m", type=float, default=b.M)
    e.add_argument("--lf", type=float, default=1.0)
    e.add_argument("--ymax", type=float, default=10.0)
    e.add_argument("--dl1", type=float, default=20.0)
    e.add_argument("--wl1", type=float, default=1.0)
    e.add_argument("--alpha", type=float, default=10.0)
    e.add_argument("--tau-max", type=float, default=8.0)
    e.add_argument("--dt", type=float, default=1.0)
    e.set_defaults(func=cmd_report)

    q = sub.add_parser("repro", help="reproduction tables with pass/fail per tolerance")
    q.add_argument("--table", required=True, choices=["g3", "e2", "edi", "timesteps"])
    q.add_argument("--seeds", type=int, help="number of seeds (default per table)")
    q.add_argument("--store", help="approximator store directory (default $MBE_STORE_DIR)")
    q.add_argument("--out", default="repro")
    q.set_defaults(func=cmd_repro)
    return p


def _glue_intervals(argv):
    # "--interval -120,10" would read as a flag; glue it into one token
    out = []
    it = iter(argv)
    for tok in it:
        if tok == "--interval":
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None):
    parser = build_parser()
    argv = _glue_intervals(sys.argv[1:] if argv is None else list(argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except _Usage as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except StoreVersionError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VERSION
    except ConversionError as e:
        print(f"error: uncovered site {e.site}: {e}", file=sys.stderr)
        return EXIT_SITE
    except FitFailure as e:
        print(f"error: fit failed: {e}", file=sys.stderr)
        return EXIT_FIT
    except (InvalidArgument, FileNotFoundError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
