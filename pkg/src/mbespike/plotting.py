"""Report figures, rendered straight to files with the Agg canvas.

Figures are built with :class:`matplotlib.figure.Figure` rather than
``pyplot`` so nothing touches global state; PNG metadata is stripped so
reruns write identical bytes.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

__all__ = [
    "plot_fit",
    "plot_firing_rates",
    "plot_energy",
    "plot_bounds",
    "plot_repro",
]

_RC = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 120,
}


def _new(w=6.0, h=3.6, ncols=1):
    import matplotlib as mpl

    with mpl.rc_context(_RC):
        fig = Figure(figsize=(w, h), layout="constrained")
        axes = fig.subplots(1, ncols)
    return fig, axes


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    return path


def plot_fit(fa, path, n=2000):
    """Target, approximation and absolute error over the fitted interval."""
    a, b = fa.target.interval
    x = np.linspace(a, b, n)
    y = fa.target(x)
    yh = fa(x)
    fig, (ax, ax_err) = _new(8.0, 3.2, ncols=2)
    ax.plot(x, y, color="0.2", lw=1.5, label="target")
    ax.plot(x, yh, color="tab:orange", lw=1.0, ls="--", label="MBE")
    ax.set_xlabel("x")
    ax.set_title(f"{fa.target.id.value} on [{a:g}, {b:g}]")
    ax.legend(frameon=False)
    ax_err.semilogy(x, np.abs(yh - y) + 1e-16, color="tab:red", lw=0.8)
    ax_err.set_xlabel("x")
    ax_err.set_title(f"|error|, MSE {fa.mse:.2e}")
    return _save(fig, path)


def plot_firing_rates(report, path):
    """Firing rate per site and component of a run report."""
    rows = report["rows"]
    labels = [f"{r['site']}:{r['component']}" for r in rows]
    rates = [r["firing_rate"] for r in rows]
    fig, ax = _new(7.0, 0.22 * len(rows) + 1.2)
    y = np.arange(len(rows))
    ax.barh(y, rates, color="tab:blue", height=0.7)
    ax.set_yticks(y, labels, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlim(0, 1)
    ax.set_xlabel("firing rate")
    fid = report["fidelity"]
    ax.set_title(f"T={report['T']}  cosine {fid['cosine']:.5f}  MSE {fid['mse']:.2e}")
    return _save(fig, path)


def plot_energy(report, path):
    """Energy per row (pJ) of a run or energy report."""
    rows = [r for r in report["rows"] if r["energy_pj"] > 0]
    if "site" in (rows[0] if rows else {}):
        per = defaultdict(float)
        for r in rows:
            per[r["site"]] += r["energy_pj"]
        labels, vals = list(per), list(per.values())
    else:
        labels, vals = [r["op"] for r in rows], [r["energy_pj"] for r in rows]
    fig, ax = _new(6.0, 0.3 * max(len(labels), 1) + 1.2)
    y = np.arange(len(labels))
    ax.barh(y, vals, color="tab:green", height=0.7)
    ax.set_yticks(y, labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("energy [pJ]")
    return _save(fig, path)


def plot_bounds(report, path):
    """Parametric terms against T for each N (log-log)."""
    rows = report["rows"]
    fig, (ax_fs, ax_mbe) = _new(8.0, 3.2, ncols=2)
    Ts = sorted({r["T"] for r in rows})
    fs = [next(r["fs_parametric"] for r in rows if r["T"] == T) for T in Ts]
    ax_fs.loglog(Ts, fs, "o-", color="0.3", ms=3, label="FS parametric")
    ax_fs.loglog(Ts, [next(r["fs_quantization"] for r in rows if r["T"] == T) for T in Ts], "s--", ms=3,
                 color="tab:red", label="FS quantization")
    ax_fs.set_xlabel("T")
    ax_fs.legend(frameon=False)
    for N in sorted({r["N"] for r in rows}):
        sub = sorted((r for r in rows if r["N"] == N), key=lambda r: r["T"])
        ax_mbe.loglog([r["T"] for r in sub], [r["mbe_parametric"] for r in sub], "o-", ms=3, label=f"N={N}")
    ax_mbe.set_xlabel("T")
    ax_mbe.set_title("MBE parametric term")
    ax_mbe.legend(frameon=False)
    return _save(fig, path)


def plot_repro(report, path):
    """Measured against reference values of a reproduction table."""
    rows = [r for r in report["rows"] if r.get("measured") is not None]
    fig, ax = _new(7.0, 0.3 * max(len(rows), 1) + 1.4)
    y = np.arange(len(rows))
    meas = np.array([r["measured"] for r in rows], dtype=float)
    ref = np.array([np.nan if r.get("reference") is None else r["reference"] for r in rows], dtype=float)
    colors = ["tab:green" if r["pass"] else "tab:red" for r in rows]
    ax.scatter(meas, y, c=colors, s=18, label="measured", zorder=3)
    ax.scatter(ref, y, marker="x", color="0.3", s=18, label="reference", zorder=3)
    ax.set_yticks(y, [r["item"] for r in rows], fontsize=7)
    ax.invert_yaxis()
    if np.all(meas > 0):
        ax.set_xscale("log")
    ax.set_title(f"repro {report['table']}")
    ax.legend(frameon=False, fontsize=7)
    return _save(fig, path)
