"""Figures from the CSV tables of a report directory.

This module imports nothing from the package: its source is copied verbatim
into ``plots.script`` so a report directory can be re-plotted anywhere with
numpy and matplotlib (``python3 plots.script [REPORT_DIR]``).
"""

from __future__ import annotations

import csv
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np


def read_table(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        rec = {}
        for k, v in row.items():
            if v == "":
                rec[k] = None
                continue
            try:
                rec[k] = float(v)
            except ValueError:
                rec[k] = v
        out.append(rec)
    return out


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_errors(rows, dest: Path):
    """log-log of the max-in-time sup error against eps, one line per (lambda, resolution)."""
    if not rows:
        return None
    plt = _pyplot()
    series = defaultdict(dict)
    for r in rows:
        key = (r["lambda"], int(r["resolution"]))
        series[key][r["eps"]] = max(series[key].get(r["eps"], 0.0), r["sup_error"])
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for (lam, res), pts in sorted(series.items(), key=lambda kv: (kv[0][0] or 0.0, kv[0][1])):
        eps = np.array(sorted(pts))
        err = np.array([pts[e] for e in eps])
        label = f"R={res}" if lam is None else f"lambda={lam:g}, R={res}"
        ax.loglog(eps, np.maximum(err, 1e-300), "o-", label=label)
    ax.set_xlabel("eps")
    ax.set_ylabel("max sup error")
    ax.legend(fontsize=7)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(dest, dpi=110)
    plt.close(fig)
    return dest


def plot_energy(rows, dest: Path):
    """Energy totals normalised by their initial value, finest resolution per eps."""
    if not rows:
        return None
    plt = _pyplot()
    finest = defaultdict(float)
    for r in rows:
        finest[r["eps"]] = max(finest[r["eps"]], r["resolution"])
    qs = sorted({r["q"] for r in rows})
    fig, axes = plt.subplots(1, len(qs), figsize=(4 * len(qs), 3.5), squeeze=False)
    for ax, q in zip(axes[0], qs):
        for eps in sorted(finest, reverse=True):
            pts = [(r["time"], r["total"]) for r in rows
                   if r["q"] == q and r["eps"] == eps and r["resolution"] == finest[eps]]
            pts.sort()
            t = np.array([p[0] for p in pts])
            e = np.array([p[1] for p in pts])
            if e.size and e[0] > 0:
                ax.plot(t, e / e[0], label=f"eps={eps:g}")
        ax.set_title(f"q={q:g}")
        ax.set_xlabel("t")
        ax.grid(True, alpha=0.3)
    axes[0][0].set_ylabel("total / initial")
    axes[0][0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(dest, dpi=110)
    plt.close(fig)
    return dest


def plot_absorption(rows, dest: Path):
    """Heat map of light-cone sup norms over (time label, eps)."""
    if not rows:
        return None
    plt = _pyplot()
    eps = sorted({r["eps"] for r in rows}, reverse=True)
    lams = sorted({r["lambda"] for r in rows if r["lambda"] is not None}, reverse=True)
    labels = [f"T(lambda={lam:g})" for lam in lams] + ["T=r0"]
    grid = np.full((len(labels), len(eps)), np.nan)
    for r in rows:
        i = len(lams) if r["lambda"] is None else lams.index(r["lambda"])
        grid[i, eps.index(r["eps"])] = r["sup"]
    fig, ax = plt.subplots(figsize=(1.5 + 1.1 * len(eps), 1.2 + 0.6 * len(labels)))
    im = ax.imshow(grid, aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(eps)), [f"{e:g}" for e in eps])
    ax.set_yticks(range(len(labels)), labels)
    ax.set_xlabel("eps")
    for i in range(grid.shape[0]):
        for j in range(grid.shape[1]):
            if np.isfinite(grid[i, j]):
                ax.text(j, i, f"{grid[i, j]:.3g}", ha="center", va="center", color="w", fontsize=7)
    fig.colorbar(im, ax=ax, label="sup over r <= t")
    fig.tight_layout()
    fig.savefig(dest, dpi=110)
    plt.close(fig)
    return dest


def plot_blowup(rows, dest: Path):
    """Solver bracket against the predicted blow-up time, per eps."""
    if not rows:
        return None
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for r in rows:
        e = r["eps"]
        ax.plot([e], [r["predicted_time"]], "kx")
        if r["bracket_lo"] is not None:
            ax.errorbar([e], [0.5 * (r["bracket_lo"] + r["bracket_hi"])], yerr=[[r["tolerance"]], [r["tolerance"]]],
                        fmt="o", color="C0", capsize=3)
    ax.set_xscale("log")
    ax.set_xlabel("eps")
    ax.set_ylabel("t")
    ax.set_title("predicted (x) and solver bracket +/- tolerance")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(dest, dpi=110)
    plt.close(fig)
    return dest


PLOTS = {
    "errors": plot_errors,
    "energy": plot_energy,
    "absorption": plot_absorption,
    "blowup": plot_blowup,
}


def render(report_dir) -> list[Path]:
    """Render every non-empty table of ``report_dir/tables`` into ``report_dir/figures``."""
    report_dir = Path(report_dir)
    fig_dir = report_dir / "figures"
    written = []
    for name, fn in PLOTS.items():
        rows = read_table(report_dir / "tables" / f"{name}.csv")
        if not rows:
            continue
        fig_dir.mkdir(parents=True, exist_ok=True)
        out = fn(rows, fig_dir / f"{name}.png")
        if out is not None:
            written.append(out)
    return written


if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent
    for path in render(target):
        print(path)
