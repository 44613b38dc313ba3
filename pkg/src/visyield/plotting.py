"""Figure rendering for report directories.

Uses the Agg backend so runs work headless; every renderer writes one
PNG next to the delimited outputs and returns its path.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

# fixed metadata; the default embeds the matplotlib version, which would
# make otherwise identical runs differ across environments
_META = {"Software": "visyield"}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
    return path


def render_estimate_figure(
    reports: list, oracle_pf: float | None, fom_target: float, path
) -> Path:
    """Per-seed estimate and FoM trajectories against iteration count."""
    fig, (ax_pf, ax_fom) = plt.subplots(1, 2, figsize=(10.0, 4.0))
    any_pf, any_fom = False, False
    for rep in reports:
        iters = [row.iteration for row in rep.per_iteration]
        pfs = [row.pf for row in rep.per_iteration]
        ax_pf.plot(iters, pfs, alpha=0.7, label=f"seed {rep.seed}")
        foms = [row.fom if np.isfinite(row.fom) else np.nan
                for row in rep.per_iteration]
        ax_fom.plot(iters, foms, alpha=0.7)
        any_pf = any_pf or any(v > 0 for v in pfs)
        any_fom = any_fom or any(v > 0 for v in foms if np.isfinite(v))
    if oracle_pf is not None and oracle_pf > 0:
        ax_pf.axhline(oracle_pf, color="k", ls="--", lw=1, label="oracle")
    ax_pf.set_xlabel("iteration")
    ax_pf.set_ylabel("failure probability estimate")
    if any_pf:  # a run with no failures has nothing to log-scale
        ax_pf.set_yscale("log")
    ax_pf.legend(fontsize=7)
    ax_fom.axhline(fom_target, color="k", ls="--", lw=1)
    ax_fom.set_xlabel("iteration")
    ax_fom.set_ylabel("figure of merit")
    if any_fom:
        ax_fom.set_yscale("log")
    fig.suptitle(reports[0].method if reports else "")
    fig.tight_layout()
    return _save(fig, path)


def render_compare_figure(rows: list[dict], path) -> Path:
    """Mean simulation counts and relative errors per method."""
    methods = [r["method"] for r in rows]
    sims = [r["mean_sims"] for r in rows]
    errs = [r["rel_error"] for r in rows]
    xs = np.arange(len(methods))
    fig, (ax_sims, ax_err) = plt.subplots(1, 2, figsize=(10.0, 4.0))
    ax_sims.bar(xs, sims, color="tab:blue")
    ax_sims.set_yscale("log")
    ax_sims.set_ylabel("mean simulations")
    ax_err.bar(xs, errs, color="tab:orange")
    ax_err.set_ylabel("relative error vs reference")
    for ax in (ax_sims, ax_err):
        ax.set_xticks(xs)
        ax.set_xticklabels(methods, rotation=20, ha="right", fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def render_optimize_figure(traces_by_mode: dict[str, list], path) -> Path:
    """Oracle failure probability against cumulative simulations for
    every trace, one color per mode."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, (mode, traces) in enumerate(sorted(traces_by_mode.items())):
        color = colors[i % len(colors)]
        for j, trace in enumerate(traces):
            sims = [p.n_simulations for p in trace.points]
            pf = [p.oracle_pf for p in trace.points]
            ax.plot(sims, pf, color=color, alpha=0.6,
                    label=mode if j == 0 else None)
    ax.set_xlabel("cumulative simulations")
    ax.set_ylabel("oracle failure probability")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
