"""Optional figures for descent traces and return-frequency decay.

Uses the non-interactive Agg backend; figures are written next to the
CSV/JSON outputs and are never needed for any check.
"""

from __future__ import annotations

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_descent(result, path):
    """Balance score after every accepted step, with the ``1/k`` line."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    f = [result.step_log[0].f_before] if result.step_log else [result.final_score]
    f += [s.f_after for s in result.step_log]
    ax.plot(range(len(f)), f, "-o", ms=3, lw=1.2, color="k", label="max ratio")
    ax.axhline(1.0 / result.k, ls="--", color="0.5", lw=1, label="1/k")
    ax.set_xlabel("iteration")
    ax.set_ylabel("score")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_decay(report, path):
    """Log-log return frequencies per strategy with their least-squares lines."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    for dec in report.decays:
        T = np.asarray(dec.stats.checkpoints, dtype=float)
        p = np.asarray(dec.stats.p_hat)
        se = np.asarray(dec.stats.std_err)
        keep = p > 0
        line = ax.errorbar(T[keep], p[keep], yerr=se[keep], fmt="o", ms=4, capsize=2,
                           label=f"{dec.strategy} (slope {dec.slope:.2f})")
        if np.isfinite(dec.slope):
            ax.plot(T, np.exp(dec.intercept) * T ** dec.slope, "-", lw=1, color=line[0].get_color())
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("T")
    ax.set_ylabel("fraction returning after T")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
