"""Figures written next to the CSV reports.

Only the Agg backend is used, so plotting works headless. Figures are
convenience output; the CSVs remain the source of truth.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
}

GRID_KWARGS = dict(linestyle="-", color="black", linewidth=0.5, alpha=0.3)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_invariance_report(report, path, title=None):
    """Grouped bars of mean mAcc / mIOU drop per transform, with std whiskers."""
    summary = report.summary()
    names = list(summary)
    x = np.arange(len(names))
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.8, 3.0))
        for k, (key, label) in enumerate((("dmacc_abs", "ΔmAcc"), ("dmiou_abs", "ΔmIOU"))):
            means = [summary[n][key] for n in names]
            stds = [summary[n][key + "_std"] for n in names]
            ax.bar(x + (k - 0.5) * 0.38, means, 0.38, yerr=stds, capsize=2, label=label)
        ax.set_xticks(x, names)
        ax.set_ylabel("drop (percentage points)")
        ax.axhline(0.0, **GRID_KWARGS)
        ax.legend(frameon=False)
        if title:
            ax.set_title(title)
        _save(fig, path)


def plot_gadget_bench(rows, path):
    """Units and sup error against ln(1/eps) for every gadget family."""
    with plt.rc_context(RC):
        fig, (ax_u, ax_e) = plt.subplots(1, 2, figsize=(7.0, 3.0))
        for backend in dict.fromkeys(r["backend"] for r in rows):
            sel = [r for r in rows if r["backend"] == backend and r["eps_or_delta"] > 0]
            if not sel:
                continue
            t = [np.log(1.0 / r["eps_or_delta"]) for r in sel]
            ax_u.plot(t, [r["params"] for r in sel], "o-", label=backend)
            ax_e.semilogy(t, [max(r["sup_error"], 1e-17) for r in sel], "o-", label=backend)
            ax_e.semilogy(t, [r["eps_or_delta"] for r in sel], ":", color="gray")
        ax_u.set_xlabel("ln(1/eps)")
        ax_u.set_ylabel("parameters")
        ax_e.set_xlabel("ln(1/eps)")
        ax_e.set_ylabel("sup error (dotted: target)")
        ax_u.grid(**GRID_KWARGS)
        ax_e.grid(**GRID_KWARGS)
        ax_u.legend(frameon=False)
        _save(fig, path)


def plot_history(history, path):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.8, 3.0))
        ep = [h["epoch"] for h in history]
        ax.plot(ep, [h["loss"] for h in history], label="loss")
        ax.plot(ep, [h["macc"] for h in history], label="mAcc")
        ax.plot(ep, [h["miou"] for h in history], label="mIOU")
        ax.set_xlabel("epoch")
        ax.grid(**GRID_KWARGS)
        ax.legend(frameon=False)
        _save(fig, path)
