"""Figure rendering for sweep reports and benchmarks.

All functions write PNG files next to the delimited output; nothing is
shown interactively.
"""

from __future__ import annotations

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

VARIANT_COLORS = {"ann": "#888888", "soft": "#d62728", "hcp": "#1f77b4"}
VARIANT_LABELS = {"ann": "data-only", "soft": "soft constraint",
                  "hcp": "hard constraint"}


def sweep_boxplot(rows, axis, path):
    """Boxplot of relative L2 per sweep value, one box group per variant."""
    values = sorted({float(r["value"]) for r in rows})
    variants = [v for v in ("ann", "soft", "hcp")
                if any(r["variant"] == v for r in rows)]
    fig, ax = plt.subplots(figsize=(1.8 + 1.1 * len(values), 4.0))
    width = 0.8 / max(1, len(variants))
    for k, variant in enumerate(variants):
        data, positions = [], []
        for vi, value in enumerate(values):
            vals = [float(r["rel_l2"]) for r in rows
                    if r["variant"] == variant and float(r["value"]) == value
                    and np.isfinite(float(r["rel_l2"]))]
            if vals:
                data.append(vals)
                positions.append(vi + (k - (len(variants) - 1) / 2) * width)
        if not data:
            continue
        bp = ax.boxplot(data, positions=positions, widths=width * 0.9,
                        patch_artist=True, manage_ticks=False)
        for box in bp["boxes"]:
            box.set_facecolor(VARIANT_COLORS[variant])
            box.set_alpha(0.6)
        for med in bp["medians"]:
            med.set_color("black")
        ax.plot([], [], color=VARIANT_COLORS[variant],
                label=VARIANT_LABELS[variant])
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels([("%g" % v) for v in values])
    ax.set_xlabel(axis)
    ax.set_ylabel("relative L2 loss")
    ax.set_yscale("log")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def loss_curves(histories, path, labels=None):
    """Comprehensive loss decay for one or more training histories."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for k, hist in enumerate(histories):
        label = labels[k] if labels else None
        ax.plot(hist.epochs, hist.total, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    if labels:
        ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def timing_figure(rows, path):
    """Cumulative simulation time vs per-slice inference time."""
    steps = [r["step"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, [r["simulation_time"] for r in rows], "o-",
            color="#d62728", label="simulation (cumulative)")
    ax.plot(steps, [r["inference_time"] for r in rows], "s-",
            color="#1f77b4", label="network inference (per slice)")
    ax.set_xlabel("target time step")
    ax.set_ylabel("wall time [s]")
    ax.set_yscale("log")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def field_map(values, path, title=None):
    """Color map of one grid field (conductivity or a head slice)."""
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(np.asarray(values), origin="lower", aspect="equal")
    fig.colorbar(im, ax=ax)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
