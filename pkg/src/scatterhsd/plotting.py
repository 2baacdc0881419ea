"""Figures written next to the CSV outputs (Agg backend, files only)."""

from __future__ import annotations

import os
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .infoplane import MITrace  # noqa: E402


def _by_level(traces: Sequence[MITrace]) -> Dict[int, List[MITrace]]:
    out: Dict[int, List[MITrace]] = {}
    for t in traces:
        out.setdefault(t.level, []).append(t)
    for v in out.values():
        v.sort(key=lambda t: t.epoch)
    return out


def plot_info_plane(traces: Sequence[MITrace], path: str, classes: int = 0) -> str:
    """Three panels: information plane, KL gap to the teacher, cross-entropy per level."""
    levels = _by_level(traces)
    top = max(levels)
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.8))
    for level, ts in sorted(levels.items()):
        ep = [t.epoch for t in ts]
        label = f"level {level}" + (" (teacher)" if level == top else "")
        sc = axes[0].scatter([t.i_xz for t in ts], [t.i_yz for t in ts], c=ep, cmap="viridis",
                             s=14, marker="os^dv"[(level - 1) % 5], label=label)
        if level != top:
            axes[1].plot(ep, [t.kl_gap_to_teacher for t in ts], label=f"gap level {level}")
        axes[2].plot(ep, [t.ce for t in ts], label=label)
    if classes:
        axes[0].axhline(np.log(classes), color="grey", lw=0.8, ls="--")
    fig.colorbar(sc, ax=axes[0], label="epoch")
    axes[0].set_xlabel("I(X;Z) [nats]")
    axes[0].set_ylabel("I(Y;Z) [nats]")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("KL(teacher || level)")
    axes[2].set_xlabel("epoch")
    axes[2].set_ylabel("cross-entropy")
    for ax in axes:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_losses(steps: Sequence[dict], path: str) -> str:
    """Reconstruction and per-level cross-entropy over training steps."""
    fig, (a, b) = plt.subplots(1, 2, figsize=(10, 3.6))
    x = [r["step"] for r in steps]
    a.plot(x, [float(r["rec"]) for r in steps], lw=0.8)
    a.set_yscale("log")
    a.set_xlabel("step")
    a.set_ylabel("Chamfer loss")
    ce_keys = sorted(k for k in steps[0] if k.startswith("ce")) if steps else []
    for k in ce_keys:
        vals = [float(r[k]) if r[k] != "" else np.nan for r in steps]
        b.plot(x, vals, lw=0.8, label=k)
    b.set_xlabel("step")
    b.set_ylabel("cross-entropy")
    if ce_keys:
        b.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_ablation(rows: Sequence[dict], path: str) -> str:
    """Teacher OA per ablation row, with per-seed points when given."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    names = [r["suite"] for r in rows]
    ax.bar(range(len(rows)), [float(r["OA"]) for r in rows], color="#8fa8c8")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(names, rotation=20, fontsize=8)
    ax.set_ylabel("test OA [%]")
    lo = min(float(r["OA"]) for r in rows)
    ax.set_ylim(max(0.0, lo - 15), 100)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def figure_path(csv_path: str, suffix: str = ".png") -> str:
    return os.path.splitext(csv_path)[0] + suffix
