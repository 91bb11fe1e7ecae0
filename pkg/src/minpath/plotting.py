"""Figures for a pipeline run: paths over the scene and the class levels."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

AXES = {"x": 0, "y": 1, "z": 2}
# fixed metadata so repeated runs write identical files
PNG_META = {"Software": None}


def _class_colors(labels):
    cmap = plt.get_cmap("tab10")
    return {lab: cmap(i % 10) for i, lab in enumerate(labels)}


def plot_paths(scene, result, out_path, plane="xy", title=None):
    """Facets projected on ``plane`` in grey, valid paths colored by class."""
    i, j = AXES[plane[0]], AXES[plane[1]]
    fig, ax = plt.subplots(figsize=(7, 5))
    for f in scene.facets:
        v = np.vstack([f.vertices, f.vertices[:1]])
        ax.plot(v[:, i], v[:, j], color="0.4", lw=1.5)
    labels = sorted({c.path.candidate.label for c in result.contributions})
    colors = _class_colors(labels)
    seen = set()
    for c in result.contributions:
        lab = c.path.candidate.label
        p = c.path.points
        ax.plot(p[:, i], p[:, j], color=colors[lab], lw=0.9, alpha=0.8,
                label=lab if lab not in seen else None)
        seen.add(lab)
    bs = np.asarray(result.contributions[0].path.points[0]) if result.contributions else None
    ue = np.asarray(result.ue)
    if bs is not None:
        ax.plot(bs[i], bs[j], "k^", ms=8)
        ax.annotate("BS", (bs[i], bs[j]), textcoords="offset points", xytext=(4, 4))
    ax.plot(ue[i], ue[j], "ko", ms=6)
    ax.annotate("UE", (ue[i], ue[j]), textcoords="offset points", xytext=(4, 4))
    ax.set_xlabel(f"{plane[0]} [m]")
    ax.set_ylabel(f"{plane[1]} [m]")
    ax.set_aspect("equal", adjustable="datalim")
    if labels:
        ax.legend(loc="best", fontsize=8, ncol=2)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120, metadata=PNG_META)
    plt.close(fig)


def plot_classes(total, out_path, threshold=-80.0, title=None):
    """Bar chart of each class level relative to free space."""
    rows = [r for r in total.classes if r.label != "LOS" or r.n_paths]
    labels = [r.label for r in rows]
    vals = [r.db if math.isfinite(r.db) else np.nan for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(rows) + 2), 4))
    floor = min([v for v in vals if np.isfinite(v)] + [threshold]) - 10
    heights = [v - floor if np.isfinite(v) else 0 for v in vals]
    colors = ["C0" if np.isfinite(v) and v > threshold else "0.7" for v in vals]
    ax.bar(range(len(rows)), heights, bottom=floor, color=colors)
    ax.axhline(threshold, color="C3", ls="--", lw=1)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=45)
    ax.set_ylabel("E / E_LOS [dB]")
    for k, r in enumerate(rows):
        ax.text(k, floor, str(r.n_paths), ha="center", va="bottom", fontsize=7)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120, metadata=PNG_META)
    plt.close(fig)


def write_figures(scene, report, out_dir):
    from pathlib import Path

    out = Path(out_dir)
    written = []
    multi = len(report.results) > 1
    for k, res in enumerate(report.results):
        sfx = f"_ue{k}" if multi else ""
        p = out / f"paths{sfx}.png"
        plot_paths(scene, res, p)
        written.append(p)
        p = out / f"classes{sfx}.png"
        plot_classes(res.total, p)
        written.append(p)
    return written
