"""Figures written next to the CSV outputs of ``report`` and ``compare``."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "savefig.dpi": 120,
}
# fixed metadata keeps the PNG bytes identical between runs
_META = {"Software": None}


def _save(fig, path: str | Path) -> None:
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)


def plot_clusters(coords: np.ndarray, labels: Sequence[int], path: str | Path,
                  highlight: Sequence[int] = ()) -> None:
    """2-D embedding of the significant cocktails coloured by cluster; noise in grey."""
    labels = np.asarray(labels)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 4))
        noise = labels < 0
        if noise.any():
            ax.scatter(*coords[noise].T, s=8, c="0.75", label="noise")
        cmap = plt.get_cmap("tab20")
        for i, lab in enumerate(sorted(set(labels[~noise].tolist()))):
            pts = coords[labels == lab]
            ax.scatter(*pts.T, s=10, color=cmap(i % 20), label=f"cluster {lab}")
            ax.annotate(str(lab), pts.mean(axis=0), fontsize=8, ha="center", va="center")
        if len(highlight):
            ax.scatter(*coords[list(highlight)].T, s=60, marker="s", facecolors="none",
                       edgecolors="k", label="planted")
        ax.set_xlabel("MDS 1")
        ax.set_ylabel("MDS 2")
        if len(set(labels.tolist())) <= 12:
            ax.legend(fontsize=7, loc="best")
        _save(fig, path)


def plot_null(samples: np.ndarray, path: str | Path, k: int, observed: np.ndarray | None = None,
              exact: np.ndarray | None = None) -> None:
    """Histogram of sampled null scores, optionally against the exact law."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        bins = np.histogram_bin_edges(samples if exact is None else np.concatenate([samples, exact]), 40)
        ax.hist(samples, bins=bins, density=True, alpha=0.6, label="MCMC")
        if exact is not None:
            ax.hist(exact, bins=bins, density=True, histtype="step", color="k", label="enumeration")
        if observed is not None and len(observed):
            for h in observed:
                ax.axvline(h, color="tab:red", lw=0.5, alpha=0.4)
        ax.set_xlabel("H")
        ax.set_ylabel("density")
        ax.set_title(f"null scores, size {k}")
        ax.legend()
        _save(fig, path)


def plot_score_comparison(table, path: str | Path, curves: dict) -> None:
    """Jitter plot of each score (planted vs other) and the precision-recall curves."""
    names = ["H", "RR", "PRR"]
    rng = np.random.default_rng(0)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(2, 2, figsize=(7, 5.5))
        for ax, name in zip(axes.flat, names):
            s = table.score(name)
            ok = ~np.isnan(s)
            jitter = rng.uniform(-0.3, 0.3, len(s))
            for flag, colour in ((False, "tab:red"), (True, "tab:green")):
                m = ok & (table.is_true == flag)
                ax.scatter(s[m], jitter[m] + flag, s=4 if not flag else 20, color=colour)
            ax.set_yticks([0, 1], ["other", "planted"])
            ax.set_xlabel(name)
        ax = axes.flat[3]
        for name in names:
            pts = np.array(curves.get(name, []))
            if len(pts) == 1:
                ax.scatter(pts[:, 2], pts[:, 1], label=name)
            elif len(pts):
                ax.plot(pts[:, 2], pts[:, 1], label=name)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
        ax.legend()
        _save(fig, path)
