"""Summary figures for a reconstruction run."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import depth_to_rgb  # noqa: E402

plt.rcParams.update({"font.size": 9, "axes.titlesize": 9, "image.interpolation": "nearest"})


def _show(ax, img, title):
    ax.imshow(img)
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])


def plot_reconstruction(path, truth_m, panels, vmin=None, vmax=None, dpi=110):
    """Grid of depth images: ground truth followed by ``(title, depth_m, valid)`` panels."""
    n = 1 + len(panels)
    ncols = min(n, 4)
    nrows = int(np.ceil(n / ncols))
    fig, axes = plt.subplots(nrows, ncols, figsize=(2.6 * ncols, 2.7 * nrows), squeeze=False)
    lo = np.nanmin(truth_m) if vmin is None else vmin
    hi = np.nanmax(truth_m) if vmax is None else vmax
    _show(axes[0, 0], depth_to_rgb(truth_m, vmin=lo, vmax=hi), "ground truth")
    for ax, (title, depth, valid) in zip(axes.ravel()[1:], panels):
        _show(ax, depth_to_rgb(depth, valid, lo, hi), title)
    for ax in axes.ravel()[n:]:
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)


def plot_objective(path, histories, dpi=110):
    """Objective value against iteration for each labelled fusion run."""
    fig, ax = plt.subplots(figsize=(4.2, 3.0))
    for label, hist in histories.items():
        hist = np.asarray(hist, dtype=float)
        ax.plot(np.arange(hist.size), hist - hist[-1] + 1.0, marker=".", label=label)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective - final + 1")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)


def plot_patch_histograms(path, depth_m, patches, valid=None, dpi=110):
    """Histogram of recovered depth in each panel patch, in cm about the patch mean."""
    fig, axes = plt.subplots(1, len(patches), figsize=(2.4 * len(patches), 2.4), sharey=True)
    names = ("TL", "TR", "BR", "BL")
    for ax, patch, name in zip(np.atleast_1d(axes), patches, names):
        vals = np.asarray(depth_m)[patch]
        ok = np.isfinite(vals)
        if valid is not None:
            ok &= np.asarray(valid)[patch]
        v = (vals[ok] - vals[ok].mean()) * 100.0
        ax.hist(v, bins=25, color="0.35")
        ax.set_title(f"{name}  sd={v.std(ddof=1):.2f} cm" if v.size > 1 else name)
        ax.set_xlabel("cm")
    fig.tight_layout()
    fig.savefig(path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)
