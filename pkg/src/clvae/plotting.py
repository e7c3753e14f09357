"""Figures written next to the CSV/JSON reports."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.image as mpimg
import matplotlib.pyplot as plt
import numpy as np

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def save_mask_png(mask, path) -> None:
    """Lossless 8-bit grayscale PNG, change = 255."""
    mpimg.imsave(path, np.asarray(mask, dtype=np.uint8) * 255, cmap="gray", vmin=0, vmax=255)


def read_mask_png(path) -> np.ndarray:
    img = mpimg.imread(path)
    if img.ndim == 3:
        img = img[..., 0]
    return img > 0.5


def plot_loss_history(history, path) -> None:
    """Per-term loss curves and the learning rate, one panel each."""
    epochs = [r.epoch for r in history]
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, 2, figsize=(7, 2.6))
        for key in ("total", "kl", "recon", "contrastive"):
            axes[0].plot(epochs, [getattr(r, key) for r in history], marker="o", ms=3, label=key)
        axes[0].set_yscale("log")
        axes[0].set_xlabel("epoch")
        axes[0].set_ylabel("loss")
        axes[0].legend(frameon=False)
        axes[1].step(epochs, [r.lr for r in history], where="mid")
        axes[1].set_yscale("log")
        axes[1].set_xlabel("epoch")
        axes[1].set_ylabel("learning rate")
        fig.savefig(path)
        plt.close(fig)


def plot_change_products(values, mask, path, title: str = "", gt=None) -> None:
    panels = [("divergence", values, "viridis"), ("binary", mask, "gray")]
    if gt is not None:
        panels.append(("ground truth", np.asarray(gt) == 1, "gray"))
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(panels), figsize=(3 * len(panels), 3))
        for ax, (name, img, cmap) in zip(axes, panels):
            im = ax.imshow(img, cmap=cmap, interpolation="nearest")
            ax.set_title(name)
            ax.set_axis_off()
            if name == "divergence":
                fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        if title:
            fig.suptitle(title)
        fig.savefig(path)
        plt.close(fig)


def plot_change_points(result, path) -> None:
    dates = [r.date for r in result.records]
    pct = [r.percentage_change for r in result.records]
    labels = [d.isoformat() if d else str(i) for i, d in enumerate(dates)]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(dates)), 2.8))
        colors = ["C3" if d == result.change_point and d is not None else "C0" for d in dates]
        ax.bar(range(len(pct)), pct, color=colors)
        ax.axhline(result.threshold_used, color="k", ls="--", lw=0.8, label="threshold")
        ax.set_xticks(range(len(pct)), labels, rotation=45, ha="right")
        ax.set_ylabel("changed pixels (%)")
        ax.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)
