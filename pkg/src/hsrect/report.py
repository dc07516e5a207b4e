"""Matplotlib renderings written next to the delimited report outputs."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 120


def _save(fig, path):
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)


def spectra_figure(columns: list[tuple[str, np.ndarray]], path) -> None:
    """Spectral signatures over all bands, one line per (label, pixel) column."""
    fig, ax = plt.subplots(figsize=(6, 4))
    bands = None
    for label, values in columns:
        bands = np.arange(1, len(values) + 1)
        ax.plot(bands, values, label=label, linewidth=1.4)
    ax.set_xlabel("band")
    ax.set_ylabel("reflectance")
    if bands is not None:
        ax.set_xlim(bands[0], bands[-1])
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, path)


def errormap_figure(emap: np.ndarray, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(emap, cmap="magma", vmin=0.0)
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax, fraction=0.046)
    _save(fig, path)


def per_band_psnr_figure(curves: list[tuple[str, list[float]]], path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in curves:
        ax.plot(np.arange(1, len(values) + 1), values, label=label, linewidth=1.4)
    ax.set_xlabel("band")
    ax.set_ylabel("PSNR (dB)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, path)


def robustness_figure(settings: list[str], table: dict[str, dict[str, float]], path) -> None:
    """One panel per metric; a line per variant across the settings."""
    metrics = ("mpsnr", "mssim", "msam")
    variants = sorted({v for key in table for v in (key.rsplit(":", 1)[0],)})
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    x = np.arange(len(settings))
    for ax, metric in zip(axes, metrics):
        for variant in variants:
            ys = [table[f"{variant}:{s}"][metric] for s in settings]
            ax.plot(x, ys, marker="o", markersize=3.5, label=variant, linewidth=1.3)
        ax.set_xticks(x)
        ax.set_xticklabels(settings, rotation=45, fontsize=8)
        ax.set_title(metric, fontsize=10)
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def complexity_figure(rows: list[dict], path) -> None:
    """Params (constant across scales) and FLOPs per HR size."""
    labels = [f"x{r['scale']} ({r['height']}x{r['width']})" for r in rows]
    flops = [r["flops"] / 1e9 for r in rows]
    params = [r["params"] / 1e6 for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    x = np.arange(len(rows))
    ax1.bar(x, params, color="#4878a8")
    ax1.set_xticks(x)
    ax1.set_xticklabels(labels, fontsize=8)
    ax1.set_ylabel("params (M)")
    ax2.bar(x, flops, color="#a85448")
    ax2.set_xticks(x)
    ax2.set_xticklabels(labels, fontsize=8)
    ax2.set_ylabel("FLOPs (G)")
    fig.tight_layout()
    _save(fig, path)


def training_figure(rows: list[dict], path) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    steps = [r["step"] for r in rows]
    ax1.plot(steps, [r["loss_total"] for r in rows], label="total")
    ax1.plot(steps, [r["loss_rec"] for r in rows], label="recon", alpha=0.7)
    ax1.plot(steps, [r["loss_deg"] for r in rows], label="degradation", alpha=0.7)
    ax1.set_xlabel("step")
    ax1.set_ylabel("loss")
    ax1.set_yscale("log")
    ax1.legend(fontsize=8)
    ax1.grid(alpha=0.3)
    ax2.plot(steps, [r["val_msam"] for r in rows], color="#a85448")
    ax2.set_xlabel("step")
    ax2.set_ylabel("held-out mSAM (deg)")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)
