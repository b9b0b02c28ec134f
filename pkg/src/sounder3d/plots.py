"""Matplotlib figure rendering for the report path; all figures go to files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .channel import Mpc
from .metrics import CapacityReport, SpreadStats


def plot_reference_phases(before: np.ndarray, after: np.ndarray, path) -> None:
    """Per-antenna reference-channel phase vs rotor position, pre/post correction."""
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    rotors = np.arange(before.shape[0])
    for panel, data, title in (
        (axes[0], before, "before correction"),
        (axes[1], after, "after correction"),
    ):
        panel.plot(rotors, np.rad2deg(data), lw=0.8)
        panel.set_ylabel("phase (deg)")
        panel.set_title(f"Reference channel phase {title}")
        panel.grid(alpha=0.3)
    axes[1].set_xlabel("rotor position index")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_mpcs(mpcs: list[Mpc], path) -> None:
    """Departure/arrival scatter, sized and colored by path power."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    if mpcs:
        p_db = np.array([m.power_db for m in mpcs])
        size = 12 + 3 * (p_db - p_db.min())
        for ax, az, el, title in (
            (axes[0], [m.aod.azimuth for m in mpcs], [m.aod.elevation for m in mpcs], "departure"),
            (axes[1], [m.aoa.azimuth for m in mpcs], [m.aoa.elevation for m in mpcs], "arrival"),
        ):
            sc = ax.scatter(az, el, c=p_db, s=size, cmap="viridis")
            ax.set_xlabel("azimuth (deg)")
            ax.set_ylabel("elevation (deg)")
            ax.set_title(title)
            ax.grid(alpha=0.3)
        fig.colorbar(sc, ax=axes, label="power (dB)")
    else:
        for ax in axes:
            ax.set_title("no extracted paths")
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_residual_power(residual_power: np.ndarray, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    p = np.asarray(residual_power, dtype=float)
    ref = p[0] if p.size and p[0] > 0 else 1.0
    ax.plot(np.arange(p.size), 10 * np.log10(np.maximum(p / ref, 1e-30)), marker="o")
    ax.set_xlabel("extracted paths")
    ax.set_ylabel("residual power (dB rel. input)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_spreads(rows: list[tuple[str, SpreadStats]], path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    labels = [label for label, _ in rows]
    x = np.arange(len(rows))
    width = 0.2
    for k, name in enumerate(("esd", "asd", "esa", "asa")):
        vals = [getattr(st, name) for _, st in rows]
        ax.bar(x + (k - 1.5) * width, vals, width, label=name.upper())
    ax.set_xticks(x, labels, rotation=30, ha="right")
    ax.set_ylabel("RMS spread (deg)")
    ax.legend()
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_separability(labels: list[str], r_matrix: np.ndarray, path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    im = ax.imshow(r_matrix, cmap="RdBu", vmin=-np.max(np.abs(r_matrix)), vmax=np.max(np.abs(r_matrix)))
    ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right")
    ax.set_yticks(range(len(labels)), labels)
    fig.colorbar(im, ax=ax, label="r_ij (deg)")
    ax.set_title("Elevation separability")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_capacity_cdfs(reports: dict[str, CapacityReport], path) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for label, report in reports.items():
        values, quantiles = report.cdf()
        ax.step(values, quantiles, where="post", label=label)
    ax.set_xlabel("capacity (b/s/Hz)")
    ax.set_ylabel("empirical CDF")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_rmse_vs_allan(allan_devs: np.ndarray, rmse: dict[str, np.ndarray], path) -> None:
    """RMSE per angle dimension against Allan deviation (symlog x to admit 0)."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    for name, values in rmse.items():
        ax.plot(allan_devs, values, marker="o", label=name)
    positive = [a for a in allan_devs if a > 0]
    if positive:
        ax.set_xscale("symlog", linthresh=min(positive))
    ax.set_xlabel("Allan deviation (1 s)")
    ax.set_ylabel("RMSE (deg)")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
