"""Static SVG figures with byte-identical reruns.

Matplotlib salts SVG element ids and stamps a creation date by default;
both are pinned here so identical inputs produce identical files. All
figures use fixed viewports so layout never depends on the data.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

SVG_RC = {
    "svg.hashsalt": "bnslab",
    "svg.fonttype": "path",
    "figure.dpi": 100,
}


def save_svg(fig, path) -> None:
    """Write a figure as SVG without the volatile date stamp."""
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def scatter_panels(
    panels: Sequence[Tuple[str, "np.ndarray"]],
    path,
    limit: float,
    n_cols: int = 3,
    point_size: float = 2.0,
) -> None:
    """Grid of square scatter plots sharing one fixed viewport.

    panels are (title, (n, 2) points); limit sets the half-width of every
    axis so panels are visually comparable.
    """
    n = len(panels)
    n_rows = (n + n_cols - 1) // n_cols
    with plt.rc_context(SVG_RC):
        fig, axes = plt.subplots(
            n_rows, n_cols, figsize=(3.0 * n_cols, 3.0 * n_rows), squeeze=False
        )
        for idx, (title, points) in enumerate(panels):
            ax = axes[idx // n_cols][idx % n_cols]
            ax.scatter(points[:, 0], points[:, 1], s=point_size, linewidths=0)
            ax.set_title(title, fontsize=9)
            ax.set_xlim(-limit, limit)
            ax.set_ylim(-limit, limit)
            ax.set_aspect("equal")
            ax.set_xticks([])
            ax.set_yticks([])
        for idx in range(n, n_rows * n_cols):
            axes[idx // n_cols][idx % n_cols].axis("off")
        fig.tight_layout()
        save_svg(fig, path)


def curve_panels(panels: Sequence[dict], path) -> None:
    """Side-by-side overlay panels.

    Each panel dict: title, curves (label, x, y), xlabel, ylabel, and an
    optional logy flag.
    """
    n = len(panels)
    with plt.rc_context(SVG_RC):
        fig, axes = plt.subplots(1, n, figsize=(5.0 * n, 4.0), squeeze=False)
        for ax, panel in zip(axes[0], panels):
            for label, x, y in panel["curves"]:
                ax.plot(x, y, label=label, linewidth=1.2)
            if panel.get("logy"):
                ax.set_yscale("log")
            ax.set_title(panel["title"], fontsize=10)
            ax.set_xlabel(panel["xlabel"])
            ax.set_ylabel(panel["ylabel"])
            ax.legend(fontsize=7)
        fig.tight_layout()
        save_svg(fig, path)


def curve_overlay(
    curves: Sequence[Tuple[str, "np.ndarray", "np.ndarray"]],
    path,
    xlabel: str,
    ylabel: str,
    hline: Optional[Tuple[float, str]] = None,
    vlines: Sequence[Tuple[float, str]] = (),
    logy: bool = False,
) -> None:
    """Overlaid labeled curves with optional reference lines."""
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for label, x, y in curves:
            ax.plot(x, y, label=label, linewidth=1.2)
        if hline is not None:
            ax.axhline(hline[0], color="black", linestyle="--", linewidth=0.8)
            ax.annotate(
                hline[1],
                xy=(0.99, hline[0]),
                xycoords=("axes fraction", "data"),
                ha="right",
                va="bottom",
                fontsize=7,
            )
        for value, label in vlines:
            ax.axvline(value, color="gray", linestyle=":", linewidth=0.8)
            ax.annotate(
                label,
                xy=(value, 0.02),
                xycoords=("data", "axes fraction"),
                rotation=90,
                ha="right",
                va="bottom",
                fontsize=7,
            )
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=8)
        fig.tight_layout()
        save_svg(fig, path)
