"""Figures written next to the CSV output of ``sweep`` and ``aerts``."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# No timestamps or version strings, so reruns give identical bytes.
_PNG_METADATA = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)


def sweep_figure(rows, path) -> None:
    """Heat map of the exact Bell value over (p_a, p_b), with the |B| = 2 contour."""
    pa = sorted({r["p_a"] for r in rows})
    pb = sorted({r["p_b"] for r in rows})
    grid = np.full((len(pb), len(pa)), np.nan)
    for r in rows:
        grid[pb.index(r["p_b"]), pa.index(r["p_a"])] = r["bell_exact"]

    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    extent = (min(pa), max(pa), min(pb), max(pb))
    im = ax.imshow(grid, origin="lower", extent=extent, aspect="auto", cmap="viridis", vmin=0, vmax=4)
    fig.colorbar(im, ax=ax, label="Bell combination")
    if len(pa) > 1 and len(pb) > 1:
        ax.contour(pa, pb, grid, levels=[2.0], colors="w", linewidths=1.5)
    viol = [(r["p_a"], r["p_b"]) for r in rows if r["violating"]]
    if viol:
        ax.scatter(*zip(*viol), s=8, c="r", label="|B| > 2")
        ax.legend(loc="lower left", fontsize=8)
    ax.set_xlabel("$p_A$")
    ax.set_ylabel("$p_B$")
    ax.set_title("Exact CHSH value, switch procedure")
    fig.tight_layout()
    _save(fig, path)


def aerts_figure(rows, path) -> None:
    thetas = np.array([r["theta"] for r in rows])
    fine = np.linspace(0, max(np.pi, thetas.max() if len(thetas) else np.pi), 200)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(fine, np.cos(fine / 2) ** 2, "k-", lw=1, label=r"$\cos^2(\theta/2)$")
    ax.plot(fine, 0.5 - np.abs(np.sin(fine / 2)) / np.pi, "k--", lw=1, label="counterfactual joint")
    ax.errorbar(
        thetas, [r["sequential_rate"] for r in rows], yerr=[5 * r["se"] for r in rows],
        fmt="o", ms=4, label="sequential, conditional",
    )
    ax.errorbar(
        thetas, [r["oracle_mc"] for r in rows], yerr=[5 * r["oracle_se"] for r in rows],
        fmt="s", ms=4, label="counterfactual, Monte Carlo",
    )
    ax.errorbar(
        thetas, [r["joint_rate"] for r in rows], yerr=[5 * r["joint_se"] for r in rows],
        fmt="^", ms=4, label="sequential, joint",
    )
    ax.set_xlabel(r"tilt $\theta$ (rad)")
    ax.set_ylabel("probability")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
