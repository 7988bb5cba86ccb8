"""Figure rendering for convergence reports and meshes."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analysis import ConvergenceReport
from .mesh import PolyMesh, check_regularity

_SERIES = (
    ("triple_bar_q", "energy flux error", "o-"),
    ("h1h_u", "broken H1 scalar error", "s-"),
    ("l2_u", "L2 scalar error", "^-"),
    ("l2_q0", "L2 interior flux error", "v-"),
)


def save_convergence_figure(report: ConvergenceReport, path) -> None:
    """Log-log error plot with reference slopes k+1 and k+2."""
    hs = np.asarray(report.hs)
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for name, label, style in _SERIES:
        ax.loglog(hs, report.error_column(name), style, label=label, markersize=4)

    k = report.degree
    anchor = max(report.error_column("l2_u")[0], report.error_column("triple_bar_q")[0])
    for slope, ls in ((k + 1, "--"), (k + 2, ":")):
        ref = anchor * (hs / hs[0]) ** slope
        ax.loglog(hs, ref, ls, color="gray", linewidth=1,
                  label=f"slope {slope}")
    ax.set_xlabel("mesh size h")
    ax.set_ylabel("error")
    ax.set_title(
        f"{report.solution} (alpha={report.alpha}, k={k}, "
        f"{report.mesh_kind}, rho={report.rho:g})"
    )
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_mesh_figure(mesh: PolyMesh, path, color_by="rho_v") -> None:
    """Draw the polygonal cells, colored by a regularity ratio."""
    from matplotlib.collections import PolyCollection

    report = check_regularity(mesh)
    values = getattr(report, color_by)
    polys = [mesh.cell_coords(c) for c in range(mesh.n_cells)]
    fig, ax = plt.subplots(figsize=(5.5, 5.0))
    coll = PolyCollection(polys, array=np.asarray(values), edgecolor="black",
                          linewidth=0.5, cmap="viridis")
    ax.add_collection(coll)
    ax.autoscale()
    ax.set_aspect("equal")
    fig.colorbar(coll, ax=ax, label=color_by)
    ax.set_title(f"{mesh.n_cells} cells, h = {mesh.h:.4g}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
