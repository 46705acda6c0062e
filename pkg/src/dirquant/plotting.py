"""Static SVG figures for contours, crossing diagnostics and bandwidths.

Figures are written with fixed metadata and a fixed SVG id salt so reruns
produce identical files.
"""

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib.figure import Figure
from mpl_toolkits.mplot3d.art3d import Poly3DCollection

STYLE = {
    "svg.hashsalt": "dirquant",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}

VIEWS_3D = ((10, 0), (10, 45), (10, 90))


def _save(fig, path):
    with matplotlib.rc_context(STYLE):
        fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")


def _new(width=4.5, height=4.0, ncols=1, **kw):
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(width * ncols, height))
        axes = [fig.add_subplot(1, ncols, i + 1, **kw) for i in range(ncols)]
    return fig, axes


def _colors(n):
    cmap = matplotlib.colormaps["viridis"]
    return [cmap(x) for x in np.linspace(0.15, 0.85, max(n, 1))]


def contours_2d(contours, path, labels=("y1", "y2"), data=None, title=None):
    """Overlay closed 2D contours, one polyline per level."""
    fig, (ax,) = _new()
    if data is not None:
        ax.scatter(data[:, 0], data[:, 1], s=2, c="0.75", lw=0, rasterized=False)
    for c, col in zip(contours, _colors(len(contours))):
        if c.empty:
            continue
        v = np.vstack([c.vertices, c.vertices[:1]])
        ax.plot(v[:, 0], v[:, 1], color=col, lw=1.2, label=f"tau = {c.tau:g}")
    ax.set_xlabel(labels[0])
    ax.set_ylabel(labels[1])
    ax.set_aspect("equal", adjustable="datalim")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", fontsize=7)
    _save(fig, path)


def contours_3d(contours, path, labels=("y1", "y2", "y3"), title=None):
    """Three views of nested 3D regions (elevation 10, azimuth 0/45/90)."""
    fig, axes = _new(3.5, 3.5, ncols=len(VIEWS_3D), projection="3d")
    cols = _colors(len(contours))
    live = [c for c in contours if not c.empty]
    for ax, (elev, azim) in zip(axes, VIEWS_3D):
        for c, col in zip(contours, cols):
            if c.empty:
                continue
            polys = [c.vertices[f] for f in c.faces]
            ax.add_collection3d(Poly3DCollection(polys, facecolor=col, edgecolor="0.3",
                                                 linewidths=0.2, alpha=0.35))
        if live:
            allv = np.vstack([c.vertices for c in live])
            for i, setter in enumerate((ax.set_xlim, ax.set_ylim, ax.set_zlim)):
                setter(allv[:, i].min(), allv[:, i].max())
        ax.view_init(elev=elev, azim=azim)
        ax.set_xlabel(labels[0])
        ax.set_ylabel(labels[1])
        ax.set_zlabel(labels[2])
        ax.set_title(f"azimuth {azim}", fontsize=8)
    if title:
        fig.suptitle(title)
    _save(fig, path)


def crossing_profile(taus, raw, adjusted, path, direction=0):
    """Raw and adjusted quantiles against tau at each check point of one direction."""
    fig, (ax,) = _new(5.0, 3.5)
    for c in range(raw.shape[0]):
        ax.plot(taus, raw[c], color="0.6", lw=0.7, ls="--", label="raw" if c == 0 else None)
        ax.plot(taus, adjusted[c], color="C0", lw=0.9, label="adjusted" if c == 0 else None)
    ax.set_xlabel("tau")
    ax.set_ylabel("quantile at check point")
    ax.set_title(f"direction {direction}")
    ax.legend(loc="upper left", fontsize=7)
    _save(fig, path)


def bandwidths(directions, values, path):
    """Selected bandwidth per direction (directions without crossing omitted)."""
    fig, (ax,) = _new(5.0, 3.0)
    values = np.asarray(values, dtype=float)
    ok = np.isfinite(values)
    ax.plot(np.asarray(directions)[ok], values[ok], "o", ms=3, color="C0")
    ax.set_yscale("log")
    ax.set_xlabel("direction")
    ax.set_ylabel("bandwidth")
    _save(fig, path)


def subgradient(taus, per_direction, path):
    """Empirical lower-halfspace mass per direction for each level."""
    fig, (ax,) = _new(5.0, 3.0)
    for tau, frac, col in zip(taus, per_direction, _colors(len(taus))):
        ax.plot(np.arange(len(frac)), frac, color=col, lw=0.9, label=f"tau = {tau:g}")
        ax.axhline(tau, color=col, lw=0.6, ls=":")
    ax.set_xlabel("direction")
    ax.set_ylabel("P(Y in lower halfspace)")
    ax.legend(loc="upper right", fontsize=7)
    _save(fig, path)
