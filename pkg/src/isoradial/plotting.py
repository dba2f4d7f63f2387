"""Optional figures for CLI tables. Needs matplotlib; always renders off-screen."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "figure.figsize": (4.2, 3.0),
    "figure.dpi": 150,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def line_plot(path, x, series: dict, xlabel: str, ylabel: str, logx=False, logy=False, hline=None):
    """One line per entry of ``series`` (label -> y values) against ``x``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, y in series.items():
            ax.plot(x, y, marker="o", label=label)
        if hline is not None:
            ax.axhline(hline, color="0.5", lw=0.8, ls="--")
        if logx:
            ax.set_xscale("log")
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if len(series) > 1:
            ax.legend()
        _save(fig, path)


def graph_plot(path, graph, highlight=()):
    """Edges of a graph, with an optional set of edges drawn in a second colour."""
    hl = {tuple(sorted(e)) for e in highlight}
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 4.2))
        for u, v in graph.edges:
            a, b = graph.z[u], graph.z[v]
            hit = (int(u), int(v)) in hl
            ax.plot([a.real, b.real], [a.imag, b.imag], color="C3" if hit else "0.3",
                    lw=1.4 if hit else 0.5)
        ax.set_aspect("equal")
        ax.axis("off")
        _save(fig, path)
