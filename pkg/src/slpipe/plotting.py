"""Report figures: Pareto front, pipeline Gantt chart, collective timeline.

Figures are drawn on standalone Agg canvases (no pyplot state) and saved as
PNG without the software/date metadata so reruns produce identical files.
"""

from __future__ import annotations

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

_KIND_COLORS = {
    "FC": "#4c72b0", "BC": "#dd8452", "FU": "#55a868", "FD": "#8fd19e",
    "BU": "#c44e52", "BD": "#e8a0a2", "SYNC": "#8172b3",
}
_PNG_META = {"Software": None}


def _new(figsize):
    fig = Figure(figsize=figsize, dpi=100)
    FigureCanvasAgg(fig)
    return fig, fig.add_subplot(1, 1, 1)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_META)
    return path


def pareto_figure(front, recommended, path):
    """Iteration time vs. cost of the front, recommended point highlighted."""
    fig, ax = _new((5.0, 3.6))
    ts = [sol.estimate.t_iter for sol, _ in front.points]
    cs = [sol.estimate.c_iter for sol, _ in front.points]
    ax.plot(ts, cs, "o-", color="#4c72b0", label="front")
    if recommended is not None:
        ax.plot([recommended.estimate.t_iter], [recommended.estimate.c_iter], "*",
                markersize=14, color="#c44e52", label="recommended")
    ax.set_xlabel("iteration time (s)")
    ax.set_ylabel("iteration cost")
    ax.grid(alpha=0.3)
    ax.legend(frameon=False)
    return _save(fig, path)


def gantt_figure(result, path):
    """One row per (stage, resource); bars coloured by task kind."""
    rows = sorted({(t.stage, _row_kind(t)) for t in result.tasks})
    index = {r: k for k, r in enumerate(rows)}
    fig, ax = _new((8.0, 0.35 * len(rows) + 1.2))
    for t in result.tasks:
        y = index[t.stage, _row_kind(t)]
        ax.broken_barh([(result.start[t.id], t.duration)], (y - 0.4, 0.8),
                       facecolors=_KIND_COLORS[t.kind], edgecolor="black", linewidth=0.3)
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels([f"stage {s} {r}" for s, r in rows], fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("time (s)")
    ax.set_xlim(0, max(result.makespan, 1e-9))
    return _save(fig, path)


def _row_kind(task):
    if task.resource is None:
        return "sync"
    return task.resource[1]


def collective_figure(traces, path):
    """Channel occupancy per worker for each protocol in ``traces`` (name -> trace)."""
    n_plots = len(traces)
    fig = Figure(figsize=(7.0, 2.2 * n_plots + 0.6), dpi=100)
    FigureCanvasAgg(fig)
    colors = {"upload": "#55a868", "download": "#4c72b0"}
    for k, (name, trace) in enumerate(sorted(traces.items())):
        ax = fig.add_subplot(n_plots, 1, k + 1)
        workers = sorted({tr.worker for tr in trace.transfers})
        for tr in trace.transfers:
            y = 2 * tr.worker + (0 if tr.channel == "up" else 1)
            ax.broken_barh([(tr.start, tr.end - tr.start)], (y - 0.4, 0.8),
                           facecolors=colors[tr.action], edgecolor="black", linewidth=0.3)
        ax.set_yticks([2 * w + 0.5 for w in workers])
        ax.set_yticklabels([f"w{w}" for w in workers], fontsize=7)
        ax.invert_yaxis()
        ax.set_title(f"{name}: {trace.finish_time:.3g} s", fontsize=9)
        ax.set_xlim(0, max(trace.finish_time, 1e-9))
    fig.axes[-1].set_xlabel("time (s)")
    return _save(fig, path)
