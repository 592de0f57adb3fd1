"""Success-rate heatmaps: one panel per (task, mode), shifts down, lags across,
all panels on a single 0..1 colour scale."""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.colors import Normalize
from matplotlib.figure import Figure

CMAP = "viridis"
SCALE = Normalize(vmin=0.0, vmax=1.0)
_RC = {"svg.hashsalt": "retarget-kit", "svg.fonttype": "path", "path.simplify": False}


def color_for(success_rate: float) -> tuple[float, float, float, float]:
    """RGBA the heatmaps use for a success rate (0 and 1 are the scale endpoints)."""
    return tuple(float(v) for v in matplotlib.colormaps[CMAP](SCALE(success_rate)))


def _panels(summaries):
    from .report import MODE_ORDER, TASK_ORDER, _rank

    tasks = sorted({s.task for s in summaries}, key=lambda t: _rank(t, TASK_ORDER))
    modes = sorted({s.mode for s in summaries}, key=lambda m: _rank(m, MODE_ORDER))
    shifts = sorted({s.shift for s in summaries})
    lags = sorted({s.lag_ms for s in summaries})
    grids = {}
    for s in summaries:
        g = grids.setdefault((s.task, s.mode), np.full((len(shifts), len(lags)), np.nan))
        g[shifts.index(s.shift), lags.index(s.lag_ms)] = s.success_rate
    return tasks, modes, shifts, lags, grids


def heatmap_figure(summaries) -> Figure:
    tasks, modes, shifts, lags, grids = _panels(summaries)
    fig = Figure(figsize=(2.2 * len(modes) + 1.0, 2.0 * len(tasks) + 0.6), dpi=100)
    FigureCanvasAgg(fig)
    axes = fig.subplots(len(tasks), len(modes), squeeze=False)
    image = None
    for i, task in enumerate(tasks):
        for j, mode in enumerate(modes):
            ax = axes[i][j]
            grid = grids.get((task, mode), np.full((len(shifts), len(lags)), np.nan))
            image = ax.imshow(grid, cmap=CMAP, norm=SCALE, origin="lower", aspect="auto")
            for (r, c), v in np.ndenumerate(grid):
                if not np.isnan(v):
                    ax.text(c, r, f"{v:.2f}", ha="center", va="center", fontsize=7,
                            color="white" if v < 0.5 else "black")
            ax.set_xticks(range(len(lags)), [str(v) for v in lags], fontsize=7)
            ax.set_yticks(range(len(shifts)), [f"{100 * v:g}" for v in shifts], fontsize=7)
            if i == 0:
                ax.set_title(mode, fontsize=9)
            if j == 0:
                ax.set_ylabel(f"{task}\nshift (cm)", fontsize=8)
            if i == len(tasks) - 1:
                ax.set_xlabel("lag (ms)", fontsize=8)
    fig.subplots_adjust(left=0.08, right=0.88, bottom=0.1, top=0.92, wspace=0.25, hspace=0.35)
    cax = fig.add_axes((0.9, 0.1, 0.02, 0.82))
    fig.colorbar(image, cax=cax, label="success rate")
    return fig


def render_heatmap(summaries, path) -> Path:
    """Write the heatmap grid to ``path``; the suffix picks SVG, PNG or binary PPM."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in (".svg", ".png", ".ppm"):
        raise ValueError(f"unsupported heatmap format: {suffix or path.name}")
    summaries = list(summaries)
    with matplotlib.rc_context(_RC):
        fig = heatmap_figure(summaries)
        if suffix == ".svg":
            fig.savefig(path, format="svg", metadata={"Date": None})
        elif suffix == ".png":
            fig.savefig(path, format="png", metadata={"Software": None})
        else:
            canvas = fig.canvas
            canvas.draw()
            rgb = np.asarray(canvas.buffer_rgba())[..., :3]
            h, w = rgb.shape[:2]
            path.write_bytes(b"P6\n%d %d\n255\n" % (w, h) + rgb.tobytes())
    return path
