"""Per-cell aggregation and the CSV / text / heatmap emitters.

CSV schema, one row per (task, mode, shift, lag) cell, sorted by those keys:

    task, mode           strings
    shift_m              injected teleport magnitude, metres
    lag_ms               injected perception lag, milliseconds
    n                    trials in the cell
    success_rate         successes / n
    abort_rate           aborts / n (errored trials count as aborts)
    mean_replans         replans per trial
    mean_travel_m        commanded end-effector path length, metres
    mean_latency_s       lag onset to goal selection, seconds
    mean_final_dist_m    goal distance at trial end, metres
    mean_min_dist_m      smallest goal distance reached, metres
    picked_rate          trials that ever grasped the target (0 for push and peg)
    mean_xy_error_m      peg lateral error at the end, metres ("nan" for other tasks)
    errors               trials that raised

Floats are written with fixed 6-decimal formatting so identical inputs give
identical bytes.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

from .trial import TrialRecord

CSV_HEADER = ("task", "mode", "shift_m", "lag_ms", "n", "success_rate", "abort_rate", "mean_replans",
              "mean_travel_m", "mean_latency_s", "mean_final_dist_m", "mean_min_dist_m", "picked_rate", "mean_xy_error_m", "errors")
MODE_ORDER = ("none", "nearest", "icp", "uar", "uar_pf")
TASK_ORDER = ("pick", "push", "stack", "peg")


class EmitError(OSError):
    pass


@dataclass(frozen=True)
class CellSummary:
    task: str
    mode: str
    shift: float
    lag_ms: int
    n: int
    success_rate: float
    abort_rate: float
    mean_replans: float
    mean_travel: float
    mean_latency: float
    mean_final_dist: float
    mean_min_dist: float
    picked_rate: float = 0.0
    mean_xy_error: float = math.nan
    errors: int = 0

    def row(self) -> list[str]:
        f = _fmt
        return [self.task, self.mode, f(self.shift), str(self.lag_ms), str(self.n), f(self.success_rate),
                f(self.abort_rate), f(self.mean_replans), f(self.mean_travel), f(self.mean_latency),
                f(self.mean_final_dist), f(self.mean_min_dist), f(self.picked_rate), f(self.mean_xy_error),
                str(self.errors)]


def _fmt(v: float) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    out = f"{v:.6f}"
    return "0.000000" if out == "-0.000000" else out


def _mean(values) -> float:
    vals = [v for v in values if v is not None and not math.isnan(v)]
    return math.fsum(vals) / len(vals) if vals else math.nan


def cell_key(rec: TrialRecord) -> tuple:
    s = rec.spec
    return (s.task, s.mode, s.shift, s.lag_ms)


def summarize(records) -> list[CellSummary]:
    records = list(records)
    if not records:
        raise ValueError("no records to summarize")
    cells = defaultdict(list)
    for rec in records:
        cells[cell_key(rec)].append(rec)
    out = []
    for key in sorted(cells, key=lambda k: (_rank(k[0], TASK_ORDER), _rank(k[1], MODE_ORDER), k[2], k[3])):
        recs = cells[key]
        n = len(recs)
        out.append(CellSummary(
            *key, n,
            sum(r.success for r in recs) / n,
            sum(r.abort for r in recs) / n,
            math.fsum(r.replans for r in recs) / n,
            _mean(r.ee_travel for r in recs),
            _mean(r.retarget_latency for r in recs),
            _mean(r.final_goal_dist for r in recs),
            _mean(r.min_goal_dist for r in recs),
            sum(r.picked for r in recs) / n,
            _mean(r.xy_error for r in recs),
            sum(1 for r in recs if r.error),
        ))
    return out


def _rank(x, preferred):
    return (preferred.index(x) if x in preferred else len(preferred), x)


def grand_means(summaries) -> dict[tuple[str, str], dict[str, float]]:
    """Per (task, mode) means over cells, weighting every trial equally."""
    acc = defaultdict(list)
    for s in summaries:
        acc[(s.task, s.mode)].append(s)
    out = {}
    for key in sorted(acc, key=lambda k: (_rank(k[0], TASK_ORDER), _rank(k[1], MODE_ORDER))):
        cells = acc[key]
        n = sum(c.n for c in cells)
        out[key] = {
            "n": n,
            "success_rate": math.fsum(c.success_rate * c.n for c in cells) / n,
            "abort_rate": math.fsum(c.abort_rate * c.n for c in cells) / n,
            "mean_replans": math.fsum(c.mean_replans * c.n for c in cells) / n,
            "mean_latency_s": math.fsum(c.mean_latency * c.n for c in cells) / n,
        }
    return out


def _open_for_write(path):
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        return path.open("w", newline="")
    except OSError as exc:
        raise EmitError(f"cannot write {path}: {exc.strerror or exc}") from exc


def csv_text(summaries) -> str:
    lines = [",".join(CSV_HEADER)]
    lines += [",".join(s.row()) for s in summaries]
    return "\n".join(lines) + "\n"


def text_report(summaries) -> str:
    summaries = list(summaries)
    lines = ["Shift x Lag summary", ""]
    lines.append(f"{'task':<6} {'mode':<8} {'n':>6} {'success':>8} {'abort':>7} {'replans':>8} {'latency_s':>10}")
    for (task, mode), g in grand_means(summaries).items():
        lines.append(f"{task:<6} {mode:<8} {g['n']:>6d} {g['success_rate']:>8.3f} {g['abort_rate']:>7.3f} "
                     f"{g['mean_replans']:>8.3f} {g['mean_latency_s']:>10.4f}")
    lines.append("")
    lines.append("per-cell success (rows: shift m, columns: lag ms)")
    by_tm = defaultdict(list)
    for s in summaries:
        by_tm[(s.task, s.mode)].append(s)
    for (task, mode), cells in by_tm.items():
        lags = sorted({c.lag_ms for c in cells})
        shifts = sorted({c.shift for c in cells})
        table = {(c.shift, c.lag_ms): c.success_rate for c in cells}
        lines.append("")
        lines.append(f"[{task} / {mode}]")
        lines.append("shift\\lag " + " ".join(f"{lag:>6d}" for lag in lags))
        for r in shifts:
            vals = " ".join(f"{table[(r, lag)]:>6.2f}" if (r, lag) in table else "     -" for lag in lags)
            lines.append(f"{r:>9.3f} {vals}")
    return "\n".join(lines) + "\n"


def emit(summaries, fmt: str, path) -> Path:
    """Write ``summaries`` as ``csv``, ``text`` or ``heatmap`` (.svg, .png or .ppm by suffix)."""
    summaries = list(summaries)
    path = Path(path)
    if fmt == "csv":
        with _open_for_write(path) as fh:
            fh.write(csv_text(summaries))
    elif fmt in ("text", "text-report"):
        with _open_for_write(path) as fh:
            fh.write(text_report(summaries))
    elif fmt == "heatmap":
        from .plotting import render_heatmap

        try:
            render_heatmap(summaries, path)
        except OSError as exc:
            raise EmitError(f"cannot write {path}: {exc.strerror or exc}") from exc
    else:
        raise ValueError(f"unknown emit format: {fmt}")
    return path


def write_records(records, path) -> Path:
    path = Path(path)
    with _open_for_write(path) as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
    return path


def read_records(path) -> list[TrialRecord]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise EmitError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return [TrialRecord.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
