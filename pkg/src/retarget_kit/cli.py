"""Command line: ``trial``, ``sweep``, ``report`` and ``config``.

Configuration is layered: defaults, then ``--config FILE``, then each
``--set key=value`` in order.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import MODES, TASKS, Config
from .bench.report import EmitError, emit, read_records, summarize, text_report, write_records
from .bench.sweep import DESK_GRID, FULL_GRID, Grid, run_sweep
from .bench.trial import TrialRunner, TrialSpec

BEGIN, END = "----- BEGIN {} -----", "----- END {} -----"


def _csv_list(text: str, cast=str) -> list:
    return [cast(part) for part in text.split(",") if part.strip()]


def _choice_list(choices):
    def parse(text):
        items = _csv_list(text)
        bad = [x for x in items if x not in choices]
        if bad:
            raise argparse.ArgumentTypeError(f"unknown value(s) {bad}; choose from {list(choices)}")
        return items
    return parse


def load_config(args) -> Config:
    cfg = Config.from_file(args.config) if getattr(args, "config", None) else Config()
    pairs = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()
    try:
        return cfg.with_strings(pairs) if pairs else cfg
    except (KeyError, ValueError) as exc:
        raise SystemExit(f"bad --set: {exc}")


def _block(name: str, body: str, out) -> None:
    out.write(BEGIN.format(name) + "\n")
    out.write(body if body.endswith("\n") else body + "\n")
    out.write(END.format(name) + "\n")


def cmd_trial(args, out) -> int:
    cfg = load_config(args)
    spec = TrialSpec(args.task, args.mode, args.shift, args.lag, args.seed)
    runner = TrialRunner(spec, cfg, trace=True)
    rec = runner.run()
    trace_text = "".join(json.dumps(t, sort_keys=True) + "\n" for t in runner.trace)
    if args.trace:
        Path(args.trace).write_text(trace_text)
    elif not args.quiet:
        _block("TRACE", trace_text, out)
    _block("RECORD", json.dumps(rec.to_dict(), sort_keys=True, indent=2), out)
    return 0


def _emit_all(records, out_dir: Path, heatmap_formats, out) -> None:
    summaries = summarize(records)
    paths = [emit(summaries, "csv", out_dir / "summary.csv"),
             emit(summaries, "text", out_dir / "report.txt")]
    for ext in heatmap_formats:
        paths.append(emit(summaries, "heatmap", out_dir / f"heatmap.{ext}"))
    _block("REPORT", text_report(summaries), out)
    _block("FILES", "\n".join(str(p) for p in paths), out)


def cmd_sweep(args, out) -> int:
    cfg = load_config(args)
    grid = FULL_GRID if args.grid == "full" else DESK_GRID
    if args.shifts or args.lags:
        grid = Grid(tuple(args.shifts or grid.shifts), tuple(args.lags or grid.lags_ms))
    records = run_sweep(args.tasks, args.modes, grid, args.seeds, args.master_seed, args.parallelism, cfg)
    out_dir = Path(args.out)
    write_records(records, out_dir / "records.jsonl")
    (out_dir / "config.txt").write_text(cfg.to_text())
    _emit_all(records, out_dir, args.heatmap, out)
    errored = sum(1 for r in records if r.error)
    if errored:
        print(f"warning: {errored} trial(s) raised; see the error field in records.jsonl", file=sys.stderr)
    return 0


def cmd_report(args, out) -> int:
    records = read_records(args.records)
    out_dir = Path(args.out) if args.out else Path(args.records).parent
    _emit_all(records, out_dir, args.heatmap, out)
    return 0


def cmd_config(args, out) -> int:
    out.write(load_config(args).to_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="retarget-kit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config value")

    t = sub.add_parser("trial", help="run one trial with a per-tick trace")
    common(t)
    t.add_argument("--task", choices=TASKS, default="push")
    t.add_argument("--mode", choices=MODES, default="uar_pf")
    t.add_argument("--shift", type=float, default=0.10, help="teleport magnitude, metres")
    t.add_argument("--lag", type=int, default=400, help="perception lag, milliseconds")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--trace", help="write the JSONL trace here instead of stdout")
    t.add_argument("--quiet", action="store_true", help="print only the record")
    t.set_defaults(func=cmd_trial)

    s = sub.add_parser("sweep", help="run a Shift×Lag sweep and write records, CSV, report and heatmaps")
    common(s)
    s.add_argument("--tasks", type=_choice_list(TASKS), default=["push", "pick"])
    s.add_argument("--modes", type=_choice_list(MODES), default=list(MODES))
    s.add_argument("--grid", choices=("desk", "full"), default="desk",
                   help="desk: 3 shifts x 3 lags; full: 6 shifts x 5 lags")
    s.add_argument("--shifts", type=lambda v: _csv_list(v, float), help="override shifts, metres")
    s.add_argument("--lags", type=lambda v: _csv_list(v, int), help="override lags, milliseconds")
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--master-seed", type=int, default=0)
    s.add_argument("--parallelism", type=int, default=1)
    s.add_argument("--heatmap", type=lambda v: _csv_list(v), default=["svg", "png"],
                   help="heatmap formats among svg,png,ppm")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="summaries and heatmaps from a records.jsonl")
    r.add_argument("--records", required=True)
    r.add_argument("--out", help="output directory (default: next to the records)")
    r.add_argument("--heatmap", type=lambda v: _csv_list(v), default=["svg", "png"])
    r.set_defaults(func=cmd_report)

    c = sub.add_parser("config", help="print the effective configuration")
    common(c)
    c.set_defaults(func=cmd_config)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except (EmitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
