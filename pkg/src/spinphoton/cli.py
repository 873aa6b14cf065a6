"""Command-line entry point."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .analysis import AnalysisError
from .config import ConfigError, RunConfig, load_config
from .detection import DetectionError, TagFormatError
from .pipeline import analyze, load_tags, plot_data, rates_section, reproduce, simulate

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_DATA = 4


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = cfg.with_overrides(
        seed=args.seed, n_frames=args.frames, preset=args.preset, out_dir=args.out_dir, mode=args.mode
    )
    return cfg.validate()


def _dump(obj, path: Path | None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=float)
    if path is None:
        print(text)
    else:
        path.write_text(text + "\n")
        print(f"wrote {path}")


def cmd_simulate(args) -> int:
    cfg = _config(args)
    streams = simulate(cfg)
    for sc, tags in streams.items():
        print(f"{sc}: {len(tags)} tags over {tags.n_frames} frames")
    return EXIT_OK


def _streams(args, cfg):
    paths = [Path(p) for p in args.tags] if args.tags else []
    if not paths:
        streams = load_tags(cfg.run.out_dir)
    else:
        from .detection import TagStream

        streams = {}
        for p in paths:
            t = TagStream.read(p)
            streams[t.header.get("scenario", p.stem)] = t
    if not streams:
        raise TagFormatError(f"no tag files found in {cfg.run.out_dir}")
    return streams


def cmd_analyze(args) -> int:
    cfg = _config(args)
    report = analyze(_streams(args, cfg), cfg)
    out = Path(cfg.run.out_dir) / "report.json" if not args.stdout else None
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
    _dump(report, out)
    return EXIT_OK


def cmd_rates(args) -> int:
    _dump(rates_section(_config(args)), None)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    cfg = _config(args)
    out_dir = Path(cfg.run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = reproduce(cfg.run.n_frames, cfg.run.seed, out_dir if args.keep_tags else None, cfg.run.mode)
    _dump(result, out_dir / "reproduce.json")
    print(f"{'quantity':48s} {'reference':>9s} {'ideal':>9s} {'imperfect':>10s}  check")
    for r in result["comparison"]:
        fmt = lambda v: "-" if v is None else f"{v:.4g}"
        flag = "" if r["pass"] is None else ("PASS" if r["pass"] else "FAIL")
        print(f"{r['quantity']:48s} {fmt(r['reference']):>9s} {fmt(r['ideal']):>9s} {fmt(r['imperfect']):>10s}  {flag}")
    return EXIT_OK


def cmd_plot_data(args) -> int:
    cfg = _config(args)
    for p in plot_data(_streams(args, cfg), cfg, Path(cfg.run.out_dir) / "plot-data"):
        print(f"wrote {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--frames", type=int, help="frames per scenario")
    common.add_argument("--preset", help="scenario name, sequence family, 'all' or 'custom'")
    common.add_argument("--out-dir")
    common.add_argument("--mode", choices=("plain", "importance"))

    p = argparse.ArgumentParser(prog="spinphoton", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write one tag file per scenario").set_defaults(func=cmd_simulate)
    a = sub.add_parser("analyze", parents=[common], help="reduce tag files to a JSON report")
    a.add_argument("tags", nargs="*", help="tag files (default: all *.tags in --out-dir)")
    a.add_argument("--stdout", action="store_true", help="print the report instead of writing report.json")
    a.set_defaults(func=cmd_analyze)
    sub.add_parser("rates", parents=[common], help="rate budget").set_defaults(func=cmd_rates)
    r = sub.add_parser("reproduce-paper", parents=[common], help="ideal vs imperfect campaign against reference values")
    r.add_argument("--keep-tags", action="store_true")
    r.set_defaults(func=cmd_reproduce)
    d = sub.add_parser("plot-data", parents=[common], help="CSV tables for plotting")
    d.add_argument("tags", nargs="*")
    d.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TagFormatError, AnalysisError, DetectionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
