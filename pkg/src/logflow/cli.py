"""Command line: generate, run, query, analyze, report.

Exit codes: 0 success, 1 config error, 2 runtime failure, 3 watchdog.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .codec import decode, dumps_line, encode
from .config import ConfigError, PipelineConfig, load_config
from .model import NS_PER_S, Severity, StageId
from .pipeline import PipelineError, WatchdogError, run, run_analytics
from .store import Store
from .workload import emit_streams

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_WATCHDOG = 0, 1, 2, 3


def _config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = replace(cfg, gen=replace(cfg.gen, seed=args.seed))
    return cfg


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _config(args)
    streams, truth = emit_streams(cfg.gen, cfg.anomalies, window_n=cfg.filter.window_n)
    out = Path(args.out) / "streams"
    out.mkdir(parents=True, exist_ok=True)
    for stage, emissions in streams.items():
        (out / f"{stage.label}.ndjson").write_bytes(encode(e.record for e in emissions))
        print(f"{stage.label:<8} {len(emissions):>8} records -> {out / (stage.label + '.ndjson')}")
    for stage, kinds in sorted(truth.counts.items()):
        for kind, n in kinds.items():
            print(f"injected {kind.value} x{n} into {stage.label}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _config(args)
    report = run(cfg, args.out, mode="sequential" if args.sequential else "concurrent")
    print(report.to_text())
    return EXIT_OK


def _seconds(text: str) -> int:
    return int(round(float(text) * NS_PER_S))


def cmd_query(args: argparse.Namespace) -> int:
    root = Path(args.out) / "store"
    if not root.exists():
        print(f"no store at {root}", file=sys.stderr)
        return EXIT_RUNTIME
    store = Store.open(root)
    stages = [StageId.parse(s) for s in args.stage] if args.stage else None
    level = Severity.parse(args.min_severity) if args.min_severity else None
    span = store.time_span()
    t_from = _seconds(args.t_from) if args.t_from is not None else (span[0] if span else 0)
    t_to = _seconds(args.t_to) if args.t_to is not None else (span[1] + 1 if span else 0)
    rows = store.query(t_from, t_to, stages, level, include_archive=args.archive)
    sys.stdout.buffer.write(encode(rows))
    print(f"{len(rows)} records", file=sys.stderr)
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = _config(args)
    root = Path(args.out)
    if not (root / "store").exists():
        print(f"no store at {root / 'store'}", file=sys.stderr)
        return EXIT_RUNTIME
    alerts_path = root / "alerts.ndjson"
    alerts = decode(alerts_path.read_bytes()) if alerts_path.exists() else []
    results = run_analytics(Store.open(root / "store"), cfg, alerts)
    sys.stdout.buffer.write(b"".join(dumps_line(r) for r in results))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    name = "report.ndjson" if args.json else "report.txt"
    path = Path(args.out) / name
    if not path.exists():
        print(f"no report at {path}; run the pipeline first", file=sys.stderr)
        return EXIT_RUNTIME
    sys.stdout.write(path.read_text(encoding="utf-8"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="logflow", description=__doc__.splitlines()[0])
    p.add_argument("--config", metavar="PATH", help="pipeline config (JSON)")
    p.add_argument("--seed", type=int, help="override generator seed")
    p.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    sub.add_parser("generate", help="emit synthetic per-stage streams as NDJSON").set_defaults(fn=cmd_generate)

    r = sub.add_parser("run", help="run the full pipeline")
    r.add_argument("--sequential", action="store_true", help="single-threaded mode")
    r.set_defaults(fn=cmd_run)

    q = sub.add_parser("query", help="query the store under --out")
    q.add_argument("--from", dest="t_from", metavar="SECONDS")
    q.add_argument("--to", dest="t_to", metavar="SECONDS")
    q.add_argument("--stage", action="append", help="repeatable")
    q.add_argument("--min-severity")
    q.add_argument("--archive", action="store_true", help="include archived records")
    q.set_defaults(fn=cmd_query)

    sub.add_parser("analyze", help="run the config's analytics jobs on the store").set_defaults(fn=cmd_analyze)

    rep = sub.add_parser("report", help="print the last pipeline report")
    rep.add_argument("--json", action="store_true", help="NDJSON instead of text")
    rep.set_defaults(fn=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        for path, msg in exc.problems:
            print(f"config error: {path}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except WatchdogError as exc:
        print(f"watchdog: {exc}", file=sys.stderr)
        return EXIT_WATCHDOG
    except (PipelineError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
