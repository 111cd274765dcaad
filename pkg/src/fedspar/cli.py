"""``fedspar`` command line: run scenarios and inspect message logs."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import ConfigError, ScenarioFault, emit, load_config, run_scenario
from .fednet import MessageLog, PayloadKind

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
LOG_NAME = "messages.jsonl"


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedspar", description="Private federated sparse regression experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the scenarios of a JSON config")
    run.add_argument("--config", required=True, help="JSON scenario file")
    run.add_argument("--full", action="store_true", help="full-size reference rows instead of desk mirrors")
    run.add_argument("--out", help="output file (default: stdout)")
    run.add_argument("--format", choices=("csv", "md"), default="csv")
    run.add_argument("--seed", type=int, help="override every scenario's seed")
    run.add_argument("--replications", type=int, help="override every scenario's replication count")
    run.add_argument("--workers", type=int, default=1, help="worker processes per scenario")
    run.add_argument("--run-dir", help="directory receiving the message log")
    audit = sub.add_parser("audit-log", help="print the message log of a run directory")
    audit.add_argument("--run-dir", required=True)
    return p


def _cmd_run(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.replications is not None:
        overrides["replications"] = args.replications
    try:
        cfgs = load_config(args.config, full=args.full, overrides=overrides)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sink = [] if args.run_dir else None
    rows = []
    try:
        for i, cfg in enumerate(cfgs):
            part = [] if sink is not None else None
            rows.append(run_scenario(cfg, workers=args.workers, log_sink=part))
            if part is not None:
                sink.extend((i, r, e) for r, e in part)
        text = emit(rows, args.format)
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        if args.run_dir:
            d = Path(args.run_dir)
            d.mkdir(parents=True, exist_ok=True)
            with open(d / LOG_NAME, "w") as fh:
                for i, r, e in sink:
                    fh.write(json.dumps({"scenario": i, "replication": r, **e.as_dict()}) + "\n")
    except ScenarioFault as exc:
        print(f"runtime fault: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"io fault: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_audit(args) -> int:
    path = Path(args.run_dir) / LOG_NAME
    try:
        entries = MessageLog.load_jsonl(path)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    allowed = {k.value for k in PayloadKind}
    counts: dict[str, int] = {}
    for e in entries:
        print(json.dumps(e))
        counts[e.get("kind")] = counts.get(e.get("kind"), 0) + 1
    bad = sorted(k for k in counts if k not in allowed)
    summary = ", ".join(f"{k}={v}" for k, v in sorted(counts.items(), key=lambda kv: str(kv[0])))
    print(f"# {len(entries)} messages: {summary}", file=sys.stderr)
    if bad:
        print(f"# unknown payload kinds: {bad}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_audit(args)


if __name__ == "__main__":
    sys.exit(main())
