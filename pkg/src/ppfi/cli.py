"""Command line entry point: ``ppfi <check> [flags]``.

Exit codes: 0 pass (or not applicable), 2 fail, 1 error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import (CHECKS, EXIT_ERROR, SUITE_DIR, ConfigError, load_config, reproduce_all, run, validate,
                          write_report)

_FLAGS = (
    ("--model", str, "model JSON file or inline JSON"),
    ("--functional", str, "functional, e.g. count, linear:c=1, exp:c=1 or a JSON object"),
    ("--g", str, "catalog time function for deviation checks (JSON or file)"),
    ("--control", str, "laplace control: zero, const:u=..., linear:a=...,b=..., optimal:m=...,lo=...,hi=..."),
    ("--n", int, "number of paths (block size for deviation)"),
    ("--m", int, "inner samples per node for nested estimates"),
    ("--grid", int, "number of uniform grid intervals on [0, T]"),
    ("--reps", int, "deviation repetitions"),
    ("--r", float, "deviation level r"),
    ("--seed", int, "master seed"),
    ("--stream", int, "first stream id"),
    ("--bound-override", float, "replace the deviation bound (forces the failure path when 0)"),
    ("--rhs-scale", float, "multiply the Poincare right side"),
    ("--tolerance", float, "relative residual tolerance for clark-ocone"),
    ("--integrand", float, "known constant integrand for clark-ocone"),
    ("--expect", str, "laplace verdict: nonnegative, tight or positive"),
    ("--name", str, "experiment name used in the report"),
)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ppfi", description="Point-process functional inequality checks.")
    sub = p.add_subparsers(dest="command", required=True)
    for check in CHECKS:
        s = sub.add_parser(check, help=f"run the {check} check")
        s.add_argument("--config", help="JSON config; flags override its entries")
        for flag, typ, text in _FLAGS:
            s.add_argument(flag, type=typ, help=text)
        s.add_argument("--threads", type=int, default=None, help="worker processes (results do not depend on it)")
        s.add_argument("--report", help="write the JSON report here (default: stdout)")
        s.add_argument("--out", help="extra output: JSONL paths for sample, CSV prefix for transport-law")
    r = sub.add_parser("run", help="run one JSON config")
    r.add_argument("config")
    r.add_argument("--threads", type=int, default=None)
    r.add_argument("--report")
    a = sub.add_parser("reproduce-all", help="run every config of a suite and print a CSV summary")
    a.add_argument("--suite", default=str(SUITE_DIR), help="directory of *.json configs (default: shipped suite)")
    a.add_argument("--out", help="directory for per-experiment reports")
    a.add_argument("--csv", help="write the summary CSV here as well as to stdout")
    a.add_argument("--threads", type=int, default=1)
    return p


def _config_from_args(args):
    data, text, base = {}, None, None
    if args.config:
        path = Path(args.config)
        text, base = path.read_text(), path.parent
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    data["check"] = args.command
    for flag, _, _ in _FLAGS:
        key = flag[2:].replace("-", "_")
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    for key in ("threads", "out"):
        if getattr(args, key) is not None:
            data[key] = getattr(args, key)
    if "model" not in data:
        raise ConfigError("--model is required")
    return validate(data, text if args.config else None, base)


def _emit(outcome, report_path) -> None:
    if report_path:
        write_report(outcome, report_path)
    else:
        sys.stdout.write(outcome.text())
    m = outcome.metric
    print(f"{outcome.report['inputs']['name']}: {outcome.verdict} ({m}={outcome.value!r})", file=sys.stderr)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "reproduce-all":
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
            table, code = reproduce_all(args.suite, args.out, args.threads,
                                        log=lambda line: print(line, file=sys.stderr, flush=True))
            sys.stdout.write(table)
            if args.csv:
                Path(args.csv).write_text(table)
            return code
        if args.command == "run":
            cfg = load_config(args.config)
            if args.threads is not None:
                cfg.params["threads"] = args.threads
        else:
            cfg = _config_from_args(args)
        outcome = run(cfg)
        _emit(outcome, args.report)
        return outcome.exit_code
    except ConfigError as exc:
        print(f"ppfi: config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"ppfi: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
