"""Command line entry point: ``neurocam <subcommand> --config FILE [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from neurocam import pipeline as P

SUBCOMMANDS = ("fetch", "preprocess", "train", "explain", "select", "retrain", "stats", "report", "run-all", "synth")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="neurocam", description="EEG motor-imagery decoding with Grad-CAM channel relevance")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI experiment config (see `neurocam synth --print-config`)")
        p.add_argument("--subjects", help="comma-separated subject ids, overrides [data] subjects")
        p.add_argument("--scenario", choices=("all64", "gradcam17", "mi21"), help="restrict train/retrain to one scenario")
        p.add_argument("--out", help="output directory, overrides [run] output")
        p.add_argument("--seed", type=int, help="training seed, overrides [train] seed")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override any config key")
        if name == "stats":
            p.add_argument("--table1", action="store_true", help="summarize the bundled published accuracy table")
        if name == "synth":
            p.add_argument("--print-config", action="store_true", help="print the bundled synthetic config and exit")
    return ap


def _config(args) -> P.ExperimentConfig:
    over = {}
    for item in args.set:
        key, _, val = item.partition("=")
        if "." not in key or not _:
            raise SystemExit(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        over[key.strip()] = val.strip()
    if args.subjects is not None:
        over["data.subjects"] = args.subjects
    if args.out:
        over["run.output"] = args.out
    if args.seed is not None:
        over["train.seed"] = str(args.seed)
    if args.scenario and args.command in ("train", "retrain", "run-all"):
        over["run.scenarios"] = args.scenario
    return P.load_config(args.config, over)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if args.command == "synth" and args.print_config:
        sys.stdout.write(P.example_config("synthetic.ini"))
        return 0
    if args.command == "stats" and args.table1:
        from neurocam.stats import format_summary, load_table1, summarize_table

        print(format_summary(summarize_table(load_table1())))
        return 0
    try:
        cfg = _config(args)
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    cmd = args.command
    failures = {}

    def each(fn, *extra):
        for sid in cfg.subjects:
            try:
                res = fn(cfg, sid, *extra)
                if res is not None and hasattr(res, "overall_acc"):
                    print(f"S{sid:03d} {extra[0] if extra else ''} overall {res.overall_acc:.2f} left {res.left_acc:.2f} right {res.right_acc:.2f}")
            except Exception as exc:
                failures[sid] = f"{type(exc).__name__}: {exc}"
                print(f"S{sid:03d}: {failures[sid]}", file=sys.stderr)

    if cmd == "fetch":
        each(P.stage_fetch)
    elif cmd in ("preprocess", "synth"):
        if cmd == "synth" and cfg.source != "synthetic":
            print("synth needs [data] source = synthetic", file=sys.stderr)
            return 2
        each(P.stage_preprocess)
    elif cmd == "train":
        each(P.stage_train, "all64" if not args.scenario else args.scenario)
    elif cmd == "explain":
        each(P.stage_explain)
    elif cmd == "select":
        each(P.stage_select)
    elif cmd == "retrain":
        for sc in [args.scenario] if args.scenario else [s for s in cfg.scenarios if s != "all64"]:
            each(P.stage_train, sc)
    elif cmd == "stats":
        res = P.stage_stats(cfg)
        print(res.get("summary", json.dumps({k: v for k, v in res.items()}, indent=1)))
    elif cmd == "report":
        for f in P.stage_report(cfg):
            print(f)
    elif cmd == "run-all":
        man = P.run_pipeline(cfg)
        failures.update(man["errors"])
        print(f"manifest: {Path(cfg.output) / 'manifest.json'}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
