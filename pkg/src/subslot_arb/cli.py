"""Command line: ``simulate``, ``classify``, ``calibrate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .config import ConfigError, load_config
from .market_data import (
    DataError,
    calibrate,
    classify_swaps,
    estimate_noise_distribution,
    load_dex_prices,
    load_swaps,
    load_ticks,
    write_labeled_swaps,
)
from .report import MatrixError, raw_csv, render_tables, run_matrix

log = logging.getLogger("subslot_arb")


def cmd_simulate(args) -> int:
    mc = load_config(args.config)
    if args.seeds is not None:
        start = mc.seeds[0]
        mc = replace(mc, seeds=tuple(range(start, start + args.seeds)))
    out = Path(args.out or mc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    logs = None
    if mc.write_event_logs:
        logs = out / "events"
        logs.mkdir(exist_ok=True)
    report = run_matrix(mc, robustness=args.robustness, event_log_dir=logs)
    text, table_csv = render_tables(report)
    (out / "tables.txt").write_text(text, encoding="utf-8")
    (out / "tables.csv").write_text(table_csv, encoding="utf-8")
    (out / "runs.csv").write_text(raw_csv(report), encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_classify(args) -> int:
    ticks = load_ticks(args.ticks)
    result = classify_swaps(load_swaps(args.swaps), ticks)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_labeled_swaps(out / "labeled_swaps.csv", result)
    dist = estimate_noise_distribution(result.labeled)
    dist.save(out / "noise_distribution.json")
    n_arb = sum(1 for _, lab in result.labeled if lab == "arbitrage")
    summary = {"arbitrage": n_arb, "noise": len(result.labeled) - n_arb, "rejected": len(result.rejected)}
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_calibrate(args) -> int:
    cal = calibrate(load_ticks(args.ticks), load_dex_prices(args.dex) if args.dex else None)
    cal.save(args.out)
    print(json.dumps(asdict(cal), sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subslot-arb", description="CEX-DEX arbitrage under 12 s vs 1 s execution")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the experiment matrix and write delta tables")
    s.add_argument("--config", required=True)
    s.add_argument("--robustness", action="store_true", help="add the alpha x lambda grid")
    s.add_argument("--seeds", type=int, help="number of seeds (overrides the config)")
    s.add_argument("--out", help="output directory (overrides the config)")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("classify", help="label swaps and estimate the noise distribution")
    c.add_argument("--swaps", required=True)
    c.add_argument("--ticks", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_classify)

    k = sub.add_parser("calibrate", help="estimate belief-model constants")
    k.add_argument("--ticks", required=True)
    k.add_argument("--dex")
    k.add_argument("--out", required=True)
    k.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError, MatrixError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
