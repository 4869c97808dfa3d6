"""Command-line entry point: ``mecsim {run,sweep,validate,trace}``."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import ConfigError, parse_config
from .engine import build, write_log
from .sweep import aggregate, aggregate_csv, rows_csv, run_sweep

OUTPUT_ENV = "MECSIM_OUTPUT_DIR"


def _load(args):
    overrides = list(args.set or ())
    if getattr(args, "policy", None):
        overrides.append(f'policy = "{args.policy}"')
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seeds = [{args.seed}]")
    if getattr(args, "timing", False):
        overrides.append("record_runtime = true")
    return parse_config(args.config, overrides)


def _output_path(explicit, cfg, default_name):
    """--out, then the config's ``output``, then $MECSIM_OUTPUT_DIR; else stdout."""
    if explicit:
        return None if explicit == "-" else Path(explicit)
    if cfg.output:
        return Path(cfg.output)
    if os.environ.get(OUTPUT_ENV):
        return Path(os.environ[OUTPUT_ENV]) / default_name
    return None


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def cmd_run(args) -> int:
    cfg = _load(args)
    if cfg.sweep_param:
        raise ConfigError("run takes a single point; use sweep for list-valued keys")
    sim = build(cfg, keep_log=bool(args.log))
    rep = sim.run()
    print(f"policy               {sim.policy}")
    print(f"seed                 {cfg.seeds[0]}")
    print(f"requests             {rep.requests}")
    print(f"hit_ratio            {rep.hit_ratio!r}")
    print(f"avg_delay_ms         {rep.avg_access_delay!r}")
    print(f"external_traffic_TB  {rep.external_traffic_tb!r}")
    print(f"internal_traffic_TB  {rep.internal_traffic / 1e12!r}")
    print(f"backhaul_cost        {rep.total_backhaul_cost!r}")
    print(f"proc_util            {rep.mean_utilization!r}")
    for kind, n in rep.counts.items():
        print(f"  {kind:<28}{n}")
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            write_log(sim.log, fh)
    return 0


def cmd_trace(args) -> int:
    cfg = _load(args)
    if cfg.sweep_param:
        raise ConfigError("trace takes a single point; drop list-valued keys")
    sim = build(cfg)
    sim.run()
    path = _output_path(args.out, cfg, f"{sim.policy}_seed{cfg.seeds[0]}_log.csv")
    if path is None:
        write_log(sim.log, sys.stdout)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            write_log(sim.log, fh)
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    rows = run_sweep(cfg, workers=args.workers)
    data = rows_csv(rows)
    summary = aggregate_csv(aggregate(rows, cfg.sweep_param))
    path = _output_path(args.out, cfg, "sweep.csv")
    if path is None:
        sys.stdout.write(data + "\n" + summary)
    else:
        _write(path, data)
        _write(path.with_name(path.stem + "_summary.csv"), summary)
    errors = [r for r in rows if r["status"] != "ok"]
    for r in errors:
        print(f"row error: policy={r['policy']} seed={r['seed']}: {r['status']}", file=sys.stderr)
    return 1 if errors else 0


def cmd_validate(args) -> int:
    from .validate import run_all

    failed = 0
    for name, ok, detail in run_all(args.suite or None):
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        failed += not ok
    return 1 if failed else 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mecsim", description="Edge video caching and transcoding simulator")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("-c", "--config", help="TOML config file")
        sp.add_argument("-s", "--set", action="append", metavar="KEY=VALUE", help="override a config key")

    sp = sub.add_parser("run", help="one policy, one seed")
    common(sp)
    sp.add_argument("--policy")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--log", help="also write the decision log here")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="all policies x seeds x sweep values to CSV")
    common(sp)
    sp.add_argument("-o", "--out", help=f"CSV path ('-' for stdout; default ${OUTPUT_ENV}/sweep.csv)")
    sp.add_argument("-j", "--workers", type=int, help="worker processes (default: CPU count)")
    sp.add_argument("--timing", action="store_true", help="fill runtime_ms (output is then not reproducible)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("trace", help="dump the per-request decision log")
    common(sp)
    sp.add_argument("--policy")
    sp.add_argument("--seed", type=int)
    sp.add_argument("-o", "--out")
    sp.set_defaults(func=cmd_trace)

    sp = sub.add_parser("validate", help="run the built-in oracle suites")
    sp.add_argument("suite", nargs="*", choices=["solver", "lru", "workload", "engine"])
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
