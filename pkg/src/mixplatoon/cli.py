"""``mixplatoon`` command line: train, simulate, sweep, combos, decompose, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments as ex
from .config import load_config
from .errors import ConfigError, InvalidInputError, NumericAbort

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixplatoon",
                                     description="Mixed CAV/HDV platoon control experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", nargs="?", default=None,
                       help="JSON config file (defaults profile when omitted)")
        p.add_argument("--seed", type=int, default=None, help="experiment and trainer seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--checkpoints", default=None, help="directory holding m1.json .. m5.json")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        return p

    t = common(sub.add_parser("train", help="train control modules M_1..M_5"))
    t.add_argument("--modules", default="1,2,3,4,5", help="comma-separated module sizes")
    t.add_argument("--workers", type=int, default=None, help="rollout worker processes")
    t.add_argument("--no-resume", action="store_true", help="retrain modules that have checkpoints")

    s = common(sub.add_parser("simulate", help="simulate the configured platoon"))
    s.add_argument("--topology", default=None, help='platoon labels, e.g. "1,0,0,1,0"')

    w = common(sub.add_parser("sweep", help="penetration-rate sweep"))
    w.add_argument("--rates", default=None, help="comma-separated rates in percent")

    c = common(sub.add_parser("combos", help="compare orderings at one penetration rate"))
    c.add_argument("--rate", type=int, default=None)

    d = common(sub.add_parser("decompose", help="print the subsystem decomposition"))
    d.add_argument("--topology", default=None)

    r = common(sub.add_parser("report", help="score a trajectory CSV"))
    r.add_argument("--log", required=True, help="t,vehicle_id,x,v,a trajectory file")
    r.add_argument("--topology", default=None)
    return parser


def _config_from_args(args):
    overrides = {}
    if args.out is not None:
        overrides["output_dir"] = str(Path(args.out).resolve())
    if args.checkpoints is not None:
        overrides["checkpoint_dir"] = str(Path(args.checkpoints).resolve())
    if getattr(args, "topology", None) is not None:
        overrides["topology"] = args.topology
    if getattr(args, "rates", None) is not None:
        try:
            overrides["penetration_rates"] = [int(x) for x in args.rates.split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --rates {args.rates!r}") from exc
    if getattr(args, "rate", None) is not None:
        overrides["combination_rate"] = args.rate
    cfg = load_config(args.config, overrides)
    if args.seed is not None:
        cfg = ex.with_seed(cfg, args.seed)
    if getattr(args, "workers", None) is not None:
        try:
            cfg = replace(cfg, trainer=replace(cfg.trainer, workers=args.workers))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return cfg


def _rows_table(rows) -> str:
    lines = [f"{'name':>10} {'n_cav':>5} {'speed':>9} {'fuel':>8} {'travel%':>8} {'energy%':>8}"]
    for r in rows:
        fmt = lambda x: "n/a" if x is None else f"{x:.2f}"  # noqa: E731
        lines.append(f"{r.name:>10} {r.n_cav:>5} {r.report.average_speed:9.3f} "
                     f"{r.report.average_fuel:8.4f} {fmt(r.travel):>8} {fmt(r.energy):>8}")
    return "\n".join(lines)


def run(args) -> int:
    cfg = _config_from_args(args)
    out = cfg.resolve(cfg.output_dir)
    if args.command == "train":
        try:
            modules = [int(x) for x in args.modules.split(",") if x.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --modules {args.modules!r}") from exc
        summary = ex.run_training(cfg, out, modules, resume=not args.no_resume)
        print(json.dumps(summary.to_dict(), sort_keys=True))
    elif args.command == "simulate":
        _, report = ex.run_simulation(cfg, out)
        print(f"average speed {report.average_speed:.3f} ft/s, average fuel "
              f"{report.average_fuel:.4f} ml/s, collision step {report.collision_step}")
    elif args.command == "sweep":
        print(_rows_table(ex.run_penetration_sweep(cfg, out)))
    elif args.command == "combos":
        print(_rows_table(ex.run_combination_study(cfg, out)))
    elif args.command == "decompose":
        for a in ex.run_decompose(cfg, out):
            print(f"M_{a['module_size']}: leader {a['leader_index']} -> CAVs {a['cav_indices']}")
    elif args.command == "report":
        report = ex.run_report(cfg, args.log, out)
        print(report.to_json(), end="")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
