"""Command line front end: run experiments, write CSV reports.

Exit codes: 0 success, 1 I/O failure, 2 invariant violation, 3 configuration or
usage error.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
from typing import Optional, Sequence

from fedmec.errors import ConfigError, ConfigMismatch, InvariantViolation, IoFailure
from fedmec.harness import scenarios as S
from fedmec.harness.config import NAMED_CONFIGS, SCENARIO_CODES, ScenarioConfig, load_config, print_default
from fedmec.harness.topology import LOOPBACK, SIM

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVARIANT = 2
EXIT_CONFIG = 3

DEFAULT_SIZES = "10k,1m,10m"
_UNITS = {"": 1, "b": 1, "k": 1_000, "kb": 1_000, "m": 1_000_000, "mb": 1_000_000, "g": 1_000_000_000, "gb": 1_000_000_000}


def parse_size(text: str) -> int:
    """'10k' -> 10_000, '1m' -> 1_000_000 (decimal units), '4096' -> 4096."""
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*([a-zA-Z]*)\s*", text)
    if not m or m.group(2).lower() not in _UNITS:
        raise ConfigError(f"bad state size {text!r}; use e.g. 10k, 1m, 10m or a byte count")
    size = int(float(m.group(1)) * _UNITS[m.group(2).lower()])
    if size <= 0:
        raise ConfigError(f"state size must be positive: {text!r}")
    return size


def _csv_list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors (exit 3), not argparse's default 2,
    # which this tool reserves for invariant violations
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help=f"config overlay (JSON file, or one of: {', '.join(NAMED_CONFIGS)})")
    common.add_argument("--out", default="out", help="directory for CSV reports (default: ./out)")
    common.add_argument("--transport", choices=(SIM, LOOPBACK), default=SIM)
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("-v", "--verbose", action="count", default=0)

    ap = _Parser(prog="fedmec", description="Federated MEC authentication / state-mobility testbed")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("auth", parents=[common], help="authentication latency for one or all eight scenario codes")
    p.add_argument("--scenario", default="all", help=f"one of {', '.join(SCENARIO_CODES)} or 'all'")

    p = sub.add_parser("state-sweep", parents=[common], help="state transfer latency per size and path")
    p.add_argument("--sizes", default=DEFAULT_SIZES)
    p.add_argument("--paths", default=",".join(S.SWEEP_PATHS))

    sub.add_parser("breakdown", parents=[common], help="stage breakdown with vs. without optimizations")

    p = sub.add_parser("interruption", parents=[common], help="service interruption for scenario 1, 2 or 3")
    p.add_argument("--scenario", default="all", help="1, 2, 3 or 'all'")

    sub.add_parser("all", parents=[common], help="every experiment with default arguments")

    p = sub.add_parser("config", help="inspect configuration")
    p.add_argument("--print-default", action="store_true", help="dump the embedded default config")
    return ap


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    return cfg


def _auth(cfg, args, scenario: str = "all") -> list[S.LatencyReport]:
    codes = SCENARIO_CODES if scenario == "all" else (scenario.upper(),)
    return [S.run_auth_scenario(code, cfg, args.transport) for code in codes]


def _sweep(cfg, args, sizes: str = DEFAULT_SIZES, paths: Optional[str] = None) -> list[S.LatencyReport]:
    path_list = _csv_list(paths or ",".join(S.SWEEP_PATHS))
    bad = [p for p in path_list if p not in S.SWEEP_PATHS]
    if bad:
        raise ConfigError(f"unknown state path(s) {bad}; choose from {', '.join(S.SWEEP_PATHS)}")
    return S.run_state_sweep([parse_size(s) for s in _csv_list(sizes)], path_list, cfg, args.transport)


def _interruption(cfg, args, scenario: str = "all") -> list[S.LatencyReport]:
    if scenario == "all":
        chosen = S.INTERRUPTION_SCENARIOS
    elif scenario.isdigit() and int(scenario) in S.INTERRUPTION_SCENARIOS:
        chosen = (int(scenario),)
    else:
        raise ConfigError(f"interruption scenario must be 1, 2, 3 or all, got {scenario!r}")
    return [S.run_interruption(s, cfg, args.transport) for s in chosen]


def _summarize(name: str, reports: Sequence[S.LatencyReport]) -> None:
    print(f"== {name}")
    for rep in reports:
        cols = [f"{k}={v:.3f}ms" for k, v in rep.totals.items()]
        print(f"  {rep.scenario:<24} " + "  ".join(cols))


def _emit(name: str, reports, args) -> None:
    stages, totals = S.emit_report(reports, args.out, name)
    _summarize(name, reports)
    print(f"  -> {stages}, {totals}")


def run(args) -> int:
    if args.command == "config":
        sys.stdout.write(print_default())
        return EXIT_OK
    cfg = _load(args)
    if args.command == "auth":
        _emit("auth", _auth(cfg, args, args.scenario), args)
    elif args.command == "state-sweep":
        _emit("state_sweep", _sweep(cfg, args, args.sizes, args.paths), args)
    elif args.command == "breakdown":
        _emit("breakdown", list(S.run_breakdown(cfg, args.transport)), args)
    elif args.command == "interruption":
        _emit("interruption", _interruption(cfg, args, args.scenario), args)
    elif args.command == "all":
        _emit("auth", _auth(cfg, args), args)
        _emit("state_sweep", _sweep(cfg, args), args)
        _emit("breakdown", list(S.run_breakdown(cfg, args.transport)), args)
        _emit("interruption", _interruption(cfg, args), args)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(getattr(args, "verbose", 0), 2),
                            format="%(levelname)s %(name)s: %(message)s")
        return run(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, ConfigMismatch) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IoFailure as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
