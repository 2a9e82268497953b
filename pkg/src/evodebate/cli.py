"""Command-line interface.

Commands: evolve, staticgen, evaluate, report, diversity, validate-config.
Exit codes: 0 success, 2 invalid config, 3 missing inputs, 4 resume/config
mismatch, 5 backend or protocol failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .analysis import BOOTSTRAP_ITERATIONS, PANEL_SIZE, ReportError
from .dataset import DatasetError
from .experiment import (
    ConfigError,
    ConfigMismatchError,
    MissingInputError,
    config_hash,
    load_config,
    run_diversity,
    run_evaluate,
    run_evolve,
    run_report,
    run_staticgen,
)
from .gateway import GatewayError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_MISMATCH = 4
EXIT_GATEWAY = 5


def _emit(payload: dict) -> None:
    json.dump(payload, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def cmd_evolve(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    summary = run_evolve(cfg, stop_after=args.stop_after)
    _emit(summary)
    return EXIT_OK


def cmd_staticgen(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    summary = run_staticgen(cfg)
    _emit(summary)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    comparison = run_evaluate(
        args.dir_a,
        args.dir_b,
        iterations=args.iterations,
        seed=args.seed,
        paired=args.paired,
        panel_size=args.panel_size,
    )
    _emit(comparison)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    manifest = run_report(args.experiment_dir)
    _emit(manifest)
    return EXIT_OK


def cmd_diversity(args: argparse.Namespace) -> int:
    payload = run_diversity(args.experiment_dirs)
    _emit(payload)
    return EXIT_OK


def cmd_validate_config(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    cfg.validate(strict_paths=args.strict_paths)
    _emit({"config": cfg.to_dict(), "config_hash": config_hash(cfg)})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evodebate",
        description="Evolve LLM debate strategies under persuasion or truth Elo.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_evolve = sub.add_parser("evolve", help="run or resume an evolutionary run")
    p_evolve.add_argument("--config", required=True)
    p_evolve.add_argument(
        "--stop-after",
        type=int,
        default=None,
        help="halt after this generation (testing/partial runs)",
    )
    p_evolve.set_defaults(func=cmd_evolve)

    p_static = sub.add_parser("staticgen", help="generate the StaticGen baseline pool")
    p_static.add_argument("--config", required=True)
    p_static.set_defaults(func=cmd_staticgen)

    p_eval = sub.add_parser(
        "evaluate", help="elite panels + bootstrap gap comparison of two runs"
    )
    p_eval.add_argument("dir_a")
    p_eval.add_argument("dir_b")
    p_eval.add_argument("--iterations", type=int, default=BOOTSTRAP_ITERATIONS)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--paired", action="store_true")
    p_eval.add_argument("--panel-size", type=int, default=PANEL_SIZE)
    p_eval.set_defaults(func=cmd_evaluate)

    p_report = sub.add_parser("report", help="export CSV tables and summary")
    p_report.add_argument("experiment_dir")
    p_report.set_defaults(func=cmd_report)

    p_div = sub.add_parser("diversity", help="embedding diversity per run")
    p_div.add_argument("experiment_dirs", nargs="+")
    p_div.set_defaults(func=cmd_diversity)

    p_val = sub.add_parser("validate-config", help="check and echo a config")
    p_val.add_argument("config")
    p_val.add_argument(
        "--strict-paths",
        action="store_true",
        help="require dataset paths to exist",
    )
    p_val.set_defaults(func=cmd_validate_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ConfigMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingInputError, DatasetError, ReportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except GatewayError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GATEWAY
    except Exception as exc:  # pragma: no cover - last-resort diagnostics
        logging.getLogger(__name__).exception("unhandled failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
