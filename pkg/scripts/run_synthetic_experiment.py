#!/usr/bin/env python3
"""End-to-end demo against the deterministic synthetic backend.

Evolves one population per objective (persuasion and truth), generates a
StaticGen pool of the same lifetime size, bootstraps the generalization-gap
comparison between the two lanes, scores embedding diversity, and exports
reports.  Needs no endpoint; finishes in about a minute at default sizes.
"""

import argparse
import json
import sys
from pathlib import Path

from evodebate.experiment import (
    load_config,
    run_diversity,
    run_evaluate,
    run_evolve,
    run_report,
    run_staticgen,
)
from evodebate.synthdata import make_synthetic_quality


def _write_config(workdir: Path, name: str, objective: str, args) -> Path:
    path = workdir / f"config-{name}.json"
    path.write_text(json.dumps({
        "objective": objective,
        "generations": args.generations,
        "train_size": args.train_size,
        "test_size": args.test_size,
        "train_dataset": "quality.jsonl",
        "test_dataset": "quality.jsonl",
        "experiment_dir": f"run-{name}",
        "debate": {"rounds": args.rounds},
        "parallelism": args.parallelism,
        "master_seed": args.seed,
    }, indent=2) + "\n")
    return path


def _stage(label):
    print(f"[{label}]", file=sys.stderr)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="synthetic-demo")
    parser.add_argument("--generations", type=int, default=3)
    parser.add_argument("--train-size", type=int, default=3)
    parser.add_argument("--test-size", type=int, default=3)
    parser.add_argument("--articles", type=int, default=12)
    parser.add_argument("--rounds", type=int, default=1)
    parser.add_argument("--parallelism", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--iterations", type=int, default=10_000,
        help="bootstrap resamples for the gap comparison",
    )
    args = parser.parse_args(argv)

    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    _stage("dataset")
    make_synthetic_quality(
        workdir / "quality.jsonl", n_articles=args.articles, seed=args.seed
    )

    summary = {}
    lanes = {}
    for objective in ("persuasion", "truth"):
        _stage(f"evolve:{objective}")
        cfg = load_config(_write_config(workdir, objective, objective, args))
        summary[f"evolve_{objective}"] = run_evolve(cfg)
        lanes[objective] = cfg.experiment_dir

    # The static pool lives in its own directory so diversity scoring can
    # compare it against the evolved lanes instead of shadowing one of them.
    _stage("staticgen")
    static_cfg = load_config(
        _write_config(workdir, "staticgen", "persuasion", args)
    )
    summary["staticgen"] = run_staticgen(static_cfg)

    _stage("evaluate")
    summary["gap_comparison"] = run_evaluate(
        lanes["persuasion"], lanes["truth"], iterations=args.iterations
    )
    _stage("diversity")
    summary["diversity"] = run_diversity(
        [lanes["persuasion"], lanes["truth"], static_cfg.experiment_dir]
    )
    for objective, run_dir in lanes.items():
        _stage(f"report:{objective}")
        summary[f"report_{objective}"] = run_report(run_dir)

    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
