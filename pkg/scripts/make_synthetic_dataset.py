#!/usr/bin/env python3
"""Write a synthetic QuALITY-format corpus for offline experiments.

The generated articles carry ``[gold=...]`` markers, so the synthetic
backend can ground debater stances and judge behavior without a live
endpoint.  Knobs control how many records exercise each filtering rule.
"""

import argparse
import json

from evodebate.synthdata import make_synthetic_quality


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("output", help="destination .jsonl path")
    parser.add_argument("--articles", type=int, default=12)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--tie-pairs", type=int, default=1,
        help="leading article pairs forced to identical character length",
    )
    parser.add_argument(
        "--soft-every", type=int, default=5,
        help="every Nth article carries only a non-hard question",
    )
    parser.add_argument(
        "--phrase-every", type=int, default=7,
        help="every Nth article hides an excluded phrase in an option",
    )
    parser.add_argument(
        "--extra-question-every", type=int, default=4,
        help="every Nth article gains a second hard question",
    )
    args = parser.parse_args(argv)

    count = make_synthetic_quality(
        args.output,
        n_articles=args.articles,
        seed=args.seed,
        tie_pairs=args.tie_pairs,
        soft_every=args.soft_every,
        phrase_every=args.phrase_every,
        extra_question_every=args.extra_question_every,
    )
    print(json.dumps({"path": str(args.output), "articles": count}))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
