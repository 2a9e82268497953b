"""Synthetic QuALITY-format corpora for desk-scale runs.

Articles embed a ``[gold=...]`` marker naming the correct option so the
synthetic backend's debaters know which stance is true.  The generator
exercises every filtering rule: soft questions, multi-question articles,
excluded answer phrases, and articles with identical character lengths
(seed-dependent tie-breaks).
"""

from __future__ import annotations

import json
import random
from pathlib import Path

_SUBJECTS = (
    "the harbor archive",
    "a cartographer's ledger",
    "the observatory minutes",
    "an engineer's field diary",
    "the village almanac",
    "a botanist's survey",
)

_CLAIMS = (
    "the signal came from the lighthouse",
    "the ledger was copied twice",
    "the comet returned early",
    "the bridge held through the flood",
    "the seeds were swapped at market",
    "the map was drawn from memory",
    "the letters were never sent",
    "the well ran dry in autumn",
)

_FILLER = (
    "The margins carry corrections in a second hand.",
    "Several pages were water-damaged and rebound.",
    "Witnesses disagreed about the order of events.",
    "A later appendix revises the earlier totals.",
    "The index references entries that no longer exist.",
    "Two copies survive, and they differ in small ways.",
)


def _pad_to_length(text: str, target: int) -> str:
    # Deterministic padding gives exact article character counts so sorting
    # and tie-break behavior is controllable from the generator.
    if len(text) > target:
        return text[:target]
    return text + "." * (target - len(text))


def make_synthetic_quality(
    path: str | Path,
    n_articles: int = 12,
    seed: int = 0,
    tie_pairs: int = 1,
    soft_every: int = 5,
    phrase_every: int = 7,
    extra_question_every: int = 4,
) -> int:
    """Write a line-delimited synthetic corpus; returns the record count.

    Every ``soft_every``-th article carries only a non-hard question, every
    ``phrase_every``-th hides an excluded phrase in an option, and every
    ``extra_question_every``-th gains a second hard question that the
    one-per-article rule must drop.  ``tie_pairs`` consecutive article pairs
    share an exact character length.
    """
    rng = random.Random(seed)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    base_length = 420
    records = []
    lengths: list[int] = []
    for index in range(n_articles):
        length = base_length + 37 * index + rng.randrange(0, 9)
        lengths.append(length)
    for pair in range(min(tie_pairs, n_articles // 2)):
        # Give pairs (0,1), (2,3), ... identical lengths.
        lengths[2 * pair + 1] = lengths[2 * pair]

    for index in range(n_articles):
        article_id = f"syn-{seed:03d}-{index:03d}"
        subject = _SUBJECTS[index % len(_SUBJECTS)]
        options = rng.sample(_CLAIMS, 4)
        gold_index = index % 4
        gold_text = options[gold_index]

        body = (
            f"This account concerns {subject}. "
            + " ".join(rng.choice(_FILLER) for _ in range(6))
            + f" Taken together the evidence shows that [gold={gold_text}]. "
            + " ".join(rng.choice(_FILLER) for _ in range(4))
        )
        article_text = _pad_to_length(body, lengths[index])

        hard = 0 if soft_every and index % soft_every == soft_every - 1 else 1
        if phrase_every and index % phrase_every == phrase_every - 1:
            # Poison a distractor with an excluded phrase; rule 3 drops it.
            poison = (gold_index + 2) % 4
            options[poison] = "none of the records support this"

        questions = [
            {
                "question_unique_id": f"{article_id}-q0",
                "question": f"What does {subject} ultimately support?",
                "options": list(options),
                "gold_label": gold_index + 1,
                "difficult": hard,
            }
        ]
        if extra_question_every and index % extra_question_every == extra_question_every - 1:
            alt = rng.sample(_CLAIMS, 4)
            questions.append(
                {
                    "question_unique_id": f"{article_id}-q1",
                    "question": f"What lesser claim does {subject} make?",
                    "options": alt,
                    "gold_label": 1,
                    "difficult": 1,
                }
            )

        records.append(
            {
                "article_id": article_id,
                "title": f"Synthetic record {index}",
                "article": article_text,
                "questions": questions,
            }
        )

    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
    return len(records)
