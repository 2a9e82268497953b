"""Shared builders for the test suite.

Most tests drive the real pipeline against the synthetic backend, so the
helpers here construct marker-bearing questions and strategies whose latent
skills and gold answers the backend can read back out of rendered prompts.
"""

import json

import pytest

from evodebate.dataset import DebateQuestion
from evodebate.evolution import DebateTeam, StrategyPrompt
from evodebate.gateway import (
    LlmGateway,
    ResponseCache,
    SyntheticBackend,
    SyntheticParams,
)

GOLD = "the blue door"
DISTRACTOR = "the red door"


def make_question(qid="q1", gold=GOLD, distractor=DISTRACTOR, split="train",
                  article_extra=""):
    article = f"A tale of two doors. [gold={gold}] {article_extra}".rstrip()
    return DebateQuestion(
        id=qid,
        article_id=f"art-{qid}",
        article_text=article,
        question_text="Which door leads outside?",
        correct_answer=gold,
        incorrect_answer=distractor,
        split=split,
    )


def marker_strategy(sid, skill, category="Rationality", extra=""):
    text = f"[skill={skill!r}] tactic {sid} {extra}".rstrip()
    return StrategyPrompt(id=sid, category=category, text=text, generation_born=0)


def marker_team(tid, skill1, skill2, cat1="Rationality", cat2="Social Proof"):
    return DebateTeam(
        id=tid,
        member1=marker_strategy(f"{tid}.m1", skill1, category=cat1),
        member2=marker_strategy(f"{tid}.m2", skill2, category=cat2),
    )


def synthetic_gateway(cache_path=None, parallelism=1, **params):
    backend = SyntheticBackend(SyntheticParams(**params))
    cache = ResponseCache(cache_path) if cache_path is not None else None
    return LlmGateway(backend, cache=cache, parallelism=parallelism)


def quality_record(article_id, length, questions):
    """One QuALITY line with an article padded to an exact character length."""
    stem = f"Story {article_id}. "
    if length < len(stem):
        raise ValueError("length shorter than the article stem")
    article = stem + "x" * (length - len(stem))
    assert len(article) == length
    return {"set_unique_id": article_id, "article": article, "questions": questions}


def quality_question(qid, options, gold_label, difficult=1, text="What happened?"):
    return {
        "question_unique_id": qid,
        "question": text,
        "options": list(options),
        "gold_label": gold_label,
        "difficult": difficult,
    }


CLEAN_OPTIONS = ("a quiet walk", "a loud feast", "a long sleep", "a sudden storm")


def write_quality_fixture(path):
    """The six-article corpus behind the hand-traced selection tests.

    With seed 7 and n=3 the expected selection order is artB, artE, artD:
    artA fails the hard filter, artC the phrase filter, artB is shortest,
    artE beats artD on the seed-7 hash at equal article length, and artF is
    longest.  artD's gold label 4 exercises the modulo distractor wrap.
    """
    records = [
        quality_record("artA", 90, [
            quality_question("artA-q0", CLEAN_OPTIONS, gold_label=1, difficult=0),
        ]),
        quality_record("artB", 80, [
            quality_question("artB-q0", CLEAN_OPTIONS, gold_label=3, difficult=0),
            quality_question("artB-q1", CLEAN_OPTIONS, gold_label=2, difficult=1),
            quality_question("artB-q2", CLEAN_OPTIONS, gold_label=4, difficult=1),
        ]),
        quality_record("artC", 85, [
            quality_question(
                "artC-q0",
                ("a red hat", "a green hat", "a blue hat", "None of the above"),
                gold_label=1,
            ),
        ]),
        quality_record("artD", 100, [
            quality_question("artD-q0", CLEAN_OPTIONS, gold_label=4),
        ]),
        quality_record("artE", 100, [
            quality_question("artE-q0", CLEAN_OPTIONS, gold_label=1),
        ]),
        quality_record("artF", 300, [
            quality_question("artF-q0", CLEAN_OPTIONS, gold_label=2),
        ]),
    ]
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")
    return records


@pytest.fixture
def gateway():
    return synthetic_gateway()
