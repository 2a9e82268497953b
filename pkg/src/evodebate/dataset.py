"""QuALITY ingestion and question selection.

Reads line-delimited QuALITY records and reduces them to binary-choice debate
questions through five ordered filtering rules: hard questions only, at most
one question per article, no near-degenerate answer options, shortest articles
first, and gold-plus-following-distractor answer reduction.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

EXCLUDED_PHRASES = ("all of the", "both are", "none of the")

SPLITS = ("train", "test")


class DatasetError(Exception):
    """Raised for unreadable or malformed QuALITY input."""


class ShortfallError(DatasetError):
    """Raised when filtering leaves fewer questions than requested."""

    def __init__(self, available: int, requested: int):
        self.available = available
        self.requested = requested
        super().__init__(
            f"only {available} questions survive filtering, {requested} requested"
        )


@dataclass(frozen=True)
class DebateQuestion:
    """A binary-choice question over a hidden article."""

    id: str
    article_id: str
    article_text: str
    question_text: str
    correct_answer: str
    incorrect_answer: str
    split: str
    difficulty_rating: float = 400.0

    def validate(self) -> None:
        if self.correct_answer == self.incorrect_answer:
            raise DatasetError(f"question {self.id}: identical answer options")
        if self.split not in SPLITS:
            raise DatasetError(f"question {self.id}: unknown split {self.split!r}")
        for answer in (self.correct_answer, self.incorrect_answer):
            lowered = answer.lower()
            for phrase in EXCLUDED_PHRASES:
                if phrase in lowered:
                    raise DatasetError(
                        f"question {self.id}: answer contains excluded phrase {phrase!r}"
                    )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "article_id": self.article_id,
            "article_text": self.article_text,
            "question_text": self.question_text,
            "correct_answer": self.correct_answer,
            "incorrect_answer": self.incorrect_answer,
            "split": self.split,
            "difficulty_rating": self.difficulty_rating,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DebateQuestion":
        return cls(**data)


@dataclass(frozen=True)
class QuestionSet:
    split: str
    questions: tuple[DebateQuestion, ...]
    requested_size: int
    source_path: str = ""
    seed: int = 0
    filter_provenance: dict = field(default_factory=dict)

    def validate(self) -> None:
        if len(self.questions) != self.requested_size:
            raise DatasetError(
                f"set holds {len(self.questions)} questions, "
                f"requested {self.requested_size}"
            )
        seen_articles = set()
        for q in self.questions:
            q.validate()
            if q.split != self.split:
                raise DatasetError(f"question {q.id}: split mismatch")
            if q.article_id in seen_articles:
                raise DatasetError(f"article {q.article_id} appears twice")
            seen_articles.add(q.article_id)

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "requested_size": self.requested_size,
            "source_path": self.source_path,
            "seed": self.seed,
            "filter_provenance": self.filter_provenance,
            "questions": [q.to_dict() for q in self.questions],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuestionSet":
        return cls(
            split=data["split"],
            questions=tuple(DebateQuestion.from_dict(q) for q in data["questions"]),
            requested_size=data["requested_size"],
            source_path=data.get("source_path", ""),
            seed=data.get("seed", 0),
            filter_provenance=data.get("filter_provenance", {}),
        )


def load_quality(path: str | Path, split: str) -> Iterator[dict]:
    """Yield parsed QuALITY records from a line-delimited JSON file.

    Records pass through unfiltered (hard flags are preserved for the
    selection stage).  Each yielded dict gains a ``split`` tag and a
    ``line_number`` for error reporting.
    """
    if split not in SPLITS:
        raise DatasetError(f"unknown split {split!r}")
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"QuALITY file not found: {path}")
    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(
                    f"{path}:{line_number}: malformed JSON record ({exc.msg})"
                ) from exc
            if not isinstance(record, dict):
                raise DatasetError(f"{path}:{line_number}: record is not an object")
            record["split"] = split
            record["line_number"] = line_number
            yield record


def _article_id(record: dict) -> str:
    for key in ("article_id", "set_unique_id", "id"):
        if key in record:
            return str(record[key])
    raise DatasetError(f"record at line {record.get('line_number')}: no article id")


def _question_entries(record: dict) -> list[dict]:
    article_id = _article_id(record)
    article_text = record.get("article")
    if article_text is None:
        raise DatasetError(f"article {article_id}: missing article text")
    entries = []
    for index, question in enumerate(record.get("questions", [])):
        gold = question.get("gold_label")
        if gold is None:
            raise DatasetError(
                f"article {article_id} question {index}: missing gold label"
            )
        options = question.get("options")
        if not options or len(options) != 4:
            raise DatasetError(
                f"article {article_id} question {index}: expected 4 options"
            )
        entries.append(
            {
                "article_id": article_id,
                "article_text": article_text,
                "question_id": str(
                    question.get("question_unique_id", f"{article_id}-q{index}")
                ),
                "question_text": question.get("question", ""),
                "options": list(options),
                # QuALITY gold labels are 1-indexed.
                "gold_index": int(gold) - 1,
                "hard": bool(question.get("difficult", 0)),
                "split": record["split"],
            }
        )
    return entries


def _has_excluded_phrase(options: Iterable[str]) -> bool:
    for option in options:
        lowered = option.lower()
        if any(phrase in lowered for phrase in EXCLUDED_PHRASES):
            return True
    return False


def _tie_break(seed: int, article_id: str) -> str:
    return hashlib.sha256(f"{seed}:{article_id}".encode("utf-8")).hexdigest()


def select_questions(records: Iterable[dict], n: int, seed: int) -> QuestionSet:
    """Reduce raw records to ``n`` binary-choice questions.

    Filtering rules, applied in order:
      1. keep hard-flagged questions only;
      2. keep at most one question per article (first in record order);
      3. drop questions whose options contain an excluded phrase;
      4. sort surviving articles by character length ascending, take ``n``
         (``seed`` breaks ties through a per-article hash);
      5. keep the gold option and the option at (gold_index + 1) mod 4.
    """
    if n < 1:
        raise DatasetError(f"requested size must be positive, got {n}")

    entries = []
    for record in records:
        entries.extend(_question_entries(record))

    splits = {e["split"] for e in entries}
    if len(splits) > 1:
        raise DatasetError(f"records mix splits: {sorted(splits)}")
    split = splits.pop() if splits else "train"

    total_questions = len(entries)
    hard = [e for e in entries if e["hard"]]

    one_per_article: list[dict] = []
    seen: set[str] = set()
    for entry in hard:
        if entry["article_id"] in seen:
            continue
        seen.add(entry["article_id"])
        one_per_article.append(entry)

    clean = [e for e in one_per_article if not _has_excluded_phrase(e["options"])]

    ranked = sorted(
        clean,
        key=lambda e: (
            len(e["article_text"]),
            _tie_break(seed, e["article_id"]),
            e["article_id"],
        ),
    )
    if len(ranked) < n:
        raise ShortfallError(available=len(ranked), requested=n)
    chosen = ranked[:n]

    questions = []
    for entry in chosen:
        gold_index = entry["gold_index"]
        if not 0 <= gold_index < 4:
            raise DatasetError(
                f"question {entry['question_id']}: gold index {gold_index} out of range"
            )
        distractor_index = (gold_index + 1) % 4
        question = DebateQuestion(
            id=entry["question_id"],
            article_id=entry["article_id"],
            article_text=entry["article_text"],
            question_text=entry["question_text"],
            correct_answer=entry["options"][gold_index],
            incorrect_answer=entry["options"][distractor_index],
            split=split,
        )
        question.validate()
        questions.append(question)

    question_set = QuestionSet(
        split=split,
        questions=tuple(questions),
        requested_size=n,
        seed=seed,
        filter_provenance={
            "total_questions": total_questions,
            "after_hard_filter": len(hard),
            "after_one_per_article": len(one_per_article),
            "after_phrase_filter": len(clean),
            "excluded_phrases": list(EXCLUDED_PHRASES),
        },
    )
    question_set.validate()
    return question_set


def build_question_set(
    path: str | Path, split: str, n: int, seed: int
) -> QuestionSet:
    """Load, filter, and tag a question set from a QuALITY file."""
    records = load_quality(path, split)
    question_set = select_questions(records, n, seed)
    return replace(question_set, source_path=str(path))


def write_question_set(question_set: QuestionSet, path: str | Path) -> None:
    """Write the canonical question-set JSON (sorted keys, stable bytes)."""
    payload = json.dumps(question_set.to_dict(), sort_keys=True, indent=2)
    Path(path).write_text(payload + "\n", encoding="utf-8")


def read_question_set(path: str | Path) -> QuestionSet:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    question_set = QuestionSet.from_dict(data)
    question_set.validate()
    return question_set
