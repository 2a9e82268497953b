"""Information-asymmetric debate execution.

Two debaters see the article and argue opposite answers for N rounds; a judge
sees only the transcript and splits probability mass between the two answers.
Debater prompts receive an egocentric transcript view (their own arguments
first within each round), the judge receives a canonical speaker-labeled view.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from string import Template
from typing import Callable, Sequence

from .dataset import DebateQuestion
from .gateway import (
    CompletionRequest,
    DEBATER_MAX_TOKENS,
    DEBATER_TEMPERATURE,
    GatewayError,
    JUDGE_CHOICES,
    JUDGE_LOGPROB_COUNT,
    JUDGE_MAX_TOKENS,
    LlmGateway,
)

logger = logging.getLogger(__name__)

DEBATER1 = "debater1"
DEBATER2 = "debater2"
SPEAKERS = (DEBATER1, DEBATER2)

EMPTY_HISTORY_SENTINEL = "None"


class DebateError(Exception):
    """A debate failed; carries the transcript id for context."""


_TEMPLATE_CACHE: dict[str, Template] = {}


def load_template(name: str) -> Template:
    if name not in _TEMPLATE_CACHE:
        text = (
            resources.files("evodebate.templates")
            .joinpath(f"{name}.txt")
            .read_text(encoding="utf-8")
        )
        _TEMPLATE_CACHE[name] = Template(text)
    return _TEMPLATE_CACHE[name]


def render_template(name: str, **fields: str) -> str:
    return load_template(name).substitute(**fields)


@dataclass(frozen=True)
class DebateConfig:
    rounds: int = 2
    word_limit_per_argument: int = 150
    transcript_word_limit: int = 600
    first_speaker: str = DEBATER1
    assignment: str = DEBATER1  # which debater argues the correct answer

    def validate(self) -> None:
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if self.word_limit_per_argument < 1 or self.transcript_word_limit < 1:
            raise ValueError("word limits must be positive")
        if self.first_speaker not in SPEAKERS:
            raise ValueError(f"unknown first_speaker {self.first_speaker!r}")
        if self.assignment not in SPEAKERS:
            raise ValueError(f"unknown assignment {self.assignment!r}")

    @property
    def config_code(self) -> str:
        side = "c" if self.assignment == DEBATER1 else "i"
        order = "1" if self.first_speaker == DEBATER1 else "2"
        return side + order

    def to_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "word_limit_per_argument": self.word_limit_per_argument,
            "transcript_word_limit": self.transcript_word_limit,
            "first_speaker": self.first_speaker,
            "assignment": self.assignment,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DebateConfig":
        return cls(**data)


def four_configurations(base: DebateConfig) -> tuple[DebateConfig, ...]:
    """The four role/order configurations in canonical order.

    Order: debater 1 correct & first, correct & second, incorrect & first,
    incorrect & second.
    """
    return (
        replace(base, assignment=DEBATER1, first_speaker=DEBATER1),
        replace(base, assignment=DEBATER1, first_speaker=DEBATER2),
        replace(base, assignment=DEBATER2, first_speaker=DEBATER1),
        replace(base, assignment=DEBATER2, first_speaker=DEBATER2),
    )


@dataclass(frozen=True)
class Turn:
    round: int
    speaker: str
    text: str
    truncated: bool

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "speaker": self.speaker,
            "text": self.text,
            "truncated": self.truncated,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Turn":
        return cls(**data)


@dataclass(frozen=True)
class DebateTranscript:
    transcript_id: str
    question_id: str
    strategy1_id: str
    strategy2_id: str
    config: DebateConfig
    turns: tuple[Turn, ...]
    judge_p_debater1: float
    judge_p_correct: float
    winner: str

    def validate(self) -> None:
        if len(self.turns) != 2 * self.config.rounds:
            raise DebateError(
                f"{self.transcript_id}: expected {2 * self.config.rounds} turns, "
                f"got {len(self.turns)}"
            )
        if not 0.0 <= self.judge_p_debater1 <= 1.0:
            raise DebateError(f"{self.transcript_id}: judge probability out of range")
        for turn in self.turns:
            if len(turn.text.split()) > self.config.word_limit_per_argument:
                raise DebateError(f"{self.transcript_id}: over-length argument")

    def to_dict(self) -> dict:
        return {
            "transcript_id": self.transcript_id,
            "question_id": self.question_id,
            "strategy1_id": self.strategy1_id,
            "strategy2_id": self.strategy2_id,
            "config": self.config.to_dict(),
            "turns": [t.to_dict() for t in self.turns],
            "judge_p_debater1": self.judge_p_debater1,
            "judge_p_correct": self.judge_p_correct,
            "winner": self.winner,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DebateTranscript":
        return cls(
            transcript_id=data["transcript_id"],
            question_id=data["question_id"],
            strategy1_id=data["strategy1_id"],
            strategy2_id=data["strategy2_id"],
            config=DebateConfig.from_dict(data["config"]),
            turns=tuple(Turn.from_dict(t) for t in data["turns"]),
            judge_p_debater1=data["judge_p_debater1"],
            judge_p_correct=data["judge_p_correct"],
            winner=data["winner"],
        )


def truncate_words(text: str, limit: int) -> tuple[str, bool]:
    """Keep the first `limit` whitespace-delimited words."""
    if limit < 1:
        raise ValueError(f"word limit must be >= 1, got {limit}")
    words = text.split()
    if len(words) <= limit:
        return text, False
    return " ".join(words[:limit]), True


def _rounds_of(turns: Sequence[Turn]) -> list[list[Turn]]:
    grouped: dict[int, list[Turn]] = {}
    for turn in turns:
        grouped.setdefault(turn.round, []).append(turn)
    return [grouped[r] for r in sorted(grouped)]


def egocentric_view(turns: Sequence[Turn], viewer: str) -> str:
    """Transcript as one debater sees it: within each round, theirs first."""
    if viewer not in SPEAKERS:
        raise ValueError(f"unknown viewer {viewer!r}")
    lines: list[str] = []
    for round_turns in _rounds_of(turns):
        lines.append(f"Round {round_turns[0].round}:")
        ordered = sorted(round_turns, key=lambda t: t.speaker != viewer)
        for turn in ordered:
            label = "You" if turn.speaker == viewer else "Opponent"
            lines.append(f"{label}: {turn.text}")
    return "\n".join(lines)


def judge_view(turns: Sequence[Turn]) -> str:
    """Transcript as the judge sees it: chronological, canonical labels."""
    labels = {DEBATER1: "Debater 1", DEBATER2: "Debater 2"}
    return "\n".join(f"{labels[t.speaker]}: {t.text}" for t in turns)


def _transcript_id(question_id: str, s1_id: str, s2_id: str, cfg: DebateConfig) -> str:
    return f"{question_id}|{s1_id}|{s2_id}|{cfg.config_code}"


def run_debate(
    question: DebateQuestion,
    strategy1,
    strategy2,
    cfg: DebateConfig,
    gateway: LlmGateway,
) -> DebateTranscript:
    """Run one debate and return the judged transcript.

    The debaters receive the full article; the judge prompt carries only the
    question, the two stances, and the transcript.
    """
    cfg.validate()
    transcript_id = _transcript_id(question.id, strategy1.id, strategy2.id, cfg)
    stances = {
        DEBATER1: question.correct_answer
        if cfg.assignment == DEBATER1
        else question.incorrect_answer,
        DEBATER2: question.incorrect_answer
        if cfg.assignment == DEBATER1
        else question.correct_answer,
    }
    strategies = {DEBATER1: strategy1, DEBATER2: strategy2}
    second = DEBATER2 if cfg.first_speaker == DEBATER1 else DEBATER1
    speaking_order = (cfg.first_speaker, second)

    turns: list[Turn] = []
    try:
        for round_index in range(1, cfg.rounds + 1):
            for speaker in speaking_order:
                opponent = DEBATER2 if speaker == DEBATER1 else DEBATER1
                history = egocentric_view(turns, viewer=speaker)
                prompt = render_template(
                    "debater",
                    debater_id="1" if speaker == DEBATER1 else "2",
                    question=question.question_text,
                    pov=stances[speaker],
                    interlocutor_pov=stances[opponent],
                    article=question.article_text,
                    strategy=strategies[speaker].text,
                    debate_history=history if history else EMPTY_HISTORY_SENTINEL,
                )
                request = CompletionRequest(
                    messages=(("user", prompt),),
                    max_tokens=DEBATER_MAX_TOKENS,
                    temperature=DEBATER_TEMPERATURE,
                    request_kind="debater",
                )
                response = gateway.complete(request)
                if not response.text.strip():
                    logger.warning(
                        "empty argument in %s round %d from %s",
                        transcript_id,
                        round_index,
                        speaker,
                    )
                text, truncated = truncate_words(
                    response.text, cfg.word_limit_per_argument
                )
                turns.append(Turn(round_index, speaker, text, truncated))

        judge_prompt = render_template(
            "judge",
            question=question.question_text,
            answer_1=stances[DEBATER1],
            answer_2=stances[DEBATER2],
            debate_text=judge_view(turns),
        )
        judge_request = CompletionRequest(
            messages=(("user", judge_prompt),),
            max_tokens=JUDGE_MAX_TOKENS,
            temperature=0.0,
            guided_choice=JUDGE_CHOICES,
            logprob_count=JUDGE_LOGPROB_COUNT,
            request_kind="judge",
        )
        winner_number, p1, _ = gateway.judge_decision(judge_request)
    except GatewayError as exc:
        raise DebateError(f"debate {transcript_id} failed: {exc}") from exc

    p_correct = p1 if cfg.assignment == DEBATER1 else 1.0 - p1
    transcript = DebateTranscript(
        transcript_id=transcript_id,
        question_id=question.id,
        strategy1_id=strategy1.id,
        strategy2_id=strategy2.id,
        config=cfg,
        turns=tuple(turns),
        judge_p_debater1=p1,
        judge_p_correct=p_correct,
        winner=f"debater{winner_number}",
    )
    transcript.validate()
    return transcript


def judge_accuracy_selfplay(
    strategy,
    questions: Sequence[DebateQuestion],
    base_cfg: DebateConfig,
    gateway: LlmGateway,
    transcript_sink: Callable[[DebateTranscript], None] | None = None,
) -> float:
    """Mean judge mass on the correct answer when a strategy debates itself.

    Averages over every question and all four role/order configurations.
    """
    if not questions:
        raise ValueError("judge accuracy requires at least one question")
    total = 0.0
    count = 0
    for question in questions:
        for cfg in four_configurations(base_cfg):
            transcript = run_debate(question, strategy, strategy, cfg, gateway)
            if transcript_sink is not None:
                transcript_sink(transcript)
            total += transcript.judge_p_correct
            count += 1
    return total / count
