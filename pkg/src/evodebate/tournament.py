"""Swiss tournaments (persuasion) and exhaustive team evaluation (truth).

A persuasion match plays two strategies against each other under the four
role/order configurations over every question; the aggregate soft score is
the mean judge mass on participant a's answers.  Truth mode has no opponents:
every team debates every question and is scored on judge mass assigned to the
correct answer.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .dataset import DebateQuestion
from .debate import (
    DebateConfig,
    DebateTranscript,
    four_configurations,
    run_debate,
)
from .gateway import LlmGateway, parallel_map

logger = logging.getLogger(__name__)

PERSUASION_MODE = "persuasion"
TRUTH_MODE = "truth"

TranscriptSink = Callable[[DebateTranscript], None]
RecordSink = Callable[[int, Sequence["MatchRecord"]], None]


class TournamentError(Exception):
    pass


@dataclass(frozen=True)
class MatchRecord:
    """Outcome of one four-configuration pairing.

    In persuasion mode ``participant_b`` is the opposing strategy and scores
    favor participant a; in truth mode ``participant_b`` is a question id and
    scores favor the correct answer.
    """

    participant_a: str
    participant_b: str
    per_config_scores: tuple[float, float, float, float]
    aggregate_score_a: float
    points_a: int
    points_b: int
    round_index: int
    transcript_refs: tuple[str, ...]
    mode: str = PERSUASION_MODE
    tie_broken: bool = False
    repeat_pairing: bool = False

    def validate(self) -> None:
        if len(self.per_config_scores) != 4:
            raise TournamentError("expected exactly 4 per-config scores")
        for score in self.per_config_scores:
            if not 0.0 <= score <= 1.0:
                raise TournamentError(f"score {score} out of [0,1]")
        if self.points_a + self.points_b != 1:
            raise TournamentError("match must award exactly one point")
        mean = sum(self.per_config_scores) / 4.0
        if not math.isclose(mean, self.aggregate_score_a, abs_tol=1e-12):
            raise TournamentError("aggregate is not the mean of config scores")

    def to_dict(self) -> dict:
        return {
            "participant_a": self.participant_a,
            "participant_b": self.participant_b,
            "per_config_scores": list(self.per_config_scores),
            "aggregate_score_a": self.aggregate_score_a,
            "points_a": self.points_a,
            "points_b": self.points_b,
            "round_index": self.round_index,
            "transcript_refs": list(self.transcript_refs),
            "mode": self.mode,
            "tie_broken": self.tie_broken,
            "repeat_pairing": self.repeat_pairing,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MatchRecord":
        return cls(
            participant_a=data["participant_a"],
            participant_b=data["participant_b"],
            per_config_scores=tuple(data["per_config_scores"]),
            aggregate_score_a=data["aggregate_score_a"],
            points_a=data["points_a"],
            points_b=data["points_b"],
            round_index=data["round_index"],
            transcript_refs=tuple(data["transcript_refs"]),
            mode=data.get("mode", PERSUASION_MODE),
            tie_broken=data.get("tie_broken", False),
            repeat_pairing=data.get("repeat_pairing", False),
        )


@dataclass
class SwissState:
    standings: dict[str, float]
    played_pairs: set[frozenset]
    round: int
    total_rounds: int
    aggregate_sums: dict[str, float] = field(default_factory=dict)
    byes: list[tuple[int, str]] = field(default_factory=list)

    def ranking(self) -> list[str]:
        return sorted(
            self.standings,
            key=lambda pid: (
                -self.standings[pid],
                -self.aggregate_sums.get(pid, 0.0),
                pid,
            ),
        )


def swiss_rounds(n: int) -> int:
    if n < 2:
        raise TournamentError(f"a tournament needs >= 2 participants, got {n}")
    return math.ceil(math.log2(n))


def swiss_pairings(
    ranking: Sequence[str], played_pairs: set[frozenset]
) -> tuple[list[tuple[str, str, bool]], str | None]:
    """Greedy closest-rank pairing avoiding repeats.

    Returns (pairs, bye). Each pair carries a flag marking a forced repeat
    (no legal opponent existed). With odd counts the leftover lowest-ranked
    participant takes the bye.
    """
    unpaired = list(ranking)
    pairs: list[tuple[str, str, bool]] = []
    while len(unpaired) > 1:
        top = unpaired.pop(0)
        opponent_index = None
        for index, candidate in enumerate(unpaired):
            if frozenset((top, candidate)) not in played_pairs:
                opponent_index = index
                break
        repeat = opponent_index is None
        if repeat:
            opponent_index = 0
        opponent = unpaired.pop(opponent_index)
        pairs.append((top, opponent, repeat))
    bye = unpaired[0] if unpaired else None
    return pairs, bye


def run_persuasion_match(
    strategy_a,
    strategy_b,
    questions: Sequence[DebateQuestion],
    base_cfg: DebateConfig,
    gateway: LlmGateway,
    round_index: int = 0,
    transcript_sink: TranscriptSink | None = None,
    parallelism: int = 1,
) -> MatchRecord:
    """Play the four configurations over every question; a is debater 1."""
    if strategy_a.id == strategy_b.id:
        raise TournamentError(f"{strategy_a.id} cannot play itself")
    if not questions:
        raise TournamentError("a match needs at least one question")

    configurations = four_configurations(base_cfg)
    jobs = [(cfg, q) for cfg in configurations for q in questions]
    transcripts = parallel_map(
        lambda job: run_debate(job[1], strategy_a, strategy_b, job[0], gateway),
        jobs,
        max_workers=parallelism,
    )
    for transcript in transcripts:
        if transcript_sink is not None:
            transcript_sink(transcript)

    n_questions = len(questions)
    per_config = tuple(
        sum(
            t.judge_p_debater1
            for t in transcripts[i * n_questions : (i + 1) * n_questions]
        )
        / n_questions
        for i in range(4)
    )
    aggregate = sum(per_config) / 4.0
    tie = math.isclose(aggregate, 0.5, abs_tol=1e-12)
    if tie:
        a_wins = strategy_a.id < strategy_b.id
    else:
        a_wins = aggregate > 0.5
    record = MatchRecord(
        participant_a=strategy_a.id,
        participant_b=strategy_b.id,
        per_config_scores=per_config,
        aggregate_score_a=aggregate,
        points_a=1 if a_wins else 0,
        points_b=0 if a_wins else 1,
        round_index=round_index,
        transcript_refs=tuple(t.transcript_id for t in transcripts),
        mode=PERSUASION_MODE,
        tie_broken=tie,
    )
    record.validate()
    return record


def run_swiss_tournament(
    strategies: Sequence,
    questions: Sequence[DebateQuestion],
    base_cfg: DebateConfig,
    gateway: LlmGateway,
    parallelism: int = 1,
    transcript_sink: TranscriptSink | None = None,
    record_sink: RecordSink | None = None,
) -> list[MatchRecord]:
    """Swiss tournament over ceil(log2 n) rounds; returns all match records."""
    by_id = {s.id: s for s in strategies}
    if len(by_id) != len(strategies):
        raise TournamentError("duplicate strategy ids in tournament")
    total_rounds = swiss_rounds(len(by_id))
    state = SwissState(
        standings={pid: 0.0 for pid in by_id},
        played_pairs=set(),
        round=0,
        total_rounds=total_rounds,
    )
    records: list[MatchRecord] = []
    for round_index in range(1, total_rounds + 1):
        state.round = round_index
        ranking = state.ranking()
        pairs, bye = swiss_pairings(ranking, state.played_pairs)
        if bye is not None:
            state.standings[bye] += 1.0
            state.byes.append((round_index, bye))
            logger.debug("round %d bye: %s", round_index, bye)
        round_records = []
        for id_a, id_b, repeat in pairs:
            record = run_persuasion_match(
                by_id[id_a],
                by_id[id_b],
                questions,
                base_cfg,
                gateway,
                round_index=round_index,
                transcript_sink=transcript_sink,
                parallelism=parallelism,
            )
            if repeat:
                record = MatchRecord.from_dict({**record.to_dict(), "repeat_pairing": True})
            round_records.append(record)
            state.played_pairs.add(frozenset((id_a, id_b)))
            state.standings[id_a] += record.points_a
            state.standings[id_b] += record.points_b
            state.aggregate_sums[id_a] = (
                state.aggregate_sums.get(id_a, 0.0) + record.aggregate_score_a
            )
            state.aggregate_sums[id_b] = (
                state.aggregate_sums.get(id_b, 0.0) + 1.0 - record.aggregate_score_a
            )
        records.extend(round_records)
        if record_sink is not None:
            record_sink(round_index, round_records)
    return records


def final_standings(
    participant_ids: Sequence[str], records: Sequence[MatchRecord]
) -> dict[str, float]:
    """Recompute Swiss standings from persisted records (byes inferred)."""
    standings = {pid: 0.0 for pid in participant_ids}
    rounds = sorted({r.round_index for r in records})
    for round_index in rounds:
        round_records = [r for r in records if r.round_index == round_index]
        seen: set[str] = set()
        for record in round_records:
            standings[record.participant_a] += record.points_a
            standings[record.participant_b] += record.points_b
            seen.update((record.participant_a, record.participant_b))
        unseen = set(participant_ids) - seen
        # Exactly one unpaired participant per odd-sized round: the bye.
        if len(unseen) == 1:
            standings[unseen.pop()] += 1.0
        elif len(unseen) > 1:
            raise TournamentError(
                f"round {round_index}: {len(unseen)} participants without a match"
            )
    return standings


def run_truth_evaluation(
    teams: Sequence,
    questions: Sequence[DebateQuestion],
    base_cfg: DebateConfig,
    gateway: LlmGateway,
    parallelism: int = 1,
    transcript_sink: TranscriptSink | None = None,
    record_sink: RecordSink | None = None,
) -> list[MatchRecord]:
    """Every team debates every question; scores favor the correct answer.

    The four configurations cross which member argues the correct answer with
    speaking order; member 1 always fills the debater-1 slot.
    """
    if not teams or not questions:
        raise TournamentError("truth evaluation needs teams and questions")
    jobs = [(team, question) for team in teams for question in questions]

    def evaluate(job) -> tuple[MatchRecord, list[DebateTranscript]]:
        team, question = job
        scores = []
        transcripts = []
        for cfg in four_configurations(base_cfg):
            transcript = run_debate(
                question, team.member1, team.member2, cfg, gateway
            )
            transcripts.append(transcript)
            scores.append(transcript.judge_p_correct)
        aggregate = sum(scores) / 4.0
        tie = math.isclose(aggregate, 0.5, abs_tol=1e-12)
        team_point = aggregate > 0.5 or (tie and team.id < question.id)
        record = MatchRecord(
            participant_a=team.id,
            participant_b=question.id,
            per_config_scores=tuple(scores),
            aggregate_score_a=aggregate,
            points_a=1 if team_point else 0,
            points_b=0 if team_point else 1,
            round_index=0,
            transcript_refs=tuple(t.transcript_id for t in transcripts),
            mode=TRUTH_MODE,
            tie_broken=tie,
        )
        record.validate()
        return record, transcripts

    # Sinks run in job order after the parallel phase so persisted artifact
    # bytes do not depend on thread scheduling.
    results = parallel_map(evaluate, jobs, max_workers=parallelism)
    records = []
    for record, transcripts in results:
        if transcript_sink is not None:
            for transcript in transcripts:
                transcript_sink(transcript)
        records.append(record)
    if record_sink is not None:
        record_sink(0, records)
    return records
