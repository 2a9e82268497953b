import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_question, marker_strategy, marker_team, synthetic_gateway
from evodebate.debate import DebateConfig
from evodebate.tournament import (
    MatchRecord,
    TournamentError,
    final_standings,
    run_persuasion_match,
    run_swiss_tournament,
    run_truth_evaluation,
    swiss_pairings,
    swiss_rounds,
)

SIGMA_08 = 0.6899744811276125  # 1 / (1 + e^-0.8)


def record_kwargs(**overrides):
    base = dict(
        participant_a="a",
        participant_b="b",
        per_config_scores=(0.6, 0.6, 0.6, 0.6),
        aggregate_score_a=0.6,
        points_a=1,
        points_b=0,
        round_index=1,
        transcript_refs=("t1", "t2", "t3", "t4"),
    )
    base.update(overrides)
    return base


def test_match_record_validates_score_range():
    with pytest.raises(TournamentError, match=r"out of \[0,1\]"):
        MatchRecord(**record_kwargs(per_config_scores=(1.2, 0.5, 0.5, 0.5))).validate()


def test_match_record_requires_single_point():
    with pytest.raises(TournamentError, match="point"):
        MatchRecord(**record_kwargs(points_a=1, points_b=1)).validate()


def test_match_record_aggregate_must_be_config_mean():
    with pytest.raises(TournamentError, match="mean"):
        MatchRecord(**record_kwargs(aggregate_score_a=0.7)).validate()


def test_swiss_rounds_table():
    assert [swiss_rounds(n) for n in (2, 3, 4, 5, 8, 9, 16, 17, 35)] == [
        1, 2, 2, 3, 3, 4, 4, 5, 6,
    ]
    with pytest.raises(TournamentError):
        swiss_rounds(1)


def test_swiss_pairings_adjacent_without_history():
    pairs, bye = swiss_pairings(["a", "b", "c", "d"], set())
    assert pairs == [("a", "b", False), ("c", "d", False)]
    assert bye is None


def test_swiss_pairings_skip_played_opponents():
    played = {frozenset(("a", "b"))}
    pairs, bye = swiss_pairings(["a", "b", "c", "d"], played)
    assert pairs == [("a", "c", False), ("b", "d", False)]
    assert bye is None


def test_swiss_pairings_flag_forced_repeats():
    played = {frozenset(("a", "b"))}
    pairs, bye = swiss_pairings(["a", "b"], played)
    assert pairs == [("a", "b", True)]
    assert bye is None


def test_swiss_pairings_bye_goes_to_lowest_rank():
    pairs, bye = swiss_pairings(["a", "b", "c", "d", "e"], set())
    assert bye == "e"
    assert pairs == [("a", "b", False), ("c", "d", False)]


@settings(max_examples=60)
@given(
    n=st.integers(min_value=2, max_value=12),
    seed=st.integers(min_value=0, max_value=10_000),
)
def test_swiss_pairings_partition_property(n, seed):
    import random

    rng = random.Random(seed)
    ranking = [f"p{i}" for i in range(n)]
    all_pairs = [
        frozenset((ranking[i], ranking[j]))
        for i in range(n)
        for j in range(i + 1, n)
    ]
    played = set(rng.sample(all_pairs, k=rng.randint(0, len(all_pairs))))
    pairs, bye = swiss_pairings(ranking, played)
    seen = [p for a, b, _ in pairs for p in (a, b)]
    assert len(seen) == len(set(seen))
    assert (bye is None) == (n % 2 == 0)
    if bye is not None:
        seen.append(bye)
    assert sorted(seen) == sorted(ranking)
    for a, b, repeat in pairs:
        if not repeat:
            assert frozenset((a, b)) not in played


# --- persuasion matches -----------------------------------------------------------


def test_match_aggregate_matches_logistic_oracle():
    gateway = synthetic_gateway()
    questions = [make_question("q1"), make_question("q2")]
    record = run_persuasion_match(
        marker_strategy("a", 1.2), marker_strategy("b", 0.4),
        questions, DebateConfig(rounds=1), gateway,
    )
    assert all(abs(s - SIGMA_08) < 1e-9 for s in record.per_config_scores)
    assert abs(record.aggregate_score_a - SIGMA_08) < 1e-9
    assert (record.points_a, record.points_b) == (1, 0)
    assert len(record.transcript_refs) == 4 * len(questions)
    assert not record.tie_broken
    record.validate()


def test_participant_a_always_fills_debater_one_slot():
    gateway = synthetic_gateway()
    record = run_persuasion_match(
        marker_strategy("zed", 0.2), marker_strategy("amy", 0.8),
        [make_question()], DebateConfig(rounds=1), gateway,
    )
    assert all(ref.split("|")[1] == "zed" for ref in record.transcript_refs)
    codes = [ref.split("|")[3] for ref in record.transcript_refs]
    assert codes == ["c1", "c2", "i1", "i2"]


def test_equal_skills_tie_breaks_to_smaller_id():
    gateway = synthetic_gateway()
    record = run_persuasion_match(
        marker_strategy("mm", 0.5), marker_strategy("aa", 0.5),
        [make_question()], DebateConfig(rounds=1), gateway,
    )
    assert record.tie_broken
    assert abs(record.aggregate_score_a - 0.5) < 1e-12
    assert (record.points_a, record.points_b) == (0, 1)  # "aa" < "mm"


def test_swap_symmetry_single_pair():
    gateway = synthetic_gateway(correct_side_bonus=0.3, judge_temperature=0.7)
    questions = [make_question("q1"), make_question("q2")]
    cfg = DebateConfig(rounds=1)
    a, b = marker_strategy("a", 1.3), marker_strategy("b", 0.2)
    forward = run_persuasion_match(a, b, questions, cfg, gateway)
    backward = run_persuasion_match(b, a, questions, cfg, gateway)
    assert abs(forward.aggregate_score_a + backward.aggregate_score_a - 1.0) < 1e-9


def test_match_rejects_self_play_and_empty_questions():
    gateway = synthetic_gateway()
    a = marker_strategy("a", 0.1)
    with pytest.raises(TournamentError, match="itself"):
        run_persuasion_match(a, a, [make_question()], DebateConfig(), gateway)
    with pytest.raises(TournamentError, match="question"):
        run_persuasion_match(a, marker_strategy("b", 0.2), [], DebateConfig(), gateway)


# --- swiss tournaments ---------------------------------------------------------


def run_small_tournament(n, seed=0):
    gateway = synthetic_gateway(rng_seed=seed)
    participants = [marker_strategy(f"p{i:02d}", 0.3 * i) for i in range(n)]
    records = run_swiss_tournament(
        participants, [make_question()], DebateConfig(rounds=1), gateway
    )
    return participants, records


def test_swiss_structure_on_odd_field():
    participants, records = run_small_tournament(5)
    rounds = sorted({r.round_index for r in records})
    assert rounds == [1, 2, 3]  # ceil(log2 5)
    for round_index in rounds:
        assert sum(r.round_index == round_index for r in records) == 2  # floor(5/2)
    standings = final_standings([p.id for p in participants], records)
    # one bye point per odd round plus one match point per pairing
    assert sum(standings.values()) == 3 * (2 + 1)
    assert max(standings, key=standings.get) == "p04"


def test_swiss_avoids_repeat_pairings():
    _, records = run_small_tournament(8)
    pairs = [frozenset((r.participant_a, r.participant_b)) for r in records
             if not r.repeat_pairing]
    assert len(pairs) == len(set(pairs))


def test_swiss_rejects_duplicate_ids():
    gateway = synthetic_gateway()
    twin = [marker_strategy("same", 0.1), marker_strategy("same", 0.2)]
    with pytest.raises(TournamentError, match="duplicate"):
        run_swiss_tournament(twin, [make_question()], DebateConfig(), gateway)


def test_final_standings_detects_missing_matches():
    participants, records = run_small_tournament(4)
    with pytest.raises(TournamentError, match="without a match"):
        final_standings([p.id for p in participants], records[:-1])


# --- truth evaluation -------------------------------------------------------------


def test_truth_aggregate_matches_team_oracle():
    gateway = synthetic_gateway(correct_side_bonus=0.4)
    team = marker_team("t1", 0.9, 0.3)
    questions = [make_question("q1"), make_question("q2")]
    records = run_truth_evaluation([team], questions, DebateConfig(rounds=1), gateway)
    assert len(records) == 2
    # two configs where member 1 argues gold, two where member 2 does
    d = 0.9 - 0.3
    expected = (
        1 / (1 + math.exp(-(d + 0.4))) + 1 / (1 + math.exp(-(-d + 0.4)))
    ) / 2
    for record in records:
        assert record.mode == "truth"
        assert record.participant_a == "t1"
        assert abs(record.aggregate_score_a - expected) < 1e-9
        assert all(ref.split("|")[1] == "t1.m1" for ref in record.transcript_refs)


def test_truth_evaluation_covers_every_pairing():
    gateway = synthetic_gateway()
    teams = [marker_team(f"t{i}", 0.2 * i, 0.1) for i in range(3)]
    questions = [make_question(f"q{i}") for i in range(2)]
    records = run_truth_evaluation(teams, questions, DebateConfig(rounds=1), gateway)
    assert {(r.participant_a, r.participant_b) for r in records} == {
        (t.id, q.id) for t in teams for q in questions
    }


def test_truth_evaluation_requires_inputs():
    gateway = synthetic_gateway()
    with pytest.raises(TournamentError):
        run_truth_evaluation([], [make_question()], DebateConfig(), gateway)
    with pytest.raises(TournamentError):
        run_truth_evaluation([marker_team("t", 0.1, 0.2)], [], DebateConfig(), gateway)
