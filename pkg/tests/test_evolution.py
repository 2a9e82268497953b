import json

import pytest

from conftest import make_question, marker_strategy, marker_team, synthetic_gateway
from evodebate.debate import DebateConfig
from evodebate.evolution import (
    CATEGORIES,
    CATEGORY_SIZE,
    EvolutionError,
    EvolveSettings,
    MemoryStore,
    MutationParseError,
    PopulationState,
    StrategyPrompt,
    category_slug,
    elimination_count,
    evolve,
    lifetime_strategy_count,
    load_seed_bank,
    mutate_strategies,
    mutate_teams,
    run_generation,
    seed_population,
    seed_strategy_id,
    select,
    staticgen_pool,
)
from evodebate.gateway import CompletionResponse, LlmGateway


def fast_settings(objective="persuasion", generations=2):
    return EvolveSettings(
        objective=objective,
        generations=generations,
        debate=DebateConfig(rounds=1),
    )


# ---------------------------------------------------------------------------
# Seeding


def test_seed_bank_covers_every_category():
    bank = load_seed_bank()
    assert tuple(bank) == CATEGORIES
    for entry in bank.values():
        assert len(entry["prompts"]) == CATEGORY_SIZE
        assert entry["description"].strip()


def test_seed_population_census():
    state = seed_population("persuasion")
    assert len(state.strategies) == 35
    assert state.census() == {category: 5 for category in CATEGORIES}
    assert state.generation == 0
    for strategy in state.strategies:
        assert strategy.generation_born == 0
        assert strategy.parent_ids == ()
    assert state.strategies[0].id == seed_strategy_id("Rationality", 0)
    assert state.strategies[0].id == "rationality.g00.k0"


def test_seed_teams_pair_adjacent_categories():
    state = seed_population("truth")
    assert len(state.teams) == 35
    bank = load_seed_bank()
    for lane_index, category in enumerate(CATEGORIES):
        partner = CATEGORIES[(lane_index + 1) % len(CATEGORIES)]
        lane = [t for t in state.teams if t.member1.category == category]
        assert len(lane) == 5
        for index, team in enumerate(lane):
            assert team.member2.category == partner
            assert team.category == f"{category}+{partner}"
            slug = f"{category_slug(category)}+{category_slug(partner)}"
            assert team.id == f"{slug}.g00.k{index}"
            assert team.member1.id == f"{team.id}.m1"
            assert team.member2.id == f"{team.id}.m2"
            # same-index seed prompts travel together
            assert team.member1.text == bank[category]["prompts"][index]
            assert team.member2.text == bank[partner]["prompts"][index]


def test_last_lane_wraps_to_first_category():
    state = seed_population("truth")
    assert any(t.category == "Inept Persuasion+Rationality" for t in state.teams)


def test_seed_population_rejects_unknown_objective():
    with pytest.raises(EvolutionError, match="objective"):
        seed_population("both")


def test_strategy_parent_bookkeeping_is_enforced():
    with pytest.raises(EvolutionError, match="parents"):
        StrategyPrompt(id="x", category="Liking", text="t", generation_born=3).validate()
    with pytest.raises(EvolutionError, match="parents"):
        StrategyPrompt(
            id="x", category="Liking", text="t", generation_born=0, parent_ids=("p",)
        ).validate()


# ---------------------------------------------------------------------------
# Elimination schedule


def test_elimination_count_alternates_rounding():
    assert elimination_count(5, 0.5, 1) == 3
    assert elimination_count(5, 0.5, 2) == 2
    assert elimination_count(5, 0.5, 3) == 3
    assert elimination_count(4, 0.5, 1) == 2
    assert elimination_count(4, 0.5, 2) == 2


def test_lifetime_counts():
    assert lifetime_strategy_count(0) == 35
    assert lifetime_strategy_count(1) == 56
    assert lifetime_strategy_count(2) == 70
    assert lifetime_strategy_count(20) == 385


# ---------------------------------------------------------------------------
# Selection


def test_select_eliminates_lowest_rated():
    members = [marker_strategy(f"r{k}", 0.0) for k in range(5)]
    ratings = {"r0": 500.0, "r1": 450.0, "r2": 400.0, "r3": 350.0, "r4": 300.0}
    survivors, eliminated = select(members, ratings, generation=1)
    assert [m.id for m in survivors] == ["r0", "r1"]
    assert [m.id for m in eliminated] == ["r2", "r3", "r4"]


def test_select_even_generation_keeps_three():
    members = [marker_strategy(f"r{k}", 0.0) for k in range(5)]
    ratings = {f"r{k}": 500.0 - 50.0 * k for k in range(5)}
    survivors, eliminated = select(members, ratings, generation=2)
    assert [m.id for m in survivors] == ["r0", "r1", "r2"]
    assert len(eliminated) == 2


def test_select_reverses_for_inept_persuasion():
    members = [
        marker_strategy(f"i{k}", 0.0, category="Inept Persuasion") for k in range(5)
    ]
    ratings = {f"i{k}": 500.0 - 50.0 * k for k in range(5)}
    survivors, _ = select(members, ratings, generation=1)
    # evolving to lose: the highest-rated members are culled
    assert [m.id for m in survivors] == ["i3", "i4"]


def test_select_tie_at_cut_drops_larger_id():
    members = [marker_strategy("r.a", 0.0), marker_strategy("r.b", 0.0)]
    survivors, eliminated = select(members, {"r.a": 400.0, "r.b": 400.0}, generation=1)
    assert [m.id for m in survivors] == ["r.a"]
    assert [m.id for m in eliminated] == ["r.b"]


def test_select_tie_rule_holds_in_reverse_lanes():
    members = [
        marker_team("lane.a", 0.0, 0.0, cat1="Inept Persuasion", cat2="Rationality"),
        marker_team("lane.b", 0.0, 0.0, cat1="Inept Persuasion", cat2="Rationality"),
    ]
    survivors, eliminated = select(
        members, {"lane.a": 400.0, "lane.b": 400.0}, generation=1
    )
    assert [m.id for m in survivors] == ["lane.a"]
    assert [m.id for m in eliminated] == ["lane.b"]


def test_select_requires_a_rating_for_everyone():
    members = [marker_strategy("r0", 0.0), marker_strategy("r1", 0.0)]
    with pytest.raises(EvolutionError, match="unrated.*r1"):
        select(members, {"r0": 400.0}, generation=1)


# ---------------------------------------------------------------------------
# Mutation


def test_mutate_strategies_children_average_parent_skill():
    gateway = synthetic_gateway(mutation_noise=0.0)
    survivors = [marker_strategy("s1", 1.0), marker_strategy("s2", 2.0)]
    children = mutate_strategies(
        survivors, "Rationality", 3, gateway, generation=4, nonce_prefix="g04"
    )
    assert [c.id for c in children] == [
        "rationality.g04.k0", "rationality.g04.k1", "rationality.g04.k2",
    ]
    for child in children:
        assert child.category == "Rationality"
        assert child.generation_born == 4
        assert child.parent_ids == ("s1", "s2")
        assert not child.truncated_at_birth
        assert gateway.backend.skill_of(child.text) == 1.5
        child.validate()


def test_mutate_teams_children_inherit_lanewise():
    gateway = synthetic_gateway(mutation_noise=0.0)
    survivors = [marker_team("t1", 0.5, 1.5), marker_team("t2", 1.5, 2.5)]
    children = mutate_teams(survivors, 2, gateway, generation=7, nonce_prefix="g07")
    assert [c.id for c in children] == [
        "rationality+social-proof.g07.k0", "rationality+social-proof.g07.k1",
    ]
    for child in children:
        assert child.member1.category == "Rationality"
        assert child.member2.category == "Social Proof"
        assert child.member1.id == f"{child.id}.m1"
        assert child.member1.parent_ids == ("t1.m1", "t2.m1")
        assert child.member2.parent_ids == ("t1.m2", "t2.m2")
        assert gateway.backend.skill_of(child.member1.text) == 1.0
        assert gateway.backend.skill_of(child.member2.text) == 2.0


def test_mutation_noise_perturbs_child_skill():
    gateway = synthetic_gateway(mutation_noise=0.25)
    survivors = [marker_strategy("s1", 1.0), marker_strategy("s2", 2.0)]
    children = mutate_strategies(survivors, "Liking", 4, gateway, generation=1)
    skills = [gateway.backend.skill_of(c.text) for c in children]
    assert len(set(skills)) == 4  # per-child rng streams differ
    for skill in skills:
        assert abs(skill - 1.5) < 1.5  # 6 sigma


def test_mutation_retries_malformed_json():
    gateway = synthetic_gateway()
    survivors = [marker_strategy("s1", 1.0, extra="[malform=2]")]
    children = mutate_strategies(survivors, "Rationality", 1, gateway, generation=1)
    assert len(children) == 1
    assert children[0].text.strip()


def test_mutation_gives_up_after_retry_budget():
    gateway = synthetic_gateway()
    survivors = [marker_strategy("s1", 1.0, extra="[malform=4]")]
    with pytest.raises(MutationParseError, match="no JSON object") as info:
        mutate_strategies(survivors, "Rationality", 1, gateway, generation=1)
    assert "rambles" in info.value.raw_text


class _LongMutatorBackend:
    backend_id = "long-mutator"

    def complete(self, req):
        text = json.dumps({"new_debater_prompt": " ".join(["word"] * 250)})
        return CompletionResponse(text=text, backend_id=self.backend_id)


def test_oversized_children_are_truncated_to_200_words():
    gateway = LlmGateway(_LongMutatorBackend())
    children = mutate_strategies(
        [marker_strategy("s1", 1.0)], "Rationality", 1, gateway, generation=1
    )
    assert len(children[0].text.split()) == 200
    assert children[0].truncated_at_birth is True


def test_mutation_requires_survivors():
    with pytest.raises(EvolutionError, match="survivors"):
        mutate_strategies([], "Rationality", 1, synthetic_gateway(), generation=1)


# ---------------------------------------------------------------------------
# Generational loop


def test_run_generation_restores_census_and_logs_selection():
    settings = fast_settings()
    store = MemoryStore()
    state = seed_population("persuasion")
    store.save_state(state)
    questions = [make_question()]
    gateway = synthetic_gateway()
    state = run_generation(state, 1, settings, questions, gateway, store)

    assert state.generation == 1
    assert state.census() == {category: 5 for category in CATEGORIES}
    assert len(state.lifetime_members()) == lifetime_strategy_count(1)
    assert len(state.selection_log) == 1
    entry = state.selection_log[0]
    assert entry["generation"] == 1
    assert len(entry["eliminated"]) == 21
    assert len(entry["children"]) == 21
    assert len(entry["survivors"]) == 14
    assert set(entry["eliminated"]) | set(entry["survivors"]) == {
        s.id for s in state.strategies if s.generation_born == 0
    }
    # every child is alive; every eliminated member is flagged dead
    by_id = {s.id: s for s in state.strategies}
    assert all(by_id[cid].alive for cid in entry["children"])
    assert all(not by_id[mid].alive for mid in entry["eliminated"])
    assert 1 in store.models and 1 in store.states
    assert len(store.records[1]) > 0


def test_truth_generation_keeps_lane_census():
    settings = fast_settings(objective="truth", generations=1)
    store = MemoryStore()
    state = seed_population("truth")
    store.save_state(state)
    state = run_generation(
        state, 1, settings, [make_question()], synthetic_gateway(), store
    )
    census = state.census()
    assert len(census) == 7 and set(census.values()) == {5}
    evaluated = [team for team in state.teams if ".g00." in team.id]
    assert len(evaluated) == 35
    assert all(team.truth_rating is not None for team in evaluated)
    assert len(state.teams) == 35 + 21


def test_evolve_resume_matches_single_run():
    questions = [make_question()]
    settings = fast_settings(generations=2)

    straight = evolve(settings, questions, synthetic_gateway(), store=MemoryStore())

    store = MemoryStore()
    evolve(settings, questions, synthetic_gateway(), store=store, stop_after=1)
    resumed = evolve(settings, questions, synthetic_gateway(), store=store)

    assert resumed.to_dict() == straight.to_dict()
    assert resumed.generation == 2
    assert len(resumed.lifetime_members()) == lifetime_strategy_count(2)


def test_evolve_rejects_objective_switch_on_resume():
    store = MemoryStore()
    store.save_state(seed_population("truth"))
    with pytest.raises(EvolutionError, match="objective"):
        evolve(fast_settings(generations=1), [make_question()],
               synthetic_gateway(), store=store)


def test_census_validation_catches_short_categories():
    state = seed_population("persuasion")
    state.strategies[0].alive = False
    with pytest.raises(EvolutionError, match="census"):
        state.validate_census()


def test_population_state_round_trip():
    state = seed_population("truth")
    clone = PopulationState.from_dict(state.to_dict())
    assert clone.to_dict() == state.to_dict()


# ---------------------------------------------------------------------------
# StaticGen baseline


def test_staticgen_matches_lifetime_pool_size():
    gateway = synthetic_gateway()
    pool = staticgen_pool(gateway, 385, seed=3)
    assert len(pool) == 385
    per_category = {}
    for child in pool:
        per_category[child.category] = per_category.get(child.category, 0) + 1
    assert per_category == {category: 55 for category in CATEGORIES}
    assert pool[0].id == "rationality.static.k000"
    for child in pool:
        assert child.generation_born == 1
        assert len(child.parent_ids) == 3
        for pid in child.parent_ids:
            assert ".g00.k" in pid  # exemplars come from the seed bank
        child.validate()


def test_staticgen_quota_remainder_goes_to_early_categories():
    pool = staticgen_pool(synthetic_gateway(), 10, seed=0)
    counts = [sum(1 for c in pool if c.category == category) for category in CATEGORIES]
    assert counts == [2, 2, 2, 1, 1, 1, 1]


def test_staticgen_exemplars_are_seed_dependent():
    first = staticgen_pool(synthetic_gateway(), 7, seed=1)
    second = staticgen_pool(synthetic_gateway(), 7, seed=2)
    assert [c.parent_ids for c in first] != [c.parent_ids for c in second]


def test_staticgen_rejects_empty_target():
    with pytest.raises(EvolutionError, match="positive"):
        staticgen_pool(synthetic_gateway(), 0, seed=0)
