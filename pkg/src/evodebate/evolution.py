"""Generational quality-diversity loop over categorized strategy prompts.

Each of 7 behavioral categories holds 5 alive members.  Every generation the
population is rated on the training questions (Swiss tournament in persuasion
mode, exhaustive team evaluation in truth mode), the bottom half of each
category is eliminated by truncation selection (top half for Inept
Persuasion, which evolves to lose), and an LLM mutator refills the census
from the survivors.  StaticGen is the selection-free baseline: the same
mutator sampling from a fixed few-shot bank until the lifetime pool size
matches the evolutionary run.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Sequence

import numpy as np

from .dataset import DebateQuestion
from .debate import DebateConfig, render_template, truncate_words
from .gateway import CompletionRequest, DEBATER_MAX_TOKENS, DEBATER_TEMPERATURE, LlmGateway
from .rating import EloModel, FitConfig, fit
from .tournament import run_swiss_tournament, run_truth_evaluation

logger = logging.getLogger(__name__)

PERSUASION_OBJECTIVE = "persuasion"
TRUTH_OBJECTIVE = "truth"
OBJECTIVES = (PERSUASION_OBJECTIVE, TRUTH_OBJECTIVE)

CATEGORIES = (
    "Rationality",
    "Social Proof",
    "Authority",
    "Liking",
    "Emotional Appeal",
    "Deception",
    "Inept Persuasion",
)
INEPT_CATEGORY = "Inept Persuasion"
CATEGORY_SIZE = 5
CHILD_WORD_LIMIT = 200
MAX_PARSE_RETRIES = 3


class EvolutionError(Exception):
    pass


class MutationParseError(EvolutionError):
    """Mutator output stayed unparseable after retries; carries raw text."""

    def __init__(self, message: str, raw_text: str):
        self.raw_text = raw_text
        super().__init__(f"{message}; raw output: {raw_text[:200]!r}")


def category_slug(category: str) -> str:
    return category.lower().replace(" ", "-")


def load_seed_bank() -> dict[str, dict]:
    """Seed prompts and category descriptions, keyed by category name."""
    raw = (
        resources.files("evodebate.data")
        .joinpath("seed_strategies.json")
        .read_text(encoding="utf-8")
    )
    data = json.loads(raw)
    bank = {}
    for entry in data["categories"]:
        prompts = entry["prompts"]
        if len(prompts) != CATEGORY_SIZE:
            raise EvolutionError(
                f"category {entry['name']!r} must ship {CATEGORY_SIZE} seed prompts"
            )
        bank[entry["name"]] = {
            "title": entry["title"],
            "description": entry["description"],
            "prompts": list(prompts),
        }
    if tuple(bank) != CATEGORIES:
        raise EvolutionError("seed bank categories diverge from the canonical list")
    return bank


@dataclass
class StrategyPrompt:
    id: str
    category: str
    text: str
    generation_born: int = 0
    parent_ids: tuple[str, ...] = ()
    persuasion_rating: float | None = None
    alive: bool = True
    truncated_at_birth: bool = False

    def validate(self) -> None:
        if self.category not in CATEGORIES:
            raise EvolutionError(f"{self.id}: unknown category {self.category!r}")
        if not self.text.strip():
            raise EvolutionError(f"{self.id}: empty strategy text")
        if (self.generation_born > 0) != bool(self.parent_ids):
            raise EvolutionError(
                f"{self.id}: parents must be recorded exactly for generations > 0"
            )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "text": self.text,
            "generation_born": self.generation_born,
            "parent_ids": list(self.parent_ids),
            "persuasion_rating": self.persuasion_rating,
            "alive": self.alive,
            "truncated_at_birth": self.truncated_at_birth,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StrategyPrompt":
        return cls(
            id=data["id"],
            category=data["category"],
            text=data["text"],
            generation_born=data["generation_born"],
            parent_ids=tuple(data.get("parent_ids", ())),
            persuasion_rating=data.get("persuasion_rating"),
            alive=data.get("alive", True),
            truncated_at_birth=data.get("truncated_at_birth", False),
        )


@dataclass
class DebateTeam:
    id: str
    member1: StrategyPrompt
    member2: StrategyPrompt
    truth_rating: float | None = None
    alive: bool = True

    @property
    def category(self) -> str:
        """Lane label; teams are selected within these lanes."""
        return f"{self.member1.category}+{self.member2.category}"

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "member1": self.member1.to_dict(),
            "member2": self.member2.to_dict(),
            "truth_rating": self.truth_rating,
            "alive": self.alive,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DebateTeam":
        return cls(
            id=data["id"],
            member1=StrategyPrompt.from_dict(data["member1"]),
            member2=StrategyPrompt.from_dict(data["member2"]),
            truth_rating=data.get("truth_rating"),
            alive=data.get("alive", True),
        )


@dataclass
class PopulationState:
    objective: str
    generation: int
    strategies: list[StrategyPrompt] = field(default_factory=list)
    teams: list[DebateTeam] = field(default_factory=list)
    selection_log: list[dict] = field(default_factory=list)

    def alive_members(self) -> list:
        pool = self.teams if self.objective == TRUTH_OBJECTIVE else self.strategies
        return [m for m in pool if m.alive]

    def lifetime_members(self) -> list:
        return list(self.teams if self.objective == TRUTH_OBJECTIVE else self.strategies)

    def census(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for member in self.alive_members():
            counts[member.category] = counts.get(member.category, 0) + 1
        return counts

    def validate_census(self) -> None:
        bad = {c: n for c, n in self.census().items() if n != CATEGORY_SIZE}
        if bad:
            raise EvolutionError(f"census off {CATEGORY_SIZE} per category: {bad}")

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "generation": self.generation,
            "strategies": [s.to_dict() for s in self.strategies],
            "teams": [t.to_dict() for t in self.teams],
            "selection_log": self.selection_log,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PopulationState":
        return cls(
            objective=data["objective"],
            generation=data["generation"],
            strategies=[StrategyPrompt.from_dict(s) for s in data.get("strategies", [])],
            teams=[DebateTeam.from_dict(t) for t in data.get("teams", [])],
            selection_log=list(data.get("selection_log", [])),
        )


def seed_strategy_id(category: str, index: int) -> str:
    return f"{category_slug(category)}.g00.k{index}"


def seed_population(objective: str) -> PopulationState:
    """Build generation 0: 35 seed strategies, or 35 rotation-paired teams."""
    if objective not in OBJECTIVES:
        raise EvolutionError(f"unknown objective {objective!r}")
    bank = load_seed_bank()
    if objective == PERSUASION_OBJECTIVE:
        strategies = []
        for category in CATEGORIES:
            for index, text in enumerate(bank[category]["prompts"]):
                strategy = StrategyPrompt(
                    id=seed_strategy_id(category, index),
                    category=category,
                    text=text,
                    generation_born=0,
                )
                strategy.validate()
                strategies.append(strategy)
        return PopulationState(
            objective=objective, generation=0, strategies=strategies
        )

    # Truth teams: category c supplies member 1, category c+1 (mod 7) member 2,
    # same-index seeds paired. Members are fresh copies because they evolve
    # with the team, not with the seed bank.
    teams = []
    for lane_index, category in enumerate(CATEGORIES):
        partner = CATEGORIES[(lane_index + 1) % len(CATEGORIES)]
        lane_slug = f"{category_slug(category)}+{category_slug(partner)}"
        for index in range(CATEGORY_SIZE):
            team_id = f"{lane_slug}.g00.k{index}"
            member1 = StrategyPrompt(
                id=f"{team_id}.m1",
                category=category,
                text=bank[category]["prompts"][index],
                generation_born=0,
            )
            member2 = StrategyPrompt(
                id=f"{team_id}.m2",
                category=partner,
                text=bank[partner]["prompts"][index],
                generation_born=0,
            )
            member1.validate()
            member2.validate()
            teams.append(DebateTeam(id=team_id, member1=member1, member2=member2))
    return PopulationState(objective=objective, generation=0, teams=teams)


def elimination_count(size: int, kill_fraction: float, generation: int) -> int:
    """Members eliminated this generation.

    Fractional counts alternate: odd generations round up, even round down,
    so a 5-member category at 50% loses 3,2,3,2,... and a 20-generation run
    creates exactly 385 lifetime strategies.
    """
    raw = size * kill_fraction
    return math.ceil(raw) if generation % 2 == 1 else math.floor(raw)


def lifetime_strategy_count(
    generations: int,
    kill_fraction: float = 0.5,
    category_size: int = CATEGORY_SIZE,
    n_categories: int = len(CATEGORIES),
) -> int:
    total = n_categories * category_size
    for generation in range(1, generations + 1):
        total += n_categories * elimination_count(
            category_size, kill_fraction, generation
        )
    return total


def _is_reverse_category(category: str) -> bool:
    # Truth lanes are labeled "cat1+cat2"; reverse selection follows member 1.
    return category.split("+")[0] == INEPT_CATEGORY


def select(
    members: Sequence,
    ratings: dict[str, float],
    generation: int,
    kill_fraction: float = 0.5,
) -> tuple[list, list]:
    """Per-category truncation selection; Inept categories select in reverse.

    Ties at the cut eliminate the member with the larger id.  Returns
    (survivors, eliminated) preserving input order within each list.
    """
    unrated = [m.id for m in members if m.id not in ratings]
    if unrated:
        raise EvolutionError(f"unrated members: {unrated}")
    groups: dict[str, list] = {}
    for member in members:
        groups.setdefault(member.category, []).append(member)

    eliminated_ids: set[str] = set()
    for category, group in groups.items():
        k = elimination_count(len(group), kill_fraction, generation)
        by_id_desc = sorted(group, key=lambda m: m.id, reverse=True)
        if _is_reverse_category(category):
            order = sorted(by_id_desc, key=lambda m: -ratings[m.id])
        else:
            order = sorted(by_id_desc, key=lambda m: ratings[m.id])
        eliminated_ids.update(m.id for m in order[:k])

    survivors = [m for m in members if m.id not in eliminated_ids]
    eliminated = [m for m in members if m.id in eliminated_ids]
    return survivors, eliminated


def _parse_mutator_payload(raw: str, keys: Sequence[str]) -> dict:
    start = raw.find("{")
    end = raw.rfind("}")
    if start < 0 or end <= start:
        raise MutationParseError("no JSON object in mutator output", raw)
    try:
        data = json.loads(raw[start : end + 1])
    except json.JSONDecodeError as exc:
        raise MutationParseError(f"mutator JSON does not parse ({exc.msg})", raw)
    if not isinstance(data, dict):
        raise MutationParseError("mutator JSON is not an object", raw)
    for key in keys:
        value = data.get(key)
        if not isinstance(value, str) or not value.strip():
            raise MutationParseError(f"mutator JSON missing text for {key!r}", raw)
    return data


def _mutation_completion(
    gateway: LlmGateway, prompt: str, nonce: str, keys: Sequence[str]
) -> dict:
    """One mutation call with up to MAX_PARSE_RETRIES re-asks on bad JSON."""
    last_error: MutationParseError | None = None
    for attempt in range(MAX_PARSE_RETRIES + 1):
        attempt_nonce = nonce if attempt == 0 else f"{nonce}:r{attempt}"
        request = CompletionRequest(
            messages=(("user", prompt),),
            max_tokens=DEBATER_MAX_TOKENS,
            temperature=DEBATER_TEMPERATURE,
            request_kind="mutator",
            nonce=attempt_nonce,
        )
        response = gateway.complete(request)
        try:
            return _parse_mutator_payload(response.text, keys)
        except MutationParseError as exc:
            last_error = exc
            logger.warning("mutation parse retry %d for nonce %s", attempt + 1, nonce)
    assert last_error is not None
    raise last_error


def _child_text(payload: dict, key: str, child_id: str) -> tuple[str, bool]:
    text, truncated = truncate_words(payload[key].strip(), CHILD_WORD_LIMIT)
    if truncated:
        logger.warning("child %s exceeded %d words; truncated", child_id, CHILD_WORD_LIMIT)
    return text, truncated


def mutate_strategies(
    survivors: Sequence[StrategyPrompt],
    category: str,
    count: int,
    gateway: LlmGateway,
    generation: int,
    nonce_prefix: str = "",
    seed_bank: dict | None = None,
) -> list[StrategyPrompt]:
    """Generate `count` children of a category from its survivors."""
    if not survivors:
        raise EvolutionError(f"no survivors to mutate in {category}")
    bank = seed_bank or load_seed_bank()
    inspiration = "\n".join(f"- {s.text}" for s in survivors)
    prompt = render_template(
        "mutator_persuasion",
        cat=category,
        category_description=bank[category]["description"],
        inspiration_prompts=inspiration,
    )
    slug = category_slug(category)
    children = []
    for index in range(count):
        child_id = f"{slug}.g{generation:02d}.k{index}"
        nonce = f"{nonce_prefix}:{slug}:{index}"
        payload = _mutation_completion(
            gateway, prompt, nonce, keys=("new_debater_prompt",)
        )
        text, truncated = _child_text(payload, "new_debater_prompt", child_id)
        child = StrategyPrompt(
            id=child_id,
            category=category,
            text=text,
            generation_born=generation,
            parent_ids=tuple(s.id for s in survivors),
            truncated_at_birth=truncated,
        )
        child.validate()
        children.append(child)
    return children


def mutate_teams(
    survivors: Sequence[DebateTeam],
    count: int,
    gateway: LlmGateway,
    generation: int,
    nonce_prefix: str = "",
) -> list[DebateTeam]:
    """Generate `count` child teams for one lane from its surviving teams."""
    if not survivors:
        raise EvolutionError("no surviving teams to mutate")
    cat1 = survivors[0].member1.category
    cat2 = survivors[0].member2.category
    prompt = render_template(
        "mutator_truth",
        cat1=cat1,
        cat2=cat2,
        inspiration_prompt1="\n".join(f"- {t.member1.text}" for t in survivors),
        inspiration_prompt2="\n".join(f"- {t.member2.text}" for t in survivors),
    )
    lane_slug = f"{category_slug(cat1)}+{category_slug(cat2)}"
    children = []
    for index in range(count):
        team_id = f"{lane_slug}.g{generation:02d}.k{index}"
        nonce = f"{nonce_prefix}:{lane_slug}:{index}"
        payload = _mutation_completion(
            gateway,
            prompt,
            nonce,
            keys=("new_debater_1_prompt", "new_debater_2_prompt"),
        )
        text1, trunc1 = _child_text(payload, "new_debater_1_prompt", f"{team_id}.m1")
        text2, trunc2 = _child_text(payload, "new_debater_2_prompt", f"{team_id}.m2")
        member1 = StrategyPrompt(
            id=f"{team_id}.m1",
            category=cat1,
            text=text1,
            generation_born=generation,
            parent_ids=tuple(t.member1.id for t in survivors),
            truncated_at_birth=trunc1,
        )
        member2 = StrategyPrompt(
            id=f"{team_id}.m2",
            category=cat2,
            text=text2,
            generation_born=generation,
            parent_ids=tuple(t.member2.id for t in survivors),
            truncated_at_birth=trunc2,
        )
        member1.validate()
        member2.validate()
        children.append(DebateTeam(id=team_id, member1=member1, member2=member2))
    return children


# ---------------------------------------------------------------------------
# Generational loop


@dataclass(frozen=True)
class EvolveSettings:
    objective: str = PERSUASION_OBJECTIVE
    generations: int = 20
    kill_fraction: float = 0.5
    debate: DebateConfig = field(default_factory=DebateConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    parallelism: int = 1

    def validate(self) -> None:
        if self.objective not in OBJECTIVES:
            raise EvolutionError(f"unknown objective {self.objective!r}")
        if self.generations < 0:
            raise EvolutionError("generations must be >= 0")
        if not 0.0 < self.kill_fraction < 1.0:
            raise EvolutionError("kill_fraction must be in (0,1)")
        self.debate.validate()
        self.fit.validate()


class MemoryStore:
    """In-memory experiment store; the experiment module persists to disk."""

    def __init__(self):
        self.states: dict[int, PopulationState] = {}
        self.models: dict[int, EloModel] = {}
        self.transcripts: dict[int, list] = {}
        self.records: dict[int, list] = {}

    def latest_generation(self) -> int:
        return max(self.states) if self.states else -1

    def load_state(self, generation: int) -> PopulationState:
        return PopulationState.from_dict(self.states[generation].to_dict())

    def save_state(self, state: PopulationState) -> None:
        self.states[state.generation] = PopulationState.from_dict(state.to_dict())

    def save_rating_model(self, generation: int, model: EloModel) -> None:
        self.models[generation] = model

    def transcript_sink(self, generation: int) -> Callable:
        bucket = self.transcripts.setdefault(generation, [])
        bucket.clear()
        return bucket.append

    def record_sink(self, generation: int) -> Callable:
        bucket = self.records.setdefault(generation, [])
        bucket.clear()

        def sink(round_index: int, round_records) -> None:
            bucket.extend(round_records)

        return sink


def run_generation(
    state: PopulationState,
    generation: int,
    settings: EvolveSettings,
    questions: Sequence[DebateQuestion],
    gateway: LlmGateway,
    store,
) -> PopulationState:
    """One tournament → fit → select → mutate cycle ending at `generation`."""
    alive = state.alive_members()
    state.validate_census()
    transcript_sink = store.transcript_sink(generation)
    record_sink = store.record_sink(generation)

    if state.objective == PERSUASION_OBJECTIVE:
        records = run_swiss_tournament(
            alive,
            questions,
            settings.debate,
            gateway,
            parallelism=settings.parallelism,
            transcript_sink=transcript_sink,
            record_sink=record_sink,
        )
        mode = "persuasion"
    else:
        records = run_truth_evaluation(
            alive,
            questions,
            settings.debate,
            gateway,
            parallelism=settings.parallelism,
            transcript_sink=transcript_sink,
            record_sink=record_sink,
        )
        mode = "truth"

    observations = [
        (r.participant_a, r.participant_b, r.aggregate_score_a) for r in records
    ]
    model = fit(observations, mode, settings.fit)
    store.save_rating_model(generation, model)
    for member in alive:
        if state.objective == PERSUASION_OBJECTIVE:
            member.persuasion_rating = model.ratings[member.id]
        else:
            member.truth_rating = model.ratings[member.id]

    survivors, eliminated = select(
        alive, model.ratings, generation=generation, kill_fraction=settings.kill_fraction
    )
    for member in eliminated:
        member.alive = False

    survivor_groups: dict[str, list] = {}
    for member in survivors:
        survivor_groups.setdefault(member.category, []).append(member)
    eliminated_counts: dict[str, int] = {}
    for member in eliminated:
        eliminated_counts[member.category] = (
            eliminated_counts.get(member.category, 0) + 1
        )

    nonce_prefix = f"g{generation:02d}"
    children: list = []
    bank = load_seed_bank() if state.objective == PERSUASION_OBJECTIVE else None
    for category in sorted(survivor_groups):
        need = eliminated_counts.get(category, 0)
        if need == 0:
            continue
        if state.objective == PERSUASION_OBJECTIVE:
            children.extend(
                mutate_strategies(
                    survivor_groups[category],
                    category,
                    need,
                    gateway,
                    generation,
                    nonce_prefix=nonce_prefix,
                    seed_bank=bank,
                )
            )
        else:
            children.extend(
                mutate_teams(
                    survivor_groups[category],
                    need,
                    gateway,
                    generation,
                    nonce_prefix=nonce_prefix,
                )
            )

    if state.objective == PERSUASION_OBJECTIVE:
        state.strategies.extend(children)
    else:
        state.teams.extend(children)
    state.generation = generation
    state.selection_log.append(
        {
            "generation": generation,
            "eliminated": sorted(m.id for m in eliminated),
            "survivors": sorted(m.id for m in survivors),
            "children": sorted(c.id for c in children),
            "converged_epoch": model.converged_epoch,
        }
    )
    state.validate_census()
    store.save_state(state)
    logger.info(
        "generation %d: %d eliminated, %d children",
        generation,
        len(eliminated),
        len(children),
    )
    return state


def evolve(
    settings: EvolveSettings,
    questions: Sequence[DebateQuestion],
    gateway: LlmGateway,
    store=None,
    stop_after: int | None = None,
) -> PopulationState:
    """Run (or resume) the generational loop up to settings.generations.

    Resumption continues from the store's latest persisted generation; the
    response cache replays any work the interrupted generation had finished.
    """
    settings.validate()
    store = store if store is not None else MemoryStore()
    start = store.latest_generation()
    if start < 0:
        state = seed_population(settings.objective)
        store.save_state(state)
    else:
        state = store.load_state(start)
        if state.objective != settings.objective:
            raise EvolutionError(
                f"stored objective {state.objective!r} != {settings.objective!r}"
            )
    last = settings.generations
    if stop_after is not None:
        last = min(last, stop_after)
    for generation in range(state.generation + 1, last + 1):
        state = run_generation(state, generation, settings, questions, gateway, store)
    return state


# ---------------------------------------------------------------------------
# StaticGen baseline


def staticgen_pool(
    gateway: LlmGateway,
    target_total: int,
    seed: int,
    nonce_prefix: str = "static",
) -> list[StrategyPrompt]:
    """Selection-free baseline pool matching the evolutionary lifetime count.

    Three exemplar seeds per category are drawn once per run and serve as the
    fixed few-shot inspirations; generated strategies never feed back in.
    Category quotas split the target evenly, earlier categories absorbing the
    remainder.
    """
    if target_total < 1:
        raise EvolutionError("target_total must be positive")
    bank = load_seed_bank()
    rng = np.random.default_rng(seed)
    base = target_total // len(CATEGORIES)
    remainder = target_total % len(CATEGORIES)

    pool: list[StrategyPrompt] = []
    for lane_index, category in enumerate(CATEGORIES):
        exemplar_indices = sorted(
            int(i) for i in rng.choice(CATEGORY_SIZE, size=3, replace=False)
        )
        exemplar_texts = [bank[category]["prompts"][i] for i in exemplar_indices]
        exemplar_ids = tuple(seed_strategy_id(category, i) for i in exemplar_indices)
        prompt = render_template(
            "mutator_persuasion",
            cat=category,
            category_description=bank[category]["description"],
            inspiration_prompts="\n".join(f"- {t}" for t in exemplar_texts),
        )
        quota = base + (1 if lane_index < remainder else 0)
        slug = category_slug(category)
        for index in range(quota):
            child_id = f"{slug}.static.k{index:03d}"
            payload = _mutation_completion(
                gateway,
                prompt,
                nonce=f"{nonce_prefix}:{slug}:{index}",
                keys=("new_debater_prompt",),
            )
            text, truncated = _child_text(payload, "new_debater_prompt", child_id)
            child = StrategyPrompt(
                id=child_id,
                category=category,
                text=text,
                generation_born=1,
                parent_ids=exemplar_ids,
                truncated_at_birth=truncated,
            )
            child.validate()
            pool.append(child)
    return pool
