"""Evaluation pipeline: elite panels, generalization gaps, bootstrap CIs,
embedding diversity, Elo-accuracy correlation, and report export.

Accuracy everywhere is the soft judge-probability mass on the correct answer,
so generalization gaps (train minus test) compare like with like.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .dataset import DebateQuestion
from .debate import DebateConfig, judge_accuracy_selfplay
from .gateway import LlmGateway
from .layout import ExperimentDirectory, read_json, write_json_atomic
from .rating import EloModel, anchored
from .tournament import run_truth_evaluation

logger = logging.getLogger(__name__)

PANEL_SIZE = 15
BOOTSTRAP_ITERATIONS = 100_000
REPORT_SCHEMA_VERSION = 1


class AnalysisError(Exception):
    pass


class ReportError(AnalysisError):
    """Missing inputs for report export; names every absent file."""


@dataclass(frozen=True)
class PanelEntry:
    id: str
    category: str
    rating: float
    train_accuracy: float
    test_accuracy: float

    @property
    def gap(self) -> float:
        return self.train_accuracy - self.test_accuracy

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "rating": self.rating,
            "train_accuracy": self.train_accuracy,
            "test_accuracy": self.test_accuracy,
            "gap": self.gap,
        }


@dataclass(frozen=True)
class ElitePanel:
    objective: str
    entries: tuple[PanelEntry, ...]
    shortfall: bool

    @property
    def gaps(self) -> list[float]:
        return [entry.gap for entry in self.entries]

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "shortfall": self.shortfall,
            "entries": [entry.to_dict() for entry in self.entries],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ElitePanel":
        entries = tuple(
            PanelEntry(
                id=e["id"],
                category=e["category"],
                rating=e["rating"],
                train_accuracy=e["train_accuracy"],
                test_accuracy=e["test_accuracy"],
            )
            for e in data["entries"]
        )
        return cls(
            objective=data["objective"], entries=entries, shortfall=data["shortfall"]
        )


@dataclass(frozen=True)
class BootstrapResult:
    iterations: int
    mean_difference: float
    ci_low: float
    ci_high: float
    rng_seed: int
    paired: bool

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "mean_difference": self.mean_difference,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "rng_seed": self.rng_seed,
            "paired": self.paired,
        }


def team_accuracy(
    team,
    questions: Sequence[DebateQuestion],
    base_cfg: DebateConfig,
    gateway: LlmGateway,
    parallelism: int = 1,
    transcript_sink: Callable | None = None,
) -> float:
    """Mean judge mass on the correct answer for one team over all questions."""
    records = run_truth_evaluation(
        [team],
        questions,
        base_cfg,
        gateway,
        parallelism=parallelism,
        transcript_sink=transcript_sink,
    )
    return float(np.mean([record.aggregate_score_a for record in records]))


def build_elite_panel(
    members: Sequence,
    ratings: dict[str, float],
    train_questions: Sequence[DebateQuestion],
    test_questions: Sequence[DebateQuestion],
    base_cfg: DebateConfig,
    gateway: LlmGateway,
    objective: str,
    panel_size: int = PANEL_SIZE,
    parallelism: int = 1,
    transcript_sink: Callable | None = None,
) -> ElitePanel:
    """Top-rated members with self-play accuracy on the train and test sets.

    Persuasion entities debate identical copies of themselves; truth entities
    are teams.  A population smaller than the panel is kept whole and flagged.
    """
    rated = [m for m in members if m.id in ratings]
    if not rated:
        raise AnalysisError("no rated members available for the panel")
    ranked = sorted(rated, key=lambda m: (-ratings[m.id], m.id))
    shortfall = len(ranked) < panel_size
    if shortfall:
        logger.warning(
            "panel shortfall: %d members available, %d requested",
            len(ranked),
            panel_size,
        )
    chosen = ranked[:panel_size]

    entries = []
    for member in chosen:
        if objective == "truth":
            train_acc = team_accuracy(
                member, train_questions, base_cfg, gateway,
                parallelism=parallelism, transcript_sink=transcript_sink,
            )
            test_acc = team_accuracy(
                member, test_questions, base_cfg, gateway,
                parallelism=parallelism, transcript_sink=transcript_sink,
            )
        else:
            train_acc = judge_accuracy_selfplay(
                member, train_questions, base_cfg, gateway,
                transcript_sink=transcript_sink,
            )
            test_acc = judge_accuracy_selfplay(
                member, test_questions, base_cfg, gateway,
                transcript_sink=transcript_sink,
            )
        entries.append(
            PanelEntry(
                id=member.id,
                category=member.category,
                rating=ratings[member.id],
                train_accuracy=train_acc,
                test_accuracy=test_acc,
            )
        )
    return ElitePanel(objective=objective, entries=tuple(entries), shortfall=shortfall)


def bootstrap_gap_difference(
    gaps_a: Sequence[float],
    gaps_b: Sequence[float],
    iterations: int = BOOTSTRAP_ITERATIONS,
    seed: int = 0,
    paired: bool = False,
) -> BootstrapResult:
    """Percentile bootstrap CI for mean(gaps_a) - mean(gaps_b).

    Default resamples the two lists independently; paired mode resamples
    index-aligned pairs (requires equal lengths).
    """
    a = np.asarray(gaps_a, dtype=np.float64)
    b = np.asarray(gaps_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise AnalysisError("bootstrap requires nonempty gap lists")
    if iterations < 1:
        raise AnalysisError("iterations must be positive")
    if paired and a.size != b.size:
        raise AnalysisError("paired bootstrap requires equal-length lists")

    rng = np.random.default_rng(seed)
    if paired:
        index = rng.integers(0, a.size, size=(iterations, a.size))
        differences = a[index].mean(axis=1) - b[index].mean(axis=1)
    else:
        index_a = rng.integers(0, a.size, size=(iterations, a.size))
        index_b = rng.integers(0, b.size, size=(iterations, b.size))
        differences = a[index_a].mean(axis=1) - b[index_b].mean(axis=1)
    ci_low, ci_high = np.percentile(differences, [2.5, 97.5])
    return BootstrapResult(
        iterations=iterations,
        mean_difference=float(a.mean() - b.mean()),
        ci_low=float(ci_low),
        ci_high=float(ci_high),
        rng_seed=seed,
        paired=paired,
    )


def embedding_diversity(texts: Sequence[str], gateway: LlmGateway) -> float:
    """Mean pairwise cosine distance (1 - similarity) over unit embeddings."""
    if len(texts) < 2:
        raise AnalysisError("diversity needs at least 2 texts")
    vectors = gateway.embed(list(texts))
    similarities = vectors @ vectors.T
    upper = np.triu_indices(len(texts), k=1)
    return float(np.mean(1.0 - similarities[upper]))


def elo_accuracy_correlation(points) -> float:
    """Pearson correlation between rating and test accuracy."""
    if isinstance(points, ElitePanel):
        pairs = [(e.rating, e.test_accuracy) for e in points.entries]
    else:
        pairs = [(float(x), float(y)) for x, y in points]
    if len(pairs) < 3:
        raise AnalysisError("correlation needs at least 3 points")
    x = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise AnalysisError("correlation undefined under zero variance")
    return float(stats.pearsonr(x, y).statistic)


# ---------------------------------------------------------------------------
# Report export


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return len(rows)


def _category_of_id(member_index: dict[str, str], member_id: str) -> str:
    if member_id not in member_index:
        raise ReportError(f"rating refers to unknown member id {member_id!r}")
    return member_index[member_id]


def _alive_ids_at(state_dict: dict, generation: int) -> set[str]:
    """Who was alive at the start of tournament `generation`."""
    if state_dict["objective"] == "truth":
        # teams carry no birth stamp of their own; both members share one
        pool = state_dict.get("teams", [])
        born_ok = {
            m["id"]
            for m in pool
            if m["member1"]["generation_born"] < generation
        }
    else:
        born_ok = {
            m["id"]
            for m in state_dict.get("strategies", [])
            if m["generation_born"] < generation
        }
    for entry in state_dict.get("selection_log", []):
        if entry["generation"] < generation:
            born_ok -= set(entry["eliminated"])
    return born_ok


def export_report(experiment_root: str | Path) -> dict:
    """Emit the report bundle (CSV tables + summary) for one experiment.

    Always produced when states exist: per-generation category mean Elo and
    per-generation word counts.  Panel, gap-difference, and diversity tables
    appear when the corresponding evaluation artifacts exist; their absence
    is listed as a warning, not an error.  Output is deterministic.
    """
    directory = ExperimentDirectory(experiment_root)
    missing = []
    if not directory.config_path.is_file():
        missing.append(str(directory.config_path))
    generations = directory.list_state_generations()
    if not generations:
        missing.append(str(directory.root / "generations" / "state_g*.json"))
    if missing:
        raise ReportError(f"missing required inputs: {', '.join(missing)}")

    config_snapshot = read_json(directory.config_path)
    final_generation = generations[-1]
    final_state = read_json(directory.state_path(final_generation))["state"]
    objective = final_state["objective"]
    member_key = "teams" if objective == "truth" else "strategies"
    members = final_state.get(member_key, [])

    def member_category(member: dict) -> str:
        if objective == "truth":
            return f"{member['member1']['category']}+{member['member2']['category']}"
        return member["category"]

    member_index = {m["id"]: member_category(m) for m in members}
    member_words = {
        m["id"]: (
            len(m["member1"]["text"].split()) + len(m["member2"]["text"].split())
            if objective == "truth"
            else len(m["text"].split())
        )
        for m in members
    }

    warnings: list[str] = []
    tables: dict[str, int] = {}
    reports = directory.reports_dir
    reports.mkdir(parents=True, exist_ok=True)

    # Table 1: per-generation per-category mean Elo (gauge anchored to 400).
    elo_rows = []
    for generation in generations:
        ratings_path = directory.ratings_path(generation)
        if not ratings_path.is_file():
            if generation > 0:
                warnings.append(f"no ratings file for generation {generation}")
            continue
        model = anchored(EloModel.from_dict(read_json(ratings_path)["model"]))
        sums: dict[str, list[float]] = {}
        for member_id, rating in model.ratings.items():
            sums.setdefault(_category_of_id(member_index, member_id), []).append(rating)
        for category in sorted(sums):
            values = sums[category]
            elo_rows.append(
                (generation, category, float(np.mean(values)), len(values))
            )
    tables["elo_by_category.csv"] = _write_csv(
        reports / "elo_by_category.csv",
        ("generation", "category", "mean_elo", "n_members"),
        elo_rows,
    )

    # Table 2: per-generation per-category mean word counts (alive members).
    word_rows = []
    for generation in generations:
        alive = _alive_ids_at(final_state, generation + 1)
        counts: dict[str, list[int]] = {}
        for member_id in alive:
            counts.setdefault(_category_of_id(member_index, member_id), []).append(
                member_words[member_id]
            )
        for category in sorted(counts):
            values = counts[category]
            word_rows.append(
                (generation, category, float(np.mean(values)), len(values))
            )
    tables["word_counts.csv"] = _write_csv(
        reports / "word_counts.csv",
        ("generation", "category", "mean_words", "n_members"),
        word_rows,
    )

    # Table 3: Elo vs accuracy points from the elite panel.
    panel = None
    if directory.panel_path.is_file():
        panel = ElitePanel.from_dict(read_json(directory.panel_path))
        panel_rows = [
            (
                e.id,
                e.category,
                e.rating,
                e.train_accuracy,
                e.test_accuracy,
                e.gap,
            )
            for e in panel.entries
        ]
        tables["elo_vs_accuracy.csv"] = _write_csv(
            reports / "elo_vs_accuracy.csv",
            ("id", "category", "rating", "train_accuracy", "test_accuracy", "gap"),
            panel_rows,
        )
    else:
        warnings.append("no elite panel (run evaluate)")

    # Table 4: gap-difference comparison.
    if directory.gap_comparison_path.is_file():
        comparison = read_json(directory.gap_comparison_path)
        tables["gap_difference.csv"] = _write_csv(
            reports / "gap_difference.csv",
            (
                "label_a",
                "label_b",
                "mean_difference",
                "ci_low",
                "ci_high",
                "iterations",
                "rng_seed",
                "paired",
            ),
            [
                (
                    comparison["label_a"],
                    comparison["label_b"],
                    float(comparison["result"]["mean_difference"]),
                    float(comparison["result"]["ci_low"]),
                    float(comparison["result"]["ci_high"]),
                    comparison["result"]["iterations"],
                    comparison["result"]["rng_seed"],
                    comparison["result"]["paired"],
                )
            ],
        )
    else:
        warnings.append("no gap comparison (run evaluate)")

    # Table 5: diversity scores.
    if directory.diversity_path.is_file():
        diversity = read_json(directory.diversity_path)
        rows = [
            (entry["label"], float(entry["score"]), entry["n_texts"])
            for entry in diversity["scores"]
        ]
        if "ratio" in diversity:
            rows.append(("ratio", float(diversity["ratio"]), 0))
        tables["diversity.csv"] = _write_csv(
            reports / "diversity.csv", ("label", "score", "n_texts"), rows
        )
    else:
        warnings.append("no diversity scores (run diversity)")

    summary_lines = [
        f"objective: {objective}",
        f"generations: {final_generation}",
        f"lifetime members: {len(members)}",
        "elo gauge: ratings anchored to population mean 400 per generation",
    ]
    if panel is not None:
        gaps = panel.gaps
        summary_lines.append(
            f"elite panel: {len(panel.entries)} entities, "
            f"mean gap {np.mean(gaps):.6f}"
            + (" (shortfall)" if panel.shortfall else "")
        )
    summary_lines.extend(f"warning: {w}" for w in warnings)
    (reports / "summary.txt").write_text("\n".join(summary_lines) + "\n", "utf-8")

    manifest = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config_hash": config_snapshot.get("config_hash"),
        "tables": tables,
        "warnings": warnings,
    }
    write_json_atomic(reports / "manifest.json", manifest)
    return manifest
