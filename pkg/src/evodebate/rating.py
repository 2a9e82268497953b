"""Elo rating fits for both objectives.

Persuasion mode rates strategies against each other from soft match outcomes;
truth mode rates teams against questions from soft accuracies.  Both minimize
mean squared error between the base-10 logistic expectation and the observed
outcome with full-batch Adam.

The cost is translation-invariant (only rating differences matter), so fits
are reported after anchoring the population mean to 400.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

PERSUASION_MODE = "persuasion"
TRUTH_MODE = "truth"
INITIAL_RATING = 400.0

_LN10_OVER_400 = math.log(10.0) / 400.0


class RatingError(Exception):
    pass


def expected_persuasion(r_i, r_j):
    """Expected soft score of rating r_i against r_j (400-point decade rule)."""
    return 1.0 / (1.0 + np.power(10.0, (np.asarray(r_j) - np.asarray(r_i)) / 400.0))


def expected_truth(r_team, r_question):
    """Expected judge accuracy of a team on a question."""
    return 1.0 / (
        1.0 + np.power(10.0, (np.asarray(r_question) - np.asarray(r_team)) / 400.0)
    )


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 10.0
    max_epochs: int = 100
    convergence_epsilon: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    # Adam with lr=10 oscillates before settling; a single small cost delta
    # can fire inside a transient, so convergence requires this many
    # consecutive epochs that each set a new cost minimum while improving
    # by less than convergence_epsilon.
    patience: int = 3

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise RatingError("learning_rate must be positive")
        if self.convergence_epsilon <= 0:
            raise RatingError("convergence_epsilon must be positive")
        if self.max_epochs < 1:
            raise RatingError("max_epochs must be >= 1")
        if self.patience < 1:
            raise RatingError("patience must be >= 1")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "max_epochs": self.max_epochs,
            "convergence_epsilon": self.convergence_epsilon,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_epsilon": self.adam_epsilon,
            "patience": self.patience,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FitConfig":
        return cls(**data)


@dataclass
class EloModel:
    mode: str
    ratings: dict[str, float]
    question_ratings: dict[str, float]
    fit_trace: list[tuple[int, float]]
    converged_epoch: int | None

    def rating_of(self, entity_id: str) -> float:
        if entity_id in self.ratings:
            return self.ratings[entity_id]
        raise RatingError(f"no fitted rating for {entity_id!r}")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "ratings": dict(sorted(self.ratings.items())),
            "question_ratings": dict(sorted(self.question_ratings.items())),
            "fit_trace": [[epoch, cost] for epoch, cost in self.fit_trace],
            "converged_epoch": self.converged_epoch,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EloModel":
        return cls(
            mode=data["mode"],
            ratings=dict(data["ratings"]),
            question_ratings=dict(data.get("question_ratings", {})),
            fit_trace=[(int(e), float(c)) for e, c in data.get("fit_trace", [])],
            converged_epoch=data.get("converged_epoch"),
        )


def fit(
    observations: Sequence[tuple[str, str, float]],
    mode: str,
    cfg: FitConfig | None = None,
) -> EloModel:
    """Fit ratings by full-batch Adam on Cost = mean((E - observed)^2).

    Persuasion observations are (strategy_i, strategy_j, soft score of i);
    truth observations are (team, question, soft accuracy).  All ratings
    start at 400.0.  The fit runs to max_epochs unless the sustained
    convergence rule fires, and returns the parameters of the best epoch.
    """
    cfg = cfg or FitConfig()
    cfg.validate()
    if mode not in (PERSUASION_MODE, TRUTH_MODE):
        raise RatingError(f"unknown mode {mode!r}")
    observations = list(observations)
    if not observations:
        raise RatingError("cannot fit ratings on zero observations")
    for left, right, outcome in observations:
        if not 0.0 <= outcome <= 1.0:
            raise RatingError(
                f"observed outcome for ({left}, {right}) out of [0,1]: {outcome}"
            )

    left_ids = sorted({left for left, _, _ in observations})
    right_ids = sorted({right for _, right, _ in observations})
    if mode == PERSUASION_MODE:
        entity_ids = sorted(set(left_ids) | set(right_ids))
        question_ids: list[str] = []
        position = {pid: k for k, pid in enumerate(entity_ids)}
        left_index = np.array([position[left] for left, _, _ in observations])
        right_index = np.array([position[right] for _, right, _ in observations])
    else:
        entity_ids = left_ids
        question_ids = right_ids
        position = {pid: k for k, pid in enumerate(entity_ids)}
        question_position = {
            qid: len(entity_ids) + k for k, qid in enumerate(question_ids)
        }
        left_index = np.array([position[left] for left, _, _ in observations])
        right_index = np.array(
            [question_position[right] for _, right, _ in observations]
        )

    observed = np.array([outcome for _, _, outcome in observations], dtype=np.float64)
    n_params = len(entity_ids) + len(question_ids)
    params = np.full(n_params, INITIAL_RATING, dtype=np.float64)
    first_moment = np.zeros(n_params)
    second_moment = np.zeros(n_params)

    n_obs = len(observations)
    trace: list[tuple[int, float]] = []
    best_cost = math.inf
    best_params = params.copy()
    converged_epoch: int | None = None
    previous_cost: float | None = None
    quiet_streak = 0

    for epoch in range(1, cfg.max_epochs + 1):
        expected = 1.0 / (
            1.0 + np.power(10.0, (params[right_index] - params[left_index]) / 400.0)
        )
        residual = expected - observed
        cost = float(np.mean(residual**2))
        if not math.isfinite(cost):
            raise RatingError(f"non-finite cost at epoch {epoch}")
        trace.append((epoch, cost))
        if cost < best_cost:
            best_cost = cost
            best_params = params.copy()
        if (
            previous_cost is not None
            and cost <= previous_cost
            and previous_cost - cost < cfg.convergence_epsilon
            and cost <= best_cost
        ):
            quiet_streak += 1
            if quiet_streak >= cfg.patience:
                converged_epoch = epoch
                break
        else:
            quiet_streak = 0
        previous_cost = cost

        per_obs = (2.0 / n_obs) * residual * expected * (1.0 - expected) * _LN10_OVER_400
        gradient = np.zeros(n_params)
        np.add.at(gradient, left_index, per_obs)
        np.add.at(gradient, right_index, -per_obs)

        first_moment = cfg.beta1 * first_moment + (1.0 - cfg.beta1) * gradient
        second_moment = cfg.beta2 * second_moment + (1.0 - cfg.beta2) * gradient**2
        corrected_first = first_moment / (1.0 - cfg.beta1**epoch)
        corrected_second = second_moment / (1.0 - cfg.beta2**epoch)
        params = params - cfg.learning_rate * corrected_first / (
            np.sqrt(corrected_second) + cfg.adam_epsilon
        )

    ratings = {pid: float(best_params[position[pid]]) for pid in entity_ids}
    question_ratings = {}
    if mode == TRUTH_MODE:
        question_ratings = {
            qid: float(best_params[question_position[qid]]) for qid in question_ids
        }
    return EloModel(
        mode=mode,
        ratings=ratings,
        question_ratings=question_ratings,
        fit_trace=trace,
        converged_epoch=converged_epoch,
    )


def anchored(model: EloModel, target: float = INITIAL_RATING) -> EloModel:
    """Shift all ratings so the entity mean sits at ``target``.

    Question ratings move by the same constant, preserving every expected
    outcome (the cost is translation-invariant).
    """
    if not model.ratings:
        raise RatingError("cannot anchor an empty model")
    shift = target - sum(model.ratings.values()) / len(model.ratings)
    return EloModel(
        mode=model.mode,
        ratings={pid: r + shift for pid, r in model.ratings.items()},
        question_ratings={qid: r + shift for qid, r in model.question_ratings.items()},
        fit_trace=list(model.fit_trace),
        converged_epoch=model.converged_epoch,
    )


def category_mean_elo(model: EloModel, population: Iterable) -> dict[str, float]:
    """Arithmetic mean rating per category over the given members."""
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for member in population:
        rating = model.rating_of(member.id)
        sums[member.category] = sums.get(member.category, 0.0) + rating
        counts[member.category] = counts.get(member.category, 0) + 1
    if not sums:
        raise RatingError("population is empty")
    return {category: sums[category] / counts[category] for category in sorted(sums)}
