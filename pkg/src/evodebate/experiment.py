"""Experiment configuration and orchestration.

An experiment lives in one directory: the config snapshot is written before
any computation, every state file carries the code version and config hash,
and a lock file enforces a single writer.  Re-running a command never redoes
cached LLM calls or completed generations, so a config snapshot plus the
response cache reproduces a run bit-for-bit.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import __version__
from .analysis import (
    BOOTSTRAP_ITERATIONS,
    PANEL_SIZE,
    ElitePanel,
    build_elite_panel,
    embedding_diversity,
    bootstrap_gap_difference,
    export_report,
)
from .dataset import (
    QuestionSet,
    build_question_set,
    read_question_set,
    write_question_set,
)
from .debate import DebateConfig
from .evolution import (
    EvolveSettings,
    OBJECTIVES,
    PopulationState,
    evolve,
    lifetime_strategy_count,
    staticgen_pool,
    StrategyPrompt,
)
from .gateway import (
    HttpBackend,
    LlmGateway,
    ResponseCache,
    SyntheticBackend,
    SyntheticParams,
    canonical_json,
)
from .layout import ExperimentDirectory, read_json, write_json_atomic
from .rating import EloModel, FitConfig, anchored

logger = logging.getLogger(__name__)

ENV_ENDPOINT = "EVODEBATE_ENDPOINT"
ENV_MODEL = "EVODEBATE_MODEL"
ENV_EMBED_MODEL = "EVODEBATE_EMBED_MODEL"
ENV_API_KEY = "EVODEBATE_API_KEY"


class ConfigError(Exception):
    pass


class ConfigMismatchError(ConfigError):
    """Resume attempted with a config that differs from the snapshot."""


class MissingInputError(Exception):
    """Required files are absent; message enumerates them."""


def derive_seed(master_seed: int, label: str) -> int:
    """Stable 63-bit child seed for a labeled purpose."""
    digest = hashlib.sha256(f"{master_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class BackendSettings:
    kind: str = "synthetic"
    endpoint: str | None = None
    model: str | None = None
    embed_model: str | None = None
    # Synthetic world overrides; rng_seed defaults to a master_seed derivation.
    synthetic: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.kind not in ("synthetic", "http"):
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if self.kind == "http" and (not self.endpoint or not self.model):
            raise ConfigError("http backend requires endpoint and model")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "endpoint": self.endpoint,
            "model": self.model,
            "embed_model": self.embed_model,
            "synthetic": dict(sorted(self.synthetic.items())),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BackendSettings":
        return cls(
            kind=data.get("kind", "synthetic"),
            endpoint=data.get("endpoint"),
            model=data.get("model"),
            embed_model=data.get("embed_model"),
            synthetic=dict(data.get("synthetic", {})),
        )


@dataclass(frozen=True)
class ExperimentConfig:
    objective: str = "persuasion"
    generations: int = 20
    train_size: int = 3
    test_size: int = 3
    train_dataset: str = ""
    test_dataset: str = ""
    backend: BackendSettings = field(default_factory=BackendSettings)
    debate: DebateConfig = field(default_factory=DebateConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    kill_fraction: float = 0.5
    parallelism: int = 1
    cache_enabled: bool = True
    experiment_dir: str = ""
    master_seed: int = 0

    def validate(self, strict_paths: bool = True) -> None:
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.generations < 0:
            raise ConfigError("generations must be >= 0")
        if self.train_size < 1 or self.test_size < 1:
            raise ConfigError("question set sizes must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if not 0.0 < self.kill_fraction < 1.0:
            raise ConfigError("kill_fraction must be in (0,1)")
        if not self.experiment_dir:
            raise ConfigError("experiment_dir is required")
        self.backend.validate()
        self.debate.validate()
        self.fit.validate()
        if strict_paths:
            for label, path in (
                ("train_dataset", self.train_dataset),
                ("test_dataset", self.test_dataset),
            ):
                if not path or not Path(path).is_file():
                    raise ConfigError(f"{label} does not exist: {path!r}")

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "generations": self.generations,
            "train_size": self.train_size,
            "test_size": self.test_size,
            "train_dataset": self.train_dataset,
            "test_dataset": self.test_dataset,
            "backend": self.backend.to_dict(),
            "debate": self.debate.to_dict(),
            "fit": self.fit.to_dict(),
            "kill_fraction": self.kill_fraction,
            "parallelism": self.parallelism,
            "cache_enabled": self.cache_enabled,
            "experiment_dir": self.experiment_dir,
            "master_seed": self.master_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return cls(
            objective=data.get("objective", "persuasion"),
            generations=data.get("generations", 20),
            train_size=data.get("train_size", 3),
            test_size=data.get("test_size", 3),
            train_dataset=data.get("train_dataset", ""),
            test_dataset=data.get("test_dataset", ""),
            backend=BackendSettings.from_dict(data.get("backend", {})),
            debate=DebateConfig.from_dict(
                {**DebateConfig().to_dict(), **data.get("debate", {})}
            ),
            fit=FitConfig.from_dict({**FitConfig().to_dict(), **data.get("fit", {})}),
            kill_fraction=data.get("kill_fraction", 0.5),
            parallelism=data.get("parallelism", 1),
            cache_enabled=data.get("cache_enabled", True),
            experiment_dir=data.get("experiment_dir", ""),
            master_seed=data.get("master_seed", 0),
        )


def config_hash(cfg: ExperimentConfig) -> str:
    """Hash of semantic config fields.

    The experiment directory and dataset source paths are excluded: the
    directory is the identity holder and question content is pinned by the
    canonical question files written inside it.
    """
    payload = cfg.to_dict()
    for key in ("experiment_dir", "train_dataset", "test_dataset"):
        payload.pop(key, None)
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a config file; relative paths resolve against its directory."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
    cfg = ExperimentConfig.from_dict(data)

    base = path.parent
    def resolve(p: str) -> str:
        return str((base / p).resolve()) if p and not Path(p).is_absolute() else p

    cfg = replace(
        cfg,
        train_dataset=resolve(cfg.train_dataset),
        test_dataset=resolve(cfg.test_dataset),
        experiment_dir=resolve(cfg.experiment_dir),
    )

    backend = cfg.backend
    endpoint = os.environ.get(ENV_ENDPOINT)
    model = os.environ.get(ENV_MODEL)
    embed_model = os.environ.get(ENV_EMBED_MODEL)
    if endpoint or model or embed_model:
        backend = replace(
            backend,
            endpoint=endpoint or backend.endpoint,
            model=model or backend.model,
            embed_model=embed_model or backend.embed_model,
        )
        cfg = replace(cfg, backend=backend)
    return cfg


def build_gateway(cfg: ExperimentConfig, directory: ExperimentDirectory) -> LlmGateway:
    if cfg.backend.kind == "synthetic":
        params = dict(cfg.backend.synthetic)
        params.setdefault("rng_seed", derive_seed(cfg.master_seed, "synthetic-backend"))
        backend = SyntheticBackend(SyntheticParams.from_dict(params))
    else:
        backend = HttpBackend(
            base_url=cfg.backend.endpoint,
            model=cfg.backend.model,
            embed_model=cfg.backend.embed_model,
            api_key=os.environ.get(ENV_API_KEY),
        )
    cache = ResponseCache(directory.cache_path) if cfg.cache_enabled else None
    return LlmGateway(backend, cache=cache, parallelism=cfg.parallelism)


def snapshot_or_verify_config(
    directory: ExperimentDirectory, cfg: ExperimentConfig
) -> str:
    """Write the config snapshot on first run; verify the hash on resume."""
    digest = config_hash(cfg)
    if directory.config_path.is_file():
        stored = read_json(directory.config_path)
        if stored.get("config_hash") != digest:
            raise ConfigMismatchError(
                f"experiment dir {directory.root} was created with config hash "
                f"{stored.get('config_hash')}, current config hashes to {digest}; "
                "refusing to resume"
            )
        return digest
    write_json_atomic(
        directory.config_path,
        {"code_version": __version__, "config_hash": digest, "config": cfg.to_dict()},
    )
    return digest


def prepare_questions(
    cfg: ExperimentConfig, directory: ExperimentDirectory
) -> tuple[QuestionSet, QuestionSet]:
    """Materialize canonical question sets inside the experiment directory.

    Existing canonical files win (runs stay reproducible without the source
    corpus); otherwise the QuALITY sources are filtered and the result is
    persisted.
    """
    sets = []
    for split, source, size in (
        ("train", cfg.train_dataset, cfg.train_size),
        ("test", cfg.test_dataset, cfg.test_size),
    ):
        canonical = directory.question_path(split)
        if canonical.is_file():
            sets.append(read_question_set(canonical))
            continue
        if not source or not Path(source).is_file():
            raise MissingInputError(
                f"{split} dataset not found: {source!r} "
                f"(and no canonical {canonical})"
            )
        question_set = build_question_set(
            source, split, size, seed=derive_seed(cfg.master_seed, f"dataset-{split}")
        )
        write_question_set(question_set, canonical)
        sets.append(question_set)
    return sets[0], sets[1]


class DirStore:
    """Evolution store persisting to an experiment directory."""

    def __init__(
        self,
        directory: ExperimentDirectory,
        digest: str,
        fit_config: FitConfig,
    ):
        self.directory = directory
        self.digest = digest
        self.fit_config = fit_config
        self._writers = []

    def _meta(self) -> dict:
        return {"code_version": __version__, "config_hash": self.digest}

    def latest_generation(self) -> int:
        if self.directory.checkpoint_path.is_file():
            checkpoint = read_json(self.directory.checkpoint_path)
            if checkpoint.get("config_hash") != self.digest:
                raise ConfigMismatchError(
                    "checkpoint belongs to a different config hash"
                )
            return int(checkpoint["latest_generation"])
        generations = self.directory.list_state_generations()
        return generations[-1] if generations else -1

    def load_state(self, generation: int) -> PopulationState:
        payload = read_json(self.directory.state_path(generation))
        return PopulationState.from_dict(payload["state"])

    def save_state(self, state: PopulationState) -> None:
        write_json_atomic(
            self.directory.state_path(state.generation),
            {**self._meta(), "state": state.to_dict()},
        )
        write_json_atomic(
            self.directory.checkpoint_path,
            {**self._meta(), "latest_generation": state.generation},
        )

    def save_rating_model(self, generation: int, model: EloModel) -> None:
        write_json_atomic(
            self.directory.ratings_path(generation),
            {
                **self._meta(),
                "model": model.to_dict(),
                "fit_config": self.fit_config.to_dict(),
            },
        )

    def transcript_sink(self, generation: int):
        writer, sink = self.directory.transcript_writer(generation)
        self._writers.append(writer)
        return sink

    def record_sink(self, generation: int):
        writer, sink = self.directory.match_writer(generation)
        self._writers.append(writer)
        return sink

    def close(self) -> None:
        for writer in self._writers:
            writer.close()
        self._writers.clear()


def _load_snapshot_config(directory: ExperimentDirectory) -> ExperimentConfig:
    if not directory.config_path.is_file():
        raise MissingInputError(f"no config snapshot at {directory.config_path}")
    return ExperimentConfig.from_dict(read_json(directory.config_path)["config"])


def run_evolve(cfg: ExperimentConfig, stop_after: int | None = None) -> dict:
    """Run or resume the evolutionary loop; returns a summary dict."""
    cfg.validate(strict_paths=False)
    directory = ExperimentDirectory(cfg.experiment_dir)
    directory.ensure_layout()
    with directory.lock():
        digest = snapshot_or_verify_config(directory, cfg)
        train, _ = prepare_questions(cfg, directory)
        gateway = build_gateway(cfg, directory)
        store = DirStore(directory, digest, cfg.fit)
        settings = EvolveSettings(
            objective=cfg.objective,
            generations=cfg.generations,
            kill_fraction=cfg.kill_fraction,
            debate=cfg.debate,
            fit=cfg.fit,
            parallelism=cfg.parallelism,
        )
        try:
            state = evolve(
                settings, train.questions, gateway, store, stop_after=stop_after
            )
        finally:
            store.close()
            if gateway.cache is not None:
                gateway.cache.close()
    return {
        "experiment_dir": str(directory.root),
        "objective": cfg.objective,
        "generation": state.generation,
        "lifetime_members": len(state.lifetime_members()),
        "alive_members": len(state.alive_members()),
        "config_hash": digest,
    }


def run_staticgen(cfg: ExperimentConfig) -> dict:
    """Generate the StaticGen pool sized to match the evolutionary lifetime."""
    cfg.validate(strict_paths=False)
    directory = ExperimentDirectory(cfg.experiment_dir)
    directory.ensure_layout()
    with directory.lock():
        digest = snapshot_or_verify_config(directory, cfg)
        target = lifetime_strategy_count(cfg.generations, cfg.kill_fraction)
        if directory.staticgen_pool_path.is_file():
            payload = read_json(directory.staticgen_pool_path)
            pool_size = len(payload["pool"])
        else:
            gateway = build_gateway(cfg, directory)
            try:
                pool = staticgen_pool(
                    gateway, target, seed=derive_seed(cfg.master_seed, "staticgen")
                )
            finally:
                if gateway.cache is not None:
                    gateway.cache.close()
            write_json_atomic(
                directory.staticgen_pool_path,
                {
                    **{"code_version": __version__, "config_hash": digest},
                    "target_total": target,
                    "pool": [s.to_dict() for s in pool],
                },
            )
            pool_size = len(pool)
    return {
        "experiment_dir": str(directory.root),
        "target_total": target,
        "pool_size": pool_size,
        "config_hash": digest,
    }


def _final_rated_members(directory: ExperimentDirectory):
    generations = directory.list_state_generations()
    if not generations:
        raise MissingInputError(f"no generation states in {directory.root}")
    final_generation = generations[-1]
    state = PopulationState.from_dict(
        read_json(directory.state_path(final_generation))["state"]
    )
    ratings_path = directory.ratings_path(final_generation)
    if not ratings_path.is_file():
        raise MissingInputError(f"no fitted ratings at {ratings_path}")
    model = EloModel.from_dict(read_json(ratings_path)["model"])
    members = [m for m in state.lifetime_members() if m.id in model.ratings]
    return state, anchored(model), members


def ensure_panel(
    experiment_root: str | Path, panel_size: int = PANEL_SIZE
) -> ElitePanel:
    """Load the persisted elite panel, building and persisting it if absent."""
    directory = ExperimentDirectory(experiment_root)
    if directory.panel_path.is_file():
        return ElitePanel.from_dict(read_json(directory.panel_path))
    cfg = _load_snapshot_config(directory)
    state, model, members = _final_rated_members(directory)
    train = read_question_set(directory.question_path("train"))
    test = read_question_set(directory.question_path("test"))
    gateway = build_gateway(cfg, directory)
    try:
        panel = build_elite_panel(
            members,
            model.ratings,
            train.questions,
            test.questions,
            cfg.debate,
            gateway,
            objective=state.objective,
            panel_size=panel_size,
            parallelism=cfg.parallelism,
        )
    finally:
        if gateway.cache is not None:
            gateway.cache.close()
    write_json_atomic(directory.panel_path, panel.to_dict())
    return panel


def run_evaluate(
    dir_a: str | Path,
    dir_b: str | Path,
    iterations: int = BOOTSTRAP_ITERATIONS,
    seed: int | None = None,
    paired: bool = False,
    panel_size: int = PANEL_SIZE,
) -> dict:
    """Build both elite panels and bootstrap the gap difference (a minus b)."""
    panel_a = ensure_panel(dir_a, panel_size)
    panel_b = ensure_panel(dir_b, panel_size)
    if seed is None:
        label = f"{Path(dir_a).name}:{Path(dir_b).name}:{iterations}"
        seed = derive_seed(0, f"bootstrap:{label}")
    result = bootstrap_gap_difference(
        panel_a.gaps, panel_b.gaps, iterations=iterations, seed=seed, paired=paired
    )
    comparison = {
        "label_a": Path(dir_a).name,
        "label_b": Path(dir_b).name,
        "objective_a": panel_a.objective,
        "objective_b": panel_b.objective,
        "result": result.to_dict(),
    }
    for root in (dir_a, dir_b):
        write_json_atomic(
            ExperimentDirectory(root).gap_comparison_path, comparison
        )
    return comparison


def _diversity_texts(directory: ExperimentDirectory) -> tuple[list[str], str]:
    """Lifetime strategy texts of a run (or its StaticGen pool)."""
    if directory.staticgen_pool_path.is_file():
        payload = read_json(directory.staticgen_pool_path)
        pool = [StrategyPrompt.from_dict(s) for s in payload["pool"]]
        return [s.text for s in pool], f"{directory.root.name}:staticgen"
    generations = directory.list_state_generations()
    if not generations:
        raise MissingInputError(
            f"{directory.root}: neither staticgen pool nor generation states"
        )
    state = PopulationState.from_dict(
        read_json(directory.state_path(generations[-1]))["state"]
    )
    if state.objective == "truth":
        texts = []
        for team in state.teams:
            texts.extend((team.member1.text, team.member2.text))
    else:
        texts = [s.text for s in state.strategies]
    return texts, f"{directory.root.name}:{state.objective}"


def run_diversity(roots: list[str | Path]) -> dict:
    """Embedding diversity per experiment dir, plus a ratio when two given."""
    entries = []
    for root in roots:
        directory = ExperimentDirectory(root)
        cfg = _load_snapshot_config(directory)
        texts, label = _diversity_texts(directory)
        gateway = build_gateway(cfg, directory)
        try:
            score = embedding_diversity(texts, gateway)
        finally:
            if gateway.cache is not None:
                gateway.cache.close()
        entries.append(
            {"root": str(directory.root), "label": label, "score": score,
             "n_texts": len(texts)}
        )
    payload: dict = {"scores": [
        {"label": e["label"], "score": e["score"], "n_texts": e["n_texts"]}
        for e in entries
    ]}
    if len(entries) == 2 and entries[1]["score"] != 0:
        payload["ratio"] = entries[0]["score"] / entries[1]["score"]
    for entry in entries:
        write_json_atomic(
            ExperimentDirectory(entry["root"]).diversity_path, payload
        )
    return payload


def run_report(experiment_root: str | Path) -> dict:
    return export_report(experiment_root)
