"""Experiment directory layout and atomic, canonical persistence helpers.

One directory is the unit of provenance: config snapshot first, then question
sets, per-generation population states, transcripts, match records, rating
fits, the response cache, evaluation artifacts, and exported reports.  All
JSON is written with sorted keys through an atomic rename so reruns of
completed work are byte-identical.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Callable, Iterator

from filelock import FileLock

STATE_PREFIX = "state_g"


def write_json_atomic(path: Path, payload: dict) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_name(path.name + ".tmp")
    with tmp_path.open("w", encoding="utf-8") as handle:
        handle.write(text)
        handle.flush()
        os.fsync(handle.fileno())
    os.replace(tmp_path, path)


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


class JsonlWriter:
    """Thread-safe append-only JSONL sink, truncated on open."""

    def __init__(self, path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        self._handle = path.open("w", encoding="utf-8")
        self._lock = threading.Lock()

    def write(self, payload: dict) -> None:
        line = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        with self._lock:
            self._handle.write(line + "\n")
            self._handle.flush()

    def close(self) -> None:
        with self._lock:
            self._handle.close()


def read_jsonl(path: Path) -> Iterator[dict]:
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                yield json.loads(line)


class ExperimentDirectory:
    """Paths within one experiment directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    # --- fixed files -------------------------------------------------------
    @property
    def config_path(self) -> Path:
        return self.root / "config.json"

    @property
    def checkpoint_path(self) -> Path:
        return self.root / "checkpoint.json"

    @property
    def lock_path(self) -> Path:
        return self.root / "experiment.lock"

    @property
    def cache_path(self) -> Path:
        return self.root / "cache" / "responses.jsonl"

    def question_path(self, split: str) -> Path:
        return self.root / "questions" / f"{split}.json"

    # --- per-generation files ----------------------------------------------
    def state_path(self, generation: int) -> Path:
        return self.root / "generations" / f"{STATE_PREFIX}{generation:03d}.json"

    def ratings_path(self, generation: int) -> Path:
        return self.root / "ratings" / f"gen_{generation:03d}.json"

    def matches_path(self, generation: int) -> Path:
        return self.root / "matches" / f"gen_{generation:03d}.jsonl"

    def transcripts_path(self, generation: int) -> Path:
        return self.root / "transcripts" / f"gen_{generation:03d}.jsonl"

    def list_state_generations(self) -> list[int]:
        directory = self.root / "generations"
        if not directory.is_dir():
            return []
        generations = []
        for entry in directory.glob(f"{STATE_PREFIX}*.json"):
            suffix = entry.stem[len(STATE_PREFIX):]
            if suffix.isdigit():
                generations.append(int(suffix))
        return sorted(generations)

    # --- evaluation and reporting -------------------------------------------
    @property
    def staticgen_pool_path(self) -> Path:
        return self.root / "staticgen" / "pool.json"

    @property
    def staticgen_ratings_path(self) -> Path:
        return self.root / "staticgen" / "ratings.json"

    @property
    def panel_path(self) -> Path:
        return self.root / "evaluation" / "panel.json"

    @property
    def gap_comparison_path(self) -> Path:
        return self.root / "evaluation" / "gap_comparison.json"

    @property
    def diversity_path(self) -> Path:
        return self.root / "evaluation" / "diversity.json"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    def ensure_layout(self) -> None:
        for sub in (
            "",
            "cache",
            "questions",
            "generations",
            "ratings",
            "matches",
            "transcripts",
            "evaluation",
            "reports",
        ):
            (self.root / sub).mkdir(parents=True, exist_ok=True)

    def lock(self) -> FileLock:
        self.root.mkdir(parents=True, exist_ok=True)
        return FileLock(str(self.lock_path))

    def transcript_writer(self, generation: int) -> tuple[JsonlWriter, Callable]:
        writer = JsonlWriter(self.transcripts_path(generation))
        return writer, lambda transcript: writer.write(transcript.to_dict())

    def match_writer(self, generation: int) -> tuple[JsonlWriter, Callable]:
        writer = JsonlWriter(self.matches_path(generation))

        def sink(round_index: int, records) -> None:
            for record in records:
                writer.write(record.to_dict())

        return writer, sink
