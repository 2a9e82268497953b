"""Chat-completion gateway with HTTP, synthetic, and cached backends.

All model traffic flows through :class:`LlmGateway`, which layers a persistent
response cache and a parallelism bound over one of two backends:

* :class:`HttpBackend` speaks the OpenAI-style chat-completions protocol with
  the vLLM ``guided_choice`` extension.
* :class:`SyntheticBackend` is a deterministic stand-in for desk-scale runs:
  strategy texts carry latent skills via ``[skill=x]`` markers (hash-derived
  when absent), the judge scores transcripts with a logistic model over those
  skills, and the mutator averages parent skills plus seeded noise.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import re
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np
import requests
from concurrent.futures import ThreadPoolExecutor

logger = logging.getLogger(__name__)

REQUEST_KINDS = ("debater", "judge", "mutator", "embedder")

JUDGE_CHOICES = ("1", "2")
JUDGE_MAX_TOKENS = 1
JUDGE_LOGPROB_COUNT = 5
JUDGE_TOP_LOGPROBS = 10
DEBATER_MAX_TOKENS = 32000
DEBATER_TEMPERATURE = 1.0


class GatewayError(Exception):
    """Base class for gateway failures."""


class ProtocolError(GatewayError):
    """The backend returned something violating the completion contract."""


class BackendUnreachableError(GatewayError):
    """The HTTP endpoint stayed unreachable after bounded retries."""


class CacheCorruptionError(GatewayError):
    """A cache record failed its checksum or interior parse."""


@dataclass(frozen=True)
class CompletionRequest:
    """One chat-completion call.

    ``nonce`` is a cache-key salt that never reaches the HTTP body; it keeps
    deliberately repeated requests (e.g. several mutation children from the
    same prompt) distinct in the cache.
    """

    messages: tuple[tuple[str, str], ...]
    max_tokens: int
    request_kind: str
    temperature: float = 0.0
    guided_choice: tuple[str, ...] | None = None
    logprob_count: int | None = None
    nonce: str = ""

    def validate(self) -> None:
        if not self.messages:
            raise ProtocolError("request has no messages")
        if self.request_kind not in REQUEST_KINDS:
            raise ProtocolError(f"unknown request kind {self.request_kind!r}")
        if self.max_tokens < 1:
            raise ProtocolError(f"max_tokens must be positive, got {self.max_tokens}")
        if self.temperature < 0:
            raise ProtocolError(f"temperature must be non-negative, got {self.temperature}")
        if self.guided_choice is not None and not self.guided_choice:
            raise ProtocolError("guided_choice present but empty")
        if self.request_kind == "judge":
            if self.guided_choice != JUDGE_CHOICES:
                raise ProtocolError(
                    f"judge requests must offer choices {JUDGE_CHOICES}, "
                    f"got {self.guided_choice}"
                )
            if self.max_tokens != JUDGE_MAX_TOKENS:
                raise ProtocolError("judge requests must use max_tokens=1")

    @property
    def prompt_text(self) -> str:
        return "\n".join(text for _, text in self.messages)


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    backend_id: str
    choice_logprobs: dict[str, float] | None = None
    usage: dict[str, int] = field(default_factory=dict)
    cache_hit: bool = False

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "backend_id": self.backend_id,
            "choice_logprobs": self.choice_logprobs,
            "usage": self.usage,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CompletionResponse":
        return cls(
            text=data["text"],
            backend_id=data["backend_id"],
            choice_logprobs=data.get("choice_logprobs"),
            usage=data.get("usage", {}),
        )


def canonical_request_dict(req: CompletionRequest, backend_id: str) -> dict:
    return {
        "backend_id": backend_id,
        "guided_choice": list(req.guided_choice) if req.guided_choice else None,
        "logprob_count": req.logprob_count,
        "max_tokens": req.max_tokens,
        "messages": [[role, text] for role, text in req.messages],
        "nonce": req.nonce,
        "request_kind": req.request_kind,
        "temperature": req.temperature,
    }


def canonical_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def request_key(req: CompletionRequest, backend_id: str) -> str:
    body = canonical_json(canonical_request_dict(req, backend_id))
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


def _word_count(text: str) -> int:
    return len(text.split())


# ---------------------------------------------------------------------------
# HTTP backend


class HttpBackend:
    """OpenAI-style chat-completions client with bounded retry."""

    def __init__(
        self,
        base_url: str,
        model: str,
        embed_model: str | None = None,
        api_key: str | None = None,
        timeout: float = 120.0,
        retry_attempts: int = 5,
        backoff_base: float = 1.0,
        session=None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.embed_model = embed_model or model
        self.api_key = api_key
        self.timeout = timeout
        self.retry_attempts = retry_attempts
        self.backoff_base = backoff_base
        self._session = session if session is not None else requests.Session()

    @property
    def backend_id(self) -> str:
        return f"http:{self.base_url}:{self.model}"

    def build_chat_body(self, req: CompletionRequest) -> dict:
        body: dict = {
            "model": self.model,
            "messages": [
                {"role": role, "content": text} for role, text in req.messages
            ],
        }
        if req.request_kind == "judge":
            body["max_tokens"] = JUDGE_MAX_TOKENS
            body["guided_choice"] = list(req.guided_choice or JUDGE_CHOICES)
            body["logprobs"] = (
                req.logprob_count if req.logprob_count is not None else JUDGE_LOGPROB_COUNT
            )
            body["top_logprobs"] = JUDGE_TOP_LOGPROBS
        else:
            body["temperature"] = req.temperature
            body["logprobs"] = True
            body["max_tokens"] = req.max_tokens
        return body

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _post(self, path: str, body: dict) -> dict:
        url = f"{self.base_url}{path}"
        last_error: Exception | None = None
        for attempt in range(self.retry_attempts):
            try:
                response = self._session.post(
                    url, json=body, headers=self._headers(), timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
            else:
                if response.status_code == 429 or response.status_code >= 500:
                    last_error = GatewayError(
                        f"HTTP {response.status_code} from {url}"
                    )
                elif response.status_code >= 400:
                    raise ProtocolError(
                        f"HTTP {response.status_code} from {url}: {response.text[:500]}"
                    )
                else:
                    try:
                        return response.json()
                    except ValueError as exc:
                        raise ProtocolError(f"non-JSON response from {url}") from exc
            if attempt < self.retry_attempts - 1:
                delay = self.backoff_base * (2**attempt) * (1.0 + 0.1 * random.random())
                logger.warning(
                    "retrying %s after %s (attempt %d/%d)",
                    url,
                    last_error,
                    attempt + 1,
                    self.retry_attempts,
                )
                time.sleep(delay)
        raise BackendUnreachableError(
            f"{url} unreachable after {self.retry_attempts} attempts: {last_error}"
        )

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        payload = self._post("/v1/chat/completions", self.build_chat_body(req))
        try:
            choice = payload["choices"][0]
            text = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed completion payload: {exc}") from exc
        choice_logprobs = None
        if req.guided_choice:
            choice_logprobs = self._extract_choice_logprobs(choice, req.guided_choice)
        usage = payload.get("usage") or {}
        return CompletionResponse(
            text=text,
            backend_id=self.backend_id,
            choice_logprobs=choice_logprobs,
            usage={k: int(v) for k, v in usage.items() if isinstance(v, (int, float))},
        )

    @staticmethod
    def _extract_choice_logprobs(
        choice: dict, allowed: Sequence[str]
    ) -> dict[str, float]:
        try:
            entries = choice["logprobs"]["content"][0]["top_logprobs"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError("response missing top_logprobs for guided call") from exc
        table: dict[str, float] = {}
        for entry in entries:
            token = entry.get("token", "")
            for candidate in (token, token.strip()):
                if candidate in allowed and candidate not in table:
                    table[candidate] = float(entry["logprob"])
        missing = [c for c in allowed if c not in table]
        if missing:
            raise ProtocolError(f"logprobs missing for allowed strings {missing}")
        return table

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        payload = self._post(
            "/v1/embeddings", {"model": self.embed_model, "input": list(texts)}
        )
        try:
            rows = sorted(payload["data"], key=lambda item: item["index"])
            vectors = np.array([row["embedding"] for row in rows], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed embedding payload: {exc}") from exc
        if vectors.ndim != 2 or vectors.shape[0] != len(texts):
            raise ProtocolError("embedding batch size mismatch")
        return _normalize_rows(vectors)


def _normalize_rows(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ProtocolError("zero-norm embedding cannot be normalized")
    return vectors / norms


# ---------------------------------------------------------------------------
# Synthetic backend

SKILL_RE = re.compile(r"\[skill=(-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)\]")
TRUTH_RE = re.compile(r"\[truth=([01])\]")
GOLD_RE = re.compile(r"\[gold=(.*?)\]")
EMBED_RE = re.compile(r"\[embed=([^\]]+)\]")
MALFORM_RE = re.compile(r"\[malform=(\d+)\]")
RETRY_SUFFIX_RE = re.compile(r":r(\d+)$")

_STRATEGY_RE = re.compile(r"following strategy: '(.*?)'\nDo not exceed", re.DOTALL)
_POV_RE = re.compile(r"Your stance in the debate is: '(.*?)'\n")
_ARTICLE_RE = re.compile(
    r"Here is the reading comprehension article: '(.*?)'\nDon't precise", re.DOTALL
)
_DEBATE_RE = re.compile(r"Here is the debate: '(.*?)'\nGiven the arguments", re.DOTALL)
_CATEGORY_RE = re.compile(r"persuasion strategy: (.*)\ncategory description")
_PERSUASION_INSPIRATION_RE = re.compile(
    r"Take inspiration from the following prompts:\n(.*?)\n\nAnswer structure:",
    re.DOTALL,
)
_TRUTH_BLOCK1_RE = re.compile(
    r"Inspiration for debater 1 of the team \(category \*\*(.*?)\*\*\):\n"
    r"(.*?)\n\nInspiration for debater 2",
    re.DOTALL,
)
_TRUTH_BLOCK2_RE = re.compile(
    r"Inspiration for debater 2 of the team \(category \*\*(.*?)\*\*\):\n"
    r"(.*?)\n\nNow, generate",
    re.DOTALL,
)


@dataclass(frozen=True)
class SyntheticParams:
    """Latent world model behind the synthetic backend.

    The judge gives debater 1 probability sigma((s1-s2)/tau + b*t1 - b*t2)
    where s is latent skill, t flags the debater arguing the marked gold
    answer, tau is ``judge_temperature`` and b is ``correct_side_bonus``.
    """

    rng_seed: int = 0
    judge_temperature: float = 1.0
    correct_side_bonus: float = 0.0
    skill_spread: float = 1.0
    mutation_noise: float = 0.25
    embed_dim: int = 32

    def to_dict(self) -> dict:
        return {
            "rng_seed": self.rng_seed,
            "judge_temperature": self.judge_temperature,
            "correct_side_bonus": self.correct_side_bonus,
            "skill_spread": self.skill_spread,
            "mutation_noise": self.mutation_noise,
            "embed_dim": self.embed_dim,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticParams":
        return cls(**data)


class SyntheticBackend:
    """Deterministic oracle backend understanding the stock prompt templates.

    Every response is a pure function of (params, request): per-request
    randomness is seeded from the request hash, so concurrency and replay
    cannot change outcomes.
    """

    def __init__(self, params: SyntheticParams | None = None):
        self.params = params or SyntheticParams()

    @property
    def backend_id(self) -> str:
        p = self.params
        return (
            f"synthetic:{p.rng_seed}:{p.judge_temperature}:{p.correct_side_bonus}"
            f":{p.skill_spread}:{p.mutation_noise}:{p.embed_dim}"
        )

    # -- latent state ------------------------------------------------------

    def skill_of(self, text: str) -> float:
        match = SKILL_RE.search(text)
        if match:
            return float(match.group(1))
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        unit = int.from_bytes(digest[:8], "big") / 2**64
        return (2.0 * unit - 1.0) * self.params.skill_spread

    def _request_rng(self, req: CompletionRequest, salt: str = "") -> np.random.Generator:
        key = request_key(req, self.backend_id)
        digest = hashlib.sha256(
            f"{self.params.rng_seed}:{salt}:{key}".encode("utf-8")
        ).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "big"))

    # -- completion dispatch -------------------------------------------------

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        prompt = req.prompt_text
        if req.request_kind == "judge":
            text, logprobs = self._judge(prompt)
            return self._response(req, text, choice_logprobs=logprobs)
        if req.request_kind == "debater":
            return self._response(req, self._debater(prompt))
        if req.request_kind == "mutator":
            return self._response(req, self._mutator(prompt, req))
        raise ProtocolError(
            f"synthetic backend cannot complete kind {req.request_kind!r}"
        )

    def _response(
        self,
        req: CompletionRequest,
        text: str,
        choice_logprobs: dict[str, float] | None = None,
    ) -> CompletionResponse:
        prompt_tokens = _word_count(req.prompt_text)
        completion_tokens = _word_count(text)
        return CompletionResponse(
            text=text,
            backend_id=self.backend_id,
            choice_logprobs=choice_logprobs,
            usage={
                "prompt_tokens": prompt_tokens,
                "completion_tokens": completion_tokens,
                "total_tokens": prompt_tokens + completion_tokens,
            },
        )

    # -- judge ---------------------------------------------------------------

    @staticmethod
    def _first_argument(transcript: str, label: str) -> str:
        for line in transcript.splitlines():
            if line.startswith(label):
                return line[len(label):].strip()
        return ""

    def judge_probability(self, argument_1: str, argument_2: str) -> float:
        """Probability that debater 1 wins, from argument markers."""
        s1 = self.skill_of(argument_1) if argument_1 else 0.0
        s2 = self.skill_of(argument_2) if argument_2 else 0.0
        t1 = self._truth_flag(argument_1)
        t2 = self._truth_flag(argument_2)
        z = (s1 - s2) / self.params.judge_temperature
        z += self.params.correct_side_bonus * (t1 - t2)
        return 1.0 / (1.0 + math.exp(-z))

    @staticmethod
    def _truth_flag(argument: str) -> int:
        match = TRUTH_RE.search(argument)
        return int(match.group(1)) if match else 0

    def _judge(self, prompt: str) -> tuple[str, dict[str, float]]:
        match = _DEBATE_RE.search(prompt)
        transcript = match.group(1) if match else ""
        argument_1 = self._first_argument(transcript, "Debater 1:")
        argument_2 = self._first_argument(transcript, "Debater 2:")
        p1 = self.judge_probability(argument_1, argument_2)
        p1 = min(max(p1, 1e-12), 1.0 - 1e-12)
        p2 = 1.0 - p1
        text = "1" if p1 >= p2 else "2"
        return text, {"1": math.log(p1), "2": math.log(p2)}

    # -- debater ---------------------------------------------------------------

    def _debater(self, prompt: str) -> str:
        strategy_match = _STRATEGY_RE.search(prompt)
        pov_match = _POV_RE.search(prompt)
        article_match = _ARTICLE_RE.search(prompt)
        strategy = strategy_match.group(1) if strategy_match else prompt
        pov = pov_match.group(1) if pov_match else ""
        skill = self.skill_of(strategy)
        parts = [f"[skill={skill!r}]"]
        if article_match:
            gold = GOLD_RE.search(article_match.group(1))
            if gold:
                truth = 1 if pov == gold.group(1) else 0
                parts.append(f"[truth={truth}]")
        parts.append(f"My position stands: '{pov}'.")
        return " ".join(parts)

    # -- mutator ---------------------------------------------------------------

    @staticmethod
    def _bullet_texts(block: str) -> list[str]:
        texts = []
        for line in block.splitlines():
            line = line.strip()
            if line.startswith("- "):
                texts.append(line[2:])
        return texts

    @staticmethod
    def _attempt_index(req: CompletionRequest) -> int:
        match = RETRY_SUFFIX_RE.search(req.nonce)
        return int(match.group(1)) if match else 0

    def _mutator(self, prompt: str, req: CompletionRequest) -> str:
        malform = MALFORM_RE.search(prompt)
        if malform and self._attempt_index(req) < int(malform.group(1)):
            return "the mutator rambles { without closing structure"
        if "Inspiration for debater 1 of the team" in prompt:
            return self._truth_mutation(prompt, req)
        return self._persuasion_mutation(prompt, req)

    def _child_skill(
        self, parents: list[str], rng: np.random.Generator
    ) -> float:
        skills = [self.skill_of(p) for p in parents] or [0.0]
        noise = float(rng.normal(0.0, self.params.mutation_noise))
        return float(np.mean(skills)) + noise

    def _persuasion_mutation(self, prompt: str, req: CompletionRequest) -> str:
        block = _PERSUASION_INSPIRATION_RE.search(prompt)
        parents = self._bullet_texts(block.group(1)) if block else []
        category_match = _CATEGORY_RE.search(prompt)
        category = category_match.group(1) if category_match else "general"
        skill = self._child_skill(parents, self._request_rng(req, "mutate"))
        child = (
            f"Sharpened {category} tactic [skill={skill!r}]: "
            "press each point with renewed conviction."
        )
        return json.dumps(
            {
                "reasoning": f"Blended {len(parents)} inspirations for {category}.",
                "new_debater_prompt": child,
            }
        )

    def _truth_mutation(self, prompt: str, req: CompletionRequest) -> str:
        block1 = _TRUTH_BLOCK1_RE.search(prompt)
        block2 = _TRUTH_BLOCK2_RE.search(prompt)
        cat1, parents1 = ("general", [])
        cat2, parents2 = ("general", [])
        if block1:
            cat1, parents1 = block1.group(1), self._bullet_texts(block1.group(2))
        if block2:
            cat2, parents2 = block2.group(1), self._bullet_texts(block2.group(2))
        rng = self._request_rng(req, "mutate-team")
        skill1 = self._child_skill(parents1, rng)
        skill2 = self._child_skill(parents2, rng)
        child1 = (
            f"Collaborative {cat1} approach [skill={skill1!r}]: "
            "surface the decisive evidence plainly."
        )
        child2 = (
            f"Collaborative {cat2} approach [skill={skill2!r}]: "
            "test every claim against the record."
        )
        return json.dumps(
            {
                "reasoning": f"Team refinement across {cat1} and {cat2}.",
                "new_debater_1_prompt": child1,
                "new_debater_2_prompt": child2,
            }
        )

    # -- embeddings --------------------------------------------------------------

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            raise ProtocolError("embed requires a nonempty batch")
        vectors = []
        for text in texts:
            override = EMBED_RE.search(text)
            if override:
                try:
                    values = [float(v) for v in override.group(1).split(",")]
                except ValueError as exc:
                    raise ProtocolError(f"bad [embed=...] vector in {text!r}") from exc
                vectors.append(np.asarray(values, dtype=np.float64))
            else:
                vectors.append(self._hash_vector(text))
        dims = {v.shape[0] for v in vectors}
        if len(dims) != 1:
            raise ProtocolError(f"embedding dimension mismatch across batch: {dims}")
        return _normalize_rows(np.stack(vectors))

    def _hash_vector(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(
            f"{self.params.rng_seed}:embed:{text}".encode("utf-8")
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
        vector = rng.standard_normal(self.params.embed_dim)
        if not np.any(vector):
            vector[0] = 1.0
        return vector


# ---------------------------------------------------------------------------
# Response cache


class ResponseCache:
    """Append-only JSONL store of (key, request, response) with checksums.

    A partial trailing line (interrupted write) is tolerated and dropped;
    corruption anywhere else raises.  Writes are serialized; reads hit an
    in-memory index.
    """

    def __init__(self, path: str | Path):
        self._path = Path(path)
        self._records: dict[str, dict] = {}
        self._write_lock = threading.Lock()
        self._handle = None
        if self._path.exists():
            self._load()

    @staticmethod
    def _checksum(key: str, request: dict, response: dict) -> str:
        body = canonical_json({"key": key, "request": request, "response": response})
        return hashlib.sha256(body.encode("utf-8")).hexdigest()

    def _load(self) -> None:
        raw = self._path.read_text(encoding="utf-8")
        lines = raw.splitlines(keepends=True)
        valid_bytes = 0
        for index, line in enumerate(lines):
            stripped = line.strip()
            if not stripped:
                valid_bytes += len(line.encode("utf-8"))
                continue
            last = index == len(lines) - 1
            # A torn final line (interrupted append) is cut off so a resumed
            # run rewrites it and the file matches an uninterrupted one.
            partial = last and not line.endswith("\n")
            try:
                record = json.loads(stripped)
            except json.JSONDecodeError:
                if last:
                    logger.warning(
                        "dropping partial trailing cache line in %s", self._path
                    )
                    self._truncate(valid_bytes)
                    return
                raise CacheCorruptionError(
                    f"{self._path}:{index + 1}: unparseable interior cache line"
                )
            expected = self._checksum(
                record.get("key", ""), record.get("request", {}), record.get("response", {})
            )
            if record.get("checksum") != expected:
                if partial:
                    logger.warning(
                        "dropping partial trailing cache line in %s", self._path
                    )
                    self._truncate(valid_bytes)
                    return
                raise CacheCorruptionError(
                    f"{self._path}:{index + 1}: checksum mismatch"
                )
            self._records[record["key"]] = record
            valid_bytes += len(line.encode("utf-8"))

    def _truncate(self, valid_bytes: int) -> None:
        with self._path.open("rb+") as handle:
            handle.truncate(valid_bytes)

    def __len__(self) -> int:
        return len(self._records)

    def get(self, key: str) -> CompletionResponse | None:
        record = self._records.get(key)
        if record is None:
            return None
        return CompletionResponse.from_dict(record["response"])

    def get_vectors(self, key: str) -> np.ndarray | None:
        record = self._records.get(key)
        if record is None or "vectors" not in record.get("response", {}):
            return None
        return np.asarray(record["response"]["vectors"], dtype=np.float64)

    def records(self) -> Iterable[dict]:
        return list(self._records.values())

    def put(self, key: str, request: dict, response: dict) -> None:
        record = {
            "key": key,
            "request": request,
            "response": response,
            "checksum": self._checksum(key, request, response),
        }
        line = canonical_json(record)
        with self._write_lock:
            if key in self._records:
                return
            if self._handle is None:
                self._path.parent.mkdir(parents=True, exist_ok=True)
                self._handle = self._path.open("a", encoding="utf-8")
            self._handle.write(line + "\n")
            self._handle.flush()
            self._records[key] = record

    def close(self) -> None:
        with self._write_lock:
            if self._handle is not None:
                self._handle.close()
                self._handle = None


# ---------------------------------------------------------------------------
# Gateway


class LlmGateway:
    """Cache-fronted completion interface with a bounded in-flight limit."""

    def __init__(
        self,
        backend,
        cache: ResponseCache | None = None,
        parallelism: int = 1,
    ):
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        self.backend = backend
        self.cache = cache
        self.parallelism = parallelism
        self._semaphore = threading.BoundedSemaphore(parallelism)

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        req.validate()
        key = request_key(req, self.backend.backend_id)
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                return replace(cached, cache_hit=True)
        with self._semaphore:
            response = self.backend.complete(req)
        self._check_guided_contract(req, response)
        if self.cache is not None:
            self.cache.put(
                key,
                canonical_request_dict(req, self.backend.backend_id),
                response.to_dict(),
            )
        return response

    @staticmethod
    def _check_guided_contract(
        req: CompletionRequest, response: CompletionResponse
    ) -> None:
        if req.guided_choice is None:
            return
        if response.text not in req.guided_choice:
            raise ProtocolError(
                f"guided completion returned {response.text!r}, "
                f"allowed {req.guided_choice}"
            )
        logprobs = response.choice_logprobs or {}
        missing = [c for c in req.guided_choice if c not in logprobs]
        if missing:
            raise ProtocolError(f"response missing logprobs for {missing}")

    def judge_decision(self, req: CompletionRequest) -> tuple[int, float, float]:
        """Renormalized two-way judge verdict; ties go to the first choice."""
        if req.request_kind != "judge":
            raise ProtocolError("judge_decision requires a judge request")
        response = self.complete(req)
        logprobs = response.choice_logprobs or {}
        choices = req.guided_choice or JUDGE_CHOICES
        missing = [c for c in choices if c not in logprobs]
        if missing:
            raise ProtocolError(f"missing logprob for allowed strings {missing}")
        weights = [math.exp(logprobs[c]) for c in choices]
        total = sum(weights)
        if total <= 0:
            raise ProtocolError("judge probabilities sum to zero")
        p1 = weights[0] / total
        p2 = weights[1] / total
        winner = int(choices[0]) if p1 >= p2 else int(choices[1])
        return winner, p1, p2

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            raise ProtocolError("embed requires a nonempty batch")
        key_payload = {
            "backend_id": self.backend.backend_id,
            "request_kind": "embedder",
            "texts": list(texts),
        }
        key = hashlib.sha256(
            canonical_json(key_payload).encode("utf-8")
        ).hexdigest()
        if self.cache is not None:
            cached = self.cache.get_vectors(key)
            if cached is not None:
                return cached
        with self._semaphore:
            vectors = self.backend.embed(texts)
        if self.cache is not None:
            self.cache.put(
                key, key_payload, {"vectors": vectors.tolist(), "text": "", "backend_id": self.backend.backend_id}
            )
        return vectors


T = TypeVar("T")
R = TypeVar("R")


def parallel_map(
    fn: Callable[[T], R], items: Sequence[T], max_workers: int = 1
) -> list[R]:
    """Order-preserving map, threaded when max_workers > 1."""
    if max_workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(max_workers, len(items))) as pool:
        return list(pool.map(fn, items))
