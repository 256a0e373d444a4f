"""Uniform access to a language model for generation and continuation scoring.

Two implementations ship: an OpenAI-compatible HTTP client and a deterministic
mock for tests and dry runs. Both honor the same contract:

* ``generate`` returns a non-empty, whitespace-stripped completion.
* ``score_continuations`` returns one finite summed log-probability per
  candidate, in request order.
* ``sample_choice`` returns a histogram over a fixed choice set with counts
  summing to n.

Candidates are rendered with a single leading space (`` Worse`` etc.) before
being scored; tokenizers are whitespace-sensitive and this is the one place
that choice is made.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import requests

log = logging.getLogger(__name__)

MAX_GENERATE_ATTEMPTS = 3
MAX_TRANSPORT_ATTEMPTS = 3


def render_continuation(candidate: str) -> str:
    """The fixed rendering of a candidate continuation: one leading space."""
    return " " + candidate


class BackendError(Exception):
    """Base class for backend failures."""


class RetriableTransportError(BackendError):
    """Transport kept failing after retries; carries the per-attempt log."""

    def __init__(self, message: str, attempts: list[str]):
        super().__init__(f"{message}; attempts: {attempts}")
        self.attempts = attempts


class DegenerateOutputError(BackendError):
    """The model produced only empty/whitespace completions after retries."""


class CapabilityError(BackendError):
    """The backend cannot score continuations; use the sampling variant."""


class BackendProtocolError(BackendError):
    """The backend returned something outside its contract (e.g. NaN)."""


class BackendKind(str, Enum):
    OPENAI_COMPATIBLE_HTTP = "openai_compatible_http"
    MOCK = "mock"


@dataclass(frozen=True)
class SamplingParams:
    """Sampling hyperparameters; seed is mandatory for reproducible runs."""

    temperature: float = 1.0
    top_p: float = 0.95
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must be in (0, 1]")


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_new_tokens: int = 512
    sampling: SamplingParams = field(default_factory=SamplingParams)

    def __post_init__(self) -> None:
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")


@dataclass(frozen=True)
class ContinuationScoreRequest:
    prompt: str
    candidates: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ValueError("candidates must be non-empty")
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError("candidates must be pairwise distinct")
        if any(not c for c in self.candidates):
            raise ValueError("every candidate must be non-empty")


@dataclass(frozen=True)
class BackendDescriptor:
    kind: BackendKind
    model_name: str
    endpoint: Optional[str] = None
    concurrency_limit: int = 1

    def __post_init__(self) -> None:
        if self.concurrency_limit < 1:
            raise ValueError("concurrency_limit must be >= 1")
        is_http = self.kind is BackendKind.OPENAI_COMPATIBLE_HTTP
        if is_http and not self.endpoint:
            raise ValueError("http backend requires an endpoint")
        if not is_http and self.endpoint:
            raise ValueError("endpoint only valid for the http backend")


def prompt_digest(prompt: str) -> str:
    """Stable hex digest used to key mock tables and cache entries."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def derive_seed(base_seed: int, *parts: object) -> int:
    """Derive a per-item seed from the run seed and any hashable parts.

    Hash-based so per-item reproducibility is independent of execution order.
    """
    h = hashlib.sha256(repr((base_seed,) + parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big")


class Backend(ABC):
    """The model-access contract all pipeline stages program against."""

    descriptor: BackendDescriptor

    @abstractmethod
    def generate(self, req: GenerationRequest) -> str:
        """Return the stripped completion; never empty."""

    @abstractmethod
    def score_continuations(
        self, req: ContinuationScoreRequest
    ) -> list[tuple[str, float]]:
        """Summed log-probability of each candidate continuation, in order."""

    @abstractmethod
    def sample_choice(
        self, prompt: str, choices: Sequence[str], n: int, seed: int
    ) -> dict[str, int]:
        """Histogram of n constrained-decoding draws over the choice set."""

    def supports_continuation_scoring(self) -> bool:
        return True


def _check_sample_args(choices: Sequence[str], n: int) -> None:
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(set(choices)) != len(choices):
        raise ValueError("choices must be pairwise distinct")


class MockBackend(Backend):
    """Deterministic backend: a pure function of (request, seed).

    Lookups go, in order: exact-prompt table, prompt-digest table, then (if
    ``synthesize_missing``) a deterministic synthesized value derived from the
    seed and the prompt. Hooks (``completion_fn`` / ``logprob_fn``) take
    precedence over tables and let tests plant arbitrary behavior.
    """

    def __init__(
        self,
        seed: int = 0,
        *,
        completions: Optional[Mapping[str, str]] = None,
        logprobs: Optional[Mapping[tuple[str, str], float]] = None,
        choice_probs: Optional[Mapping[str, float]] = None,
        completion_fn: Optional[Callable[[str], Optional[str]]] = None,
        logprob_fn: Optional[Callable[[str, str], Optional[float]]] = None,
        synthesize_missing: bool = True,
        model_name: str = "mock",
    ):
        self.descriptor = BackendDescriptor(
            kind=BackendKind.MOCK, model_name=model_name
        )
        self.seed = seed
        self._completions = dict(completions or {})
        self._logprobs = dict(logprobs or {})
        self._choice_probs = dict(choice_probs or {})
        self._completion_fn = completion_fn
        self._logprob_fn = logprob_fn
        self._synthesize_missing = synthesize_missing
        self.calls: list[tuple[str, str]] = []

    @classmethod
    def from_table_file(cls, path: str | Path, **kwargs) -> "MockBackend":
        """Load the JSON table format: completions keyed by prompt digest,
        logprobs keyed by "digest\\tcandidate", plus a seed."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        logprobs = {
            tuple(key.split("\t", 1)): float(v)
            for key, v in data.get("logprobs", {}).items()
        }
        return cls(
            seed=int(data.get("seed", 0)),
            completions=data.get("completions", {}),
            logprobs=logprobs,  # type: ignore[arg-type]
            **kwargs,
        )

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def _synth_completion(self, prompt: str, seed: Optional[int]) -> str:
        eff = derive_seed(self.seed, "generate", prompt_digest(prompt), seed)
        return f"mock-text-{eff:016x}"

    def generate(self, req: GenerationRequest) -> str:
        self.calls.append(("generate", req.prompt))
        if self._completion_fn is not None:
            out = self._completion_fn(req.prompt)
            if out is not None:
                return out.strip()
        digest = prompt_digest(req.prompt)
        for key in (req.prompt, digest):
            if key in self._completions:
                return self._completions[key].strip()
        if not self._synthesize_missing:
            raise BackendProtocolError(f"mock has no completion for digest {digest}")
        return self._synth_completion(req.prompt, req.sampling.seed)

    def _logprob_for(self, prompt: str, candidate: str) -> float:
        if self._logprob_fn is not None:
            value = self._logprob_fn(prompt, candidate)
            if value is not None:
                return value
        digest = prompt_digest(prompt)
        for key in ((prompt, candidate), (digest, candidate)):
            if key in self._logprobs:
                return self._logprobs[key]
        if candidate in self._choice_probs:
            p = self._choice_probs[candidate]
            return math.log(p) if p > 0 else -30.0
        if not self._synthesize_missing:
            raise BackendProtocolError(
                f"mock has no logprob for ({digest}, {candidate!r})"
            )
        eff = derive_seed(self.seed, "logprob", digest, candidate)
        return -6.0 * random.Random(eff).random()

    def score_continuations(
        self, req: ContinuationScoreRequest
    ) -> list[tuple[str, float]]:
        self.calls.append(("score", req.prompt))
        out = []
        for cand in req.candidates:
            value = self._logprob_for(req.prompt, cand)
            if not math.isfinite(value):
                raise BackendProtocolError(f"non-finite logprob for {cand!r}")
            out.append((cand, value))
        return out

    def sample_choice(
        self, prompt: str, choices: Sequence[str], n: int, seed: int
    ) -> dict[str, int]:
        _check_sample_args(choices, n)
        self.calls.append(("sample", prompt))
        logs = [self._logprob_for(prompt, c) for c in choices]
        m = max(logs)
        weights = [math.exp(x - m) for x in logs]
        rng = random.Random(derive_seed(self.seed, "sample", prompt_digest(prompt),
                                        tuple(choices), n, seed))
        hist = {c: 0 for c in choices}
        for choice in rng.choices(list(choices), weights=weights, k=n):
            hist[choice] += 1
        return hist


class OpenAICompatibleBackend(Backend):
    """Client for an OpenAI-compatible completions endpoint.

    Continuation scoring uses the echoed-logprobs mechanism: the prompt plus
    the rendered candidate is submitted with ``echo`` and ``logprobs`` set and
    zero new tokens, and the per-token log-probs belonging to the candidate
    region are summed. Servers that do not return logprobs raise
    ``CapabilityError``; select the sampled scoring variant for those.

    The API key is read from the environment variable named in the
    constructor, never from a flag or config value.
    """

    def __init__(
        self,
        descriptor: BackendDescriptor,
        *,
        api_key_env: Optional[str] = None,
        timeout: float = 120.0,
        backoff_base: float = 1.0,
        session: Optional[requests.Session] = None,
    ):
        if descriptor.kind is not BackendKind.OPENAI_COMPATIBLE_HTTP:
            raise ValueError("descriptor must be of the http kind")
        self.descriptor = descriptor
        self._timeout = timeout
        self._backoff_base = backoff_base
        self._session = session or requests.Session()
        self._api_key = os.environ.get(api_key_env) if api_key_env else None

    def _post(self, body: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        attempts: list[str] = []
        for attempt in range(MAX_TRANSPORT_ATTEMPTS):
            try:
                resp = self._session.post(
                    self.descriptor.endpoint,
                    json=body,
                    headers=headers,
                    timeout=self._timeout,
                )
            except requests.RequestException as exc:
                attempts.append(f"attempt {attempt + 1}: {exc!r}")
            else:
                if resp.status_code < 500:
                    resp.raise_for_status()
                    return resp.json()
                attempts.append(f"attempt {attempt + 1}: HTTP {resp.status_code}")
            if attempt < MAX_TRANSPORT_ATTEMPTS - 1:
                time.sleep(self._backoff_base * (2**attempt))
        raise RetriableTransportError("backend unreachable", attempts)

    def generate(self, req: GenerationRequest) -> str:
        seed = req.sampling.seed
        for attempt in range(MAX_GENERATE_ATTEMPTS):
            body = {
                "model": self.descriptor.model_name,
                "prompt": req.prompt,
                "max_tokens": req.max_new_tokens,
                "temperature": req.sampling.temperature,
                "top_p": req.sampling.top_p,
            }
            if seed is not None:
                body["seed"] = seed + attempt
            data = self._post(body)
            try:
                text = data["choices"][0]["text"]
            except (KeyError, IndexError, TypeError) as exc:
                raise BackendProtocolError(f"malformed completion response: {exc}")
            text = text.strip()
            if text:
                return text
            log.warning("empty completion, retrying (attempt %d)", attempt + 1)
        raise DegenerateOutputError(
            f"empty completion after {MAX_GENERATE_ATTEMPTS} attempts"
        )

    def score_continuations(
        self, req: ContinuationScoreRequest
    ) -> list[tuple[str, float]]:
        out = []
        for cand in req.candidates:
            full = req.prompt + render_continuation(cand)
            body = {
                "model": self.descriptor.model_name,
                "prompt": full,
                "max_tokens": 0,
                "echo": True,
                "logprobs": 0,
            }
            data = self._post(body)
            try:
                lp = data["choices"][0]["logprobs"]
                token_logprobs = lp["token_logprobs"]
                offsets = lp["text_offset"]
            except (KeyError, IndexError, TypeError):
                raise CapabilityError(
                    "backend returned no echoed logprobs; "
                    "use the sampled scoring variant"
                )
            total = 0.0
            for offset, token_lp in zip(offsets, token_logprobs):
                if offset >= len(req.prompt) and token_lp is not None:
                    total += token_lp
            if not math.isfinite(total):
                raise BackendProtocolError(f"non-finite logprob sum for {cand!r}")
            out.append((cand, total))
        return out

    def sample_choice(
        self, prompt: str, choices: Sequence[str], n: int, seed: int
    ) -> dict[str, int]:
        _check_sample_args(choices, n)
        hist = {c: 0 for c in choices}
        by_lower = {c.lower(): c for c in choices}
        for i in range(n):
            req = GenerationRequest(
                prompt=prompt,
                max_new_tokens=4,
                sampling=SamplingParams(seed=derive_seed(seed, "draw", i)),
            )
            text = self.generate(req).strip().strip('"').rstrip(".,").lower()
            match = next(
                (orig for low, orig in by_lower.items() if text.startswith(low)), None
            )
            if match is None:
                raise BackendProtocolError(
                    f"constrained draw returned {text!r}, not one of {list(choices)}"
                )
            hist[match] += 1
        return hist
