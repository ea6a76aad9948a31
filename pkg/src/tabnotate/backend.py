"""Chat-completion backends, conversation state, and usage accounting.

Two backends share one contract: the scripted backend replays a recorded
transcript deterministically (the test and benchmark workhorse), and the
HTTP backend talks to any chat-completions-compatible endpoint.
"""

from __future__ import annotations

import json
import random
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Protocol

import requests


class BackendError(Exception):
    """Base class for completion failures."""


class BackendExhausted(BackendError):
    """The scripted transcript has no responses left."""


class MatchFailed(BackendError):
    """A transcript guard substring was absent from the prompt."""


class TransportError(BackendError):
    """The HTTP request failed for good, after any retries."""


class RateLimited(BackendError):
    """The endpoint kept rate-limiting past the retry budget."""


class MalformedResponse(BackendError):
    """The wire payload could not be interpreted as a completion."""


class MalformedTranscript(ValueError):
    """A transcript line is not a usable JSON object."""


class Role(Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class Turn:
    role: Role
    text: str

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("turn text must be nonempty")


def user(text: str) -> Turn:
    return Turn(Role.USER, text)


def assistant(text: str) -> Turn:
    return Turn(Role.ASSISTANT, text)


def system(text: str) -> Turn:
    return Turn(Role.SYSTEM, text)


class Conversation:
    """Append-only chat history: optional leading system turn, then strict
    user/assistant alternation."""

    def __init__(self, turns: Iterable[Turn] = ()) -> None:
        self._turns: list[Turn] = []
        for turn in turns:
            self.append(turn)

    def append(self, turn: Turn) -> None:
        if turn.role is Role.SYSTEM:
            if self._turns:
                raise ValueError("system turn only allowed at the start")
        else:
            previous = self._turns[-1].role if self._turns else None
            expected = (
                Role.USER
                if previous in (None, Role.SYSTEM, Role.ASSISTANT)
                else Role.ASSISTANT
            )
            if turn.role is not expected:
                raise ValueError(
                    f"expected a {expected.value} turn after {previous}, "
                    f"got {turn.role.value}"
                )
        self._turns.append(turn)

    @property
    def turns(self) -> tuple[Turn, ...]:
        return tuple(self._turns)

    @property
    def last(self) -> Turn | None:
        return self._turns[-1] if self._turns else None

    def __len__(self) -> int:
        return len(self._turns)

    def replaced_last(self, text: str) -> Conversation:
        """New conversation with the final turn's text swapped out."""
        if not self._turns:
            raise ValueError("cannot replace a turn in an empty conversation")
        clone = Conversation()
        clone._turns = list(self._turns[:-1])
        clone._turns.append(Turn(self._turns[-1].role, text))
        return clone

    def to_messages(self) -> list[dict[str, str]]:
        return [{"role": t.role.value, "content": t.text} for t in self._turns]


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    max_tokens: int = 256

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError("temperature must be in [0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class PriceTable:
    """Dollars per 1000 prompt / completion tokens."""

    prompt_per_1k: float = 0.0015
    completion_per_1k: float = 0.002

    def cost(self, prompt_tokens: int, completion_tokens: int) -> float:
        return (
            prompt_tokens * self.prompt_per_1k / 1000.0
            + completion_tokens * self.completion_per_1k / 1000.0
        )


DEFAULT_PRICES = PriceTable()


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    wall_time: float = 0.0
    cost: float = 0.0

    def __add__(self, other: "Usage") -> "Usage":
        return Usage(
            prompt_tokens=self.prompt_tokens + other.prompt_tokens,
            completion_tokens=self.completion_tokens + other.completion_tokens,
            wall_time=self.wall_time + other.wall_time,
            cost=self.cost + other.cost,
        )


class Backend(Protocol):
    def complete(
        self, conversation: Conversation, params: GenerationParams
    ) -> tuple[str, Usage]: ...


def _require_user_tail(conversation: Conversation) -> Turn:
    tail = conversation.last
    if tail is None or tail.role is not Role.USER:
        raise ValueError("conversation must end with a user turn")
    return tail


def _approx_tokens(text: str) -> int:
    # Whitespace proxy; good enough for relative cost accounting without
    # a tokenizer dependency.  Reports flag it as approximate.
    return len(text.split())


# Simulated latency per token for scripted completions.  Keeps replayed
# runs deterministic while still producing nonzero throughput figures.
SIMULATED_SECONDS_PER_TOKEN = 5e-5


@dataclass(frozen=True)
class TranscriptEntry:
    response: str
    match: str | None = None


class ScriptedBackend:
    """Replays canned responses in order, optionally guarded by substrings.

    Completion is fully deterministic, including the usage figures: token
    counts use the whitespace proxy and wall time is simulated from them.
    Calls are serialized internally so concurrent use preserves replay
    order.
    """

    def __init__(
        self,
        entries: Iterable[TranscriptEntry | str],
        prices: PriceTable = DEFAULT_PRICES,
    ) -> None:
        self._entries = [
            e if isinstance(e, TranscriptEntry) else TranscriptEntry(e) for e in entries
        ]
        self._prices = prices
        self._next = 0
        self._lock = threading.Lock()

    @property
    def remaining(self) -> int:
        return len(self._entries) - self._next

    def complete(
        self, conversation: Conversation, params: GenerationParams
    ) -> tuple[str, Usage]:
        tail = _require_user_tail(conversation)
        with self._lock:
            if self._next >= len(self._entries):
                raise BackendExhausted(
                    f"transcript exhausted after {len(self._entries)} responses"
                )
            entry = self._entries[self._next]
            self._next += 1
        if entry.match is not None and entry.match not in tail.text:
            raise MatchFailed(
                f"transcript expected the prompt to contain {entry.match!r}"
            )
        prompt_tokens = sum(_approx_tokens(t.text) for t in conversation.turns)
        completion_tokens = _approx_tokens(entry.response)
        total = prompt_tokens + completion_tokens
        return entry.response, Usage(
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            wall_time=total * SIMULATED_SECONDS_PER_TOKEN,
            cost=self._prices.cost(prompt_tokens, completion_tokens),
        )


def load_transcript(source: str, prices: PriceTable = DEFAULT_PRICES) -> ScriptedBackend:
    """Parse JSON-lines transcript text into a :class:`ScriptedBackend`.

    Each line is an object with a ``response`` string and an optional
    ``match`` guard that must appear in the final user turn.
    """
    entries: list[TranscriptEntry] = []
    for lineno, raw_line in enumerate(source.splitlines(), start=1):
        line = raw_line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedTranscript(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict) or not isinstance(obj.get("response"), str):
            raise MalformedTranscript(f"line {lineno}: expected a 'response' string")
        match = obj.get("match")
        if match is not None and not isinstance(match, str):
            raise MalformedTranscript(f"line {lineno}: 'match' must be a string")
        entries.append(TranscriptEntry(response=obj["response"], match=match))
    return ScriptedBackend(entries, prices=prices)


@dataclass(frozen=True)
class HttpEndpoint:
    """Connection settings for a chat-completions endpoint."""

    url: str
    model: str
    api_key: str | None = None
    timeout: float = 60.0
    max_attempts: int = 5
    backoff_base: float = 1.0
    backoff_factor: float = 2.0


class HttpBackend:
    """Minimal chat-completions client with retry and full-jitter backoff.

    Transient failures (connection errors, 429, 5xx) are retried up to the
    endpoint's attempt budget; other client errors fail immediately.
    Request bodies are byte-identical for identical inputs.
    """

    def __init__(
        self,
        endpoint: HttpEndpoint,
        prices: PriceTable = DEFAULT_PRICES,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ) -> None:
        self._endpoint = endpoint
        self._prices = prices
        self._session = session or requests.Session()
        self._sleep = sleep
        self._rng = rng or random.Random()

    def request_body(
        self, conversation: Conversation, params: GenerationParams
    ) -> bytes:
        payload = {
            "model": self._endpoint.model,
            "messages": conversation.to_messages(),
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        return json.dumps(payload, ensure_ascii=False).encode("utf-8")

    def complete(
        self, conversation: Conversation, params: GenerationParams
    ) -> tuple[str, Usage]:
        _require_user_tail(conversation)
        body = self.request_body(conversation, params)
        headers = {"Content-Type": "application/json"}
        if self._endpoint.api_key:
            headers["Authorization"] = f"Bearer {self._endpoint.api_key}"

        last_failure = ""
        rate_limited = False
        for attempt in range(self._endpoint.max_attempts):
            start = time.monotonic()
            try:
                response = self._session.post(
                    self._endpoint.url,
                    data=body,
                    headers=headers,
                    timeout=self._endpoint.timeout,
                )
            except requests.RequestException as exc:
                last_failure = f"transport failure: {exc}"
            else:
                if response.status_code == 200:
                    elapsed = time.monotonic() - start
                    return self._parse(response, elapsed)
                if response.status_code == 429:
                    rate_limited = True
                    last_failure = "HTTP 429"
                elif response.status_code >= 500:
                    rate_limited = False
                    last_failure = f"HTTP {response.status_code}"
                else:
                    raise TransportError(
                        f"HTTP {response.status_code} from {self._endpoint.url}"
                    )
            if attempt + 1 < self._endpoint.max_attempts:
                cap = self._endpoint.backoff_base * self._endpoint.backoff_factor**attempt
                self._sleep(self._rng.uniform(0.0, cap))

        message = (
            f"giving up on {self._endpoint.url} after "
            f"{self._endpoint.max_attempts} attempts ({last_failure})"
        )
        raise RateLimited(message) if rate_limited else TransportError(message)

    def _parse(self, response: requests.Response, elapsed: float) -> tuple[str, Usage]:
        try:
            payload = response.json()
        except ValueError:
            raise MalformedResponse("response body is not JSON") from None
        try:
            choices = payload["choices"]
            content = choices[0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise MalformedResponse(
                "response lacks choices[0].message.content"
            ) from None
        if not isinstance(content, str):
            raise MalformedResponse("message content is not a string")
        usage = payload.get("usage") or {}
        prompt_tokens = int(usage.get("prompt_tokens", 0) or 0)
        completion_tokens = int(usage.get("completion_tokens", 0) or 0)
        return content, Usage(
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            wall_time=elapsed,
            cost=self._prices.cost(prompt_tokens, completion_tokens),
        )


@dataclass(frozen=True)
class MeterReport:
    items: int
    prompt_tokens: int
    completion_tokens: int
    total_wall_time: float
    total_cost: float
    items_per_second: float


class UsageMeter:
    """Accumulates usage across calls; totals are order-independent."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._items = 0
        self._total = Usage()

    def add(self, usage: Usage) -> None:
        with self._lock:
            self._items += 1
            self._total = self._total + usage

    @property
    def total(self) -> Usage:
        with self._lock:
            return self._total

    def report(self) -> MeterReport:
        with self._lock:
            items, total = self._items, self._total
        rate = items / total.wall_time if total.wall_time > 0 else 0.0
        return MeterReport(
            items=items,
            prompt_tokens=total.prompt_tokens,
            completion_tokens=total.completion_tokens,
            total_wall_time=total.wall_time,
            total_cost=total.cost,
            items_per_second=rate,
        )
