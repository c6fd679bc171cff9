"""Severe-toxicity scoring: remote or lexicon provider, cache, rate limiting.

Scores are cached under a digest of the cleaned text plus the model id, so
reposts of identical text are scored once. The remote provider mirrors the
public Perspective comment-analysis wire shape; the lexicon provider is the
deterministic mock that drives tests and the end-to-end fixture.
"""

from __future__ import annotations

import hashlib
import json
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Protocol

from .corpus import Post
from .textmine import tokenize

DEFAULT_TOXICITY_THRESHOLD = 0.8


class ScorerError(RuntimeError):
    pass


@dataclass
class ToxicityScore:
    post_id: str
    model_id: str
    score: float


@dataclass
class ScorerConfig:
    endpoint: str = ""
    max_requests_per_second: float = 10.0
    max_retries: int = 2
    cache_path: str | Path | None = None
    max_in_flight: int = 1


@dataclass
class FailureReport:
    failures: list[tuple[str, str]] = field(default_factory=list)

    def record(self, post_id: str, reason: str) -> None:
        self.failures.append((post_id, reason))


class ToxicityProvider(Protocol):
    model_id: str

    def score(self, text: str) -> float: ...


class LexiconScorer:
    """Deterministic mock: post score = max over matched term scores, else 0."""

    model_id = "lexicon-severe-toxicity"

    def __init__(self, lexicon: Mapping[str, float]):
        self.lexicon = {term.lower(): float(score) for term, score in lexicon.items()}

    @classmethod
    def from_file(cls, path: str | Path) -> "LexiconScorer":
        lexicon = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                term, score = line.rsplit(None, 1)
                lexicon[term] = float(score)
        return cls(lexicon)

    def score(self, text: str) -> float:
        best = 0.0
        for token in tokenize(text):
            if token in self.lexicon:
                best = max(best, self.lexicon[token])
        return best


class PerspectiveScorer:
    """Remote scorer speaking the comment-analysis wire shape."""

    def __init__(self, endpoint: str, api_key: str = "",
                 attribute: str = "SEVERE_TOXICITY", timeout: float = 30.0,
                 transport=None):
        import httpx

        self.model_id = attribute
        self.attribute = attribute
        self.endpoint = endpoint
        params = {"key": api_key} if api_key else None
        self._client = httpx.Client(timeout=timeout, params=params, transport=transport)

    def score(self, text: str) -> float:
        import httpx

        body = {"comment": {"text": text},
                "requestedAttributes": {self.attribute: {}}}
        try:
            response = self._client.post(self.endpoint, json=body)
            response.raise_for_status()
            payload = response.json()
            value = payload["attributeScores"][self.attribute]["summaryScore"]["value"]
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise ScorerError(f"scoring request failed: {exc}") from exc
        return float(value)


class RateLimiter:
    """Sliding 1-second window; at most max_per_second requests in any window."""

    def __init__(self, max_per_second: float,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if max_per_second <= 0:
            raise ValueError("rate must be positive")
        self.max_per_second = max_per_second
        self.clock = clock
        self.sleep = sleep
        self._issued: deque[float] = deque()

    def acquire(self) -> None:
        while True:
            now = self.clock()
            while self._issued and self._issued[0] <= now - 1.0:
                self._issued.popleft()
            if len(self._issued) + 1 <= self.max_per_second:
                self._issued.append(now)
                return
            self.sleep(max(0.0, self._issued[0] + 1.0 - now))


class ScoreCache:
    """Append-only file of (digest, model_id, score) records."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        self._scores: dict[tuple[str, str], float] = {}
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    obj = json.loads(line)
                    self._scores[(obj["digest"], obj["model_id"])] = float(obj["score"])

    def get(self, digest: str, model_id: str) -> float | None:
        return self._scores.get((digest, model_id))

    def put(self, digest: str, model_id: str, score: float) -> None:
        if (digest, model_id) in self._scores:
            return
        self._scores[(digest, model_id)] = score
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"digest": digest, "model_id": model_id,
                                     "score": score}) + "\n")

    def __len__(self) -> int:
        return len(self._scores)


def text_digest(clean: str) -> str:
    return hashlib.sha256(clean.encode("utf-8")).hexdigest()


def score_posts(posts: Iterable[Post], provider: ToxicityProvider,
                config: ScorerConfig, report: FailureReport | None = None,
                clock: Callable[[], float] = time.monotonic,
                sleep: Callable[[float], None] = time.sleep) -> Iterator[ToxicityScore]:
    """One score per post, in input order; cached scores never re-request.

    Provider calls go through the rate limiter and are retried up to
    config.max_retries; a post that still fails lands in the report and the
    stream continues. Up to max_in_flight requests run concurrently, with
    results merged back in input order.
    """
    cache = ScoreCache(config.cache_path)
    limiter = RateLimiter(config.max_requests_per_second, clock=clock, sleep=sleep)
    report = report if report is not None else FailureReport()

    def fetch(post: Post) -> ToxicityScore | None:
        digest = text_digest(post.clean_text)
        cached = cache.get(digest, provider.model_id)
        if cached is not None:
            return ToxicityScore(post.post_id, provider.model_id, cached)
        last: Exception | None = None
        for _ in range(config.max_retries + 1):
            limiter.acquire()
            try:
                value = provider.score(post.clean_text)
            except Exception as exc:
                last = exc
                continue
            if not 0.0 <= value <= 1.0:
                last = ScorerError(f"score {value} outside [0, 1]")
                continue
            cache.put(digest, provider.model_id, value)
            return ToxicityScore(post.post_id, provider.model_id, value)
        report.record(post.post_id, str(last))
        return None

    if config.max_in_flight <= 1:
        for post in posts:
            result = fetch(post)
            if result is not None:
                yield result
        return

    batch: list[Post] = []
    with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
        def drain(chunk: list[Post]) -> Iterator[ToxicityScore]:
            for result in pool.map(fetch, chunk):
                if result is not None:
                    yield result

        for post in posts:
            batch.append(post)
            if len(batch) >= config.max_in_flight * 8:
                yield from drain(batch)
                batch = []
        yield from drain(batch)


def filter_toxic(scores: Iterable[ToxicityScore],
                 threshold: float = DEFAULT_TOXICITY_THRESHOLD) -> set[str]:
    """Posts with score >= threshold (inclusive)."""
    return {s.post_id for s in scores if s.score >= threshold}


def write_scores(scores: Iterable[ToxicityScore], dest: str | Path) -> int:
    n = 0
    with open(dest, "w", encoding="utf-8") as fh:
        for s in scores:
            fh.write(json.dumps({"post_id": s.post_id, "model_id": s.model_id,
                                 "score": s.score}) + "\n")
            n += 1
    return n


def read_scores(path: str | Path) -> Iterator[ToxicityScore]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            yield ToxicityScore(obj["post_id"], obj["model_id"], float(obj["score"]))
