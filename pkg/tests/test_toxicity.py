from __future__ import annotations

import httpx
import numpy as np

from hatescope.corpus import Post
from hatescope.toxicity import (
    FailureReport,
    LexiconScorer,
    PerspectiveScorer,
    RateLimiter,
    ScoreCache,
    ScorerConfig,
    ToxicityScore,
    filter_toxic,
    read_scores,
    score_posts,
    text_digest,
    write_scores,
)


def _post(pid: str, text: str) -> Post:
    return Post(post_id=pid, thread_id="t", timestamp_utc=0,
                raw_body=text, clean_text=text)


def test_filter_toxic_inclusive_boundary() -> None:
    scores = [ToxicityScore("a", "m", 0.79), ToxicityScore("b", "m", 0.80),
              ToxicityScore("c", "m", 0.95)]
    assert filter_toxic(scores, threshold=0.8) == {"b", "c"}


def test_filter_toxic_degenerate_thresholds() -> None:
    scores = [ToxicityScore("a", "m", 0.1), ToxicityScore("b", "m", 0.5)]
    assert filter_toxic(scores, threshold=0.0) == {"a", "b"}
    assert filter_toxic([], threshold=0.8) == set()


def test_filter_toxic_monotone_in_threshold() -> None:
    rng = np.random.default_rng(2)
    scores = [ToxicityScore(f"p{i}", "m", float(rng.uniform())) for i in range(200)]
    previous = filter_toxic(scores, 0.0)
    for threshold in (0.2, 0.5, 0.8, 1.0):
        current = filter_toxic(scores, threshold)
        assert current <= previous
        previous = current


def test_lexicon_scorer_max_rule() -> None:
    scorer = LexiconScorer({"kike": 0.95, "gas": 0.4})
    assert scorer.score("a kike") == 0.95
    assert scorer.score("gas the kike") == 0.95
    assert scorer.score("gas станция") == 0.4
    assert scorer.score("nothing here") == 0.0


def test_lexicon_scorer_from_file(tmp_path) -> None:
    path = tmp_path / "lexicon.txt"
    path.write_text("# terms\nkike 0.95\nshithole 0.85\n", encoding="utf-8")
    scorer = LexiconScorer.from_file(path)
    assert scorer.score("what a shithole") == 0.85


def test_score_posts_empty_stream() -> None:
    config = ScorerConfig(cache_path=None)
    assert list(score_posts([], LexiconScorer({}), config)) == []


def test_score_posts_one_score_per_post(tmp_path) -> None:
    posts = [_post("1", "a kike"), _post("2", "hello"), _post("3", "gas")]
    config = ScorerConfig(cache_path=tmp_path / "cache.ndjson")
    scores = list(score_posts(posts, LexiconScorer({"kike": 0.95, "gas": 0.4}), config))
    assert [s.post_id for s in scores] == ["1", "2", "3"]
    assert [s.score for s in scores] == [0.95, 0.0, 0.4]


class CountingScorer:
    model_id = "counting"

    def __init__(self, value: float = 0.5):
        self.calls = 0
        self.value = value

    def score(self, text: str) -> float:
        self.calls += 1
        return self.value


def test_cache_prevents_rescoring(tmp_path) -> None:
    posts = [_post("1", "same text"), _post("2", "same text"), _post("3", "other")]
    cache_path = tmp_path / "cache.ndjson"
    scorer = CountingScorer()
    config = ScorerConfig(cache_path=cache_path)
    first = list(score_posts(posts, scorer, config))
    assert scorer.calls == 2  # identical text scored once
    second = list(score_posts(posts, scorer, config))
    assert scorer.calls == 2  # cache covers everything on the second run
    assert [(s.post_id, s.score) for s in first] == [(s.post_id, s.score) for s in second]


def test_cached_post_issues_no_request(tmp_path) -> None:
    cache_path = tmp_path / "cache.ndjson"
    cache = ScoreCache(cache_path)
    cache.put(text_digest("a kike"), "counting", 0.77)
    scorer = CountingScorer()
    config = ScorerConfig(cache_path=cache_path)
    (score,) = list(score_posts([_post("1", "a kike")], scorer, config))
    assert scorer.calls == 0
    assert score.score == 0.77


class FakeClock:
    def __init__(self) -> None:
        self.now = 0.0

    def __call__(self) -> float:
        return self.now

    def sleep(self, seconds: float) -> None:
        self.now += max(seconds, 1e-4)


def test_rate_limiter_window_invariant() -> None:
    clock = FakeClock()
    limiter = RateLimiter(3, clock=clock, sleep=clock.sleep)
    issued = []
    for _ in range(10):
        limiter.acquire()
        issued.append(clock.now)
        clock.now += 0.01
    for i, start in enumerate(issued):
        in_window = [t for t in issued if start <= t < start + 1.0]
        assert len(in_window) <= 3


def test_rate_limiter_fractional_rate() -> None:
    clock = FakeClock()
    limiter = RateLimiter(2.5, clock=clock, sleep=clock.sleep)
    issued = []
    for _ in range(6):
        limiter.acquire()
        issued.append(clock.now)
    for start in issued:
        assert len([t for t in issued if start <= t < start + 1.0]) <= 2


class FlakyScorer:
    model_id = "flaky"

    def __init__(self, fail_times: int):
        self.fail_times = fail_times
        self.calls = 0

    def score(self, text: str) -> float:
        self.calls += 1
        if self.calls <= self.fail_times:
            raise RuntimeError("transient")
        return 0.5


def test_retries_then_success() -> None:
    clock = FakeClock()
    scorer = FlakyScorer(fail_times=2)
    config = ScorerConfig(max_retries=2, cache_path=None)
    scores = list(score_posts([_post("1", "x")], scorer, config,
                              clock=clock, sleep=clock.sleep))
    assert len(scores) == 1 and scores[0].score == 0.5


def test_failure_after_retries_recorded_and_stream_continues() -> None:
    clock = FakeClock()

    class AlwaysFails:
        model_id = "bad"

        def score(self, text: str) -> float:
            if "boom" in text:
                raise RuntimeError("nope")
            return 0.3

    report = FailureReport()
    config = ScorerConfig(max_retries=1, cache_path=None)
    posts = [_post("1", "boom"), _post("2", "fine")]
    scores = list(score_posts(posts, AlwaysFails(), config, report=report,
                              clock=clock, sleep=clock.sleep))
    assert [s.post_id for s in scores] == ["2"]
    assert report.failures[0][0] == "1"


def test_out_of_range_score_is_failure() -> None:
    clock = FakeClock()

    class Overconfident:
        model_id = "bad"

        def score(self, text: str) -> float:
            return 1.5

    report = FailureReport()
    config = ScorerConfig(max_retries=0, cache_path=None)
    scores = list(score_posts([_post("1", "x")], Overconfident(), config,
                              report=report, clock=clock, sleep=clock.sleep))
    assert scores == []
    assert "outside" in report.failures[0][1]


def test_parallel_scoring_preserves_post_order(tmp_path) -> None:
    posts = [_post(f"{i:03d}", f"text {i}") for i in range(50)]
    config = ScorerConfig(cache_path=None, max_in_flight=8,
                          max_requests_per_second=10_000)
    scores = list(score_posts(posts, CountingScorer(), config))
    assert [s.post_id for s in scores] == [p.post_id for p in posts]


def test_perspective_wire_shape() -> None:
    def handler(request: httpx.Request) -> httpx.Response:
        import json

        body = json.loads(request.content)
        assert "SEVERE_TOXICITY" in body["requestedAttributes"]
        assert body["comment"]["text"] == "gas the kikes"
        return httpx.Response(200, json={
            "attributeScores": {
                "SEVERE_TOXICITY": {"summaryScore": {"value": 0.91}}}})

    scorer = PerspectiveScorer("https://fake.endpoint/v1/comments:analyze",
                               api_key="k", transport=httpx.MockTransport(handler))
    assert scorer.score("gas the kikes") == 0.91


def test_scores_file_round_trip(tmp_path) -> None:
    scores = [ToxicityScore("1", "m", 0.25), ToxicityScore("2", "m", 0.95)]
    path = tmp_path / "scores.ndjson"
    write_scores(scores, path)
    loaded = list(read_scores(path))
    assert [(s.post_id, s.score) for s in loaded] == [("1", 0.25), ("2", 0.95)]
