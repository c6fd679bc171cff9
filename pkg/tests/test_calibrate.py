from __future__ import annotations

import numpy as np
import pytest

from hatescope.calibrate import (
    DEFAULT_PER_RANGE,
    DEFAULT_RANGES,
    StratifiedSample,
    ThresholdMetrics,
    default_thresholds,
    read_sample,
    sample_phrases,
    select_threshold,
    stratified_sample,
    sweep,
    write_sample,
    write_sweep_report,
)
from hatescope.phrasemine import Phrase


def _phrase(pid: str, category: str) -> Phrase:
    return Phrase(phrase_id=pid, lemma_tokens=["x"], surface_example="x",
                  frequency=5, category=category)


def _pool(n_anti: int = 20, n_islamo: int = 6) -> list[Phrase]:
    return ([_phrase(f"a{i:02d}", "antisemitic") for i in range(n_anti)] +
            [_phrase(f"i{i:02d}", "islamophobic") for i in range(n_islamo)])


def test_sample_phrases_quota_respected() -> None:
    chosen = sample_phrases(_pool(), seed=4)
    assert len(chosen) == 10
    by_cat = {"antisemitic": 0, "islamophobic": 0}
    for p in chosen:
        by_cat[p.category] += 1
    assert by_cat == {"antisemitic": 8, "islamophobic": 2}


def test_sample_phrases_deterministic_under_seed() -> None:
    a = [p.phrase_id for p in sample_phrases(_pool(), seed=11)]
    b = [p.phrase_id for p in sample_phrases(_pool(), seed=11)]
    c = [p.phrase_id for p in sample_phrases(_pool(), seed=12)]
    assert a == b
    assert a != c


def test_sample_phrases_insufficient_errors() -> None:
    with pytest.raises(ValueError, match="islamophobic"):
        sample_phrases(_pool(n_islamo=1), seed=0)


def test_sample_phrases_quota_must_sum_to_n() -> None:
    with pytest.raises(ValueError):
        sample_phrases(_pool(), n=10, category_quota={"antisemitic": 3}, seed=0)


def _cosine_population(rng: np.random.Generator, per_bucket: int = 200) -> dict[str, float]:
    cosines = {}
    buckets = [(0.0, 0.2), (0.2, 0.25), (0.25, 0.3), (0.3, 0.4)]
    idx = 0
    for lo, hi in buckets:
        for _ in range(per_bucket):
            cosines[f"img{idx:05d}"] = float(rng.uniform(lo, hi - 1e-9))
            idx += 1
    return cosines


def test_stratified_sample_default_plan_yields_200() -> None:
    rng = np.random.default_rng(3)
    sample = stratified_sample("ph1", _cosine_population(rng), seed=9)
    assert len(sample.entries) == 4 * DEFAULT_PER_RANGE == 200
    assert sample.shortfalls == []
    per_range = {i: 0 for i in range(4)}
    for _, _, r in sample.entries:
        per_range[r] += 1
    assert all(v == DEFAULT_PER_RANGE for v in per_range.values())


def test_stratified_sample_disjoint_and_within_range() -> None:
    rng = np.random.default_rng(4)
    cosines = _cosine_population(rng)
    sample = stratified_sample("ph1", cosines, seed=1)
    seen = set()
    for image_id, cos, r in sample.entries:
        assert image_id not in seen
        seen.add(image_id)
        lo, hi = DEFAULT_RANGES[r]
        if r == len(DEFAULT_RANGES) - 1:
            assert lo <= cos <= hi
        else:
            assert lo <= cos < hi


def test_stratified_sample_final_range_closed_above() -> None:
    cosines = {"edge": 0.4, "below": 0.1}
    sample = stratified_sample("ph1", cosines, per_range=1, seed=0)
    picked = {(i, r) for i, _, r in sample.entries}
    assert ("edge", 3) in picked


def test_stratified_sample_shortfall_takes_all_and_records() -> None:
    rng = np.random.default_rng(5)
    cosines = _cosine_population(rng)
    # thin out range [0.25, 0.3) to 30 candidates
    in_range = [i for i, c in cosines.items() if 0.25 <= c < 0.3]
    for image_id in in_range[30:]:
        del cosines[image_id]
    sample = stratified_sample("ph1", cosines, seed=2)
    taken = [e for e in sample.entries if e[2] == 2]
    assert len(taken) == 30
    assert (2, DEFAULT_PER_RANGE - 30) in sample.shortfalls


def test_stratified_sample_seed_reproducible() -> None:
    rng = np.random.default_rng(6)
    cosines = _cosine_population(rng)
    a = stratified_sample("ph1", cosines, seed=7)
    b = stratified_sample("ph1", cosines, seed=7)
    c = stratified_sample("ph1", cosines, seed=8)
    assert a.entries == b.entries
    assert a.entries != c.entries


def test_sweep_worked_example_threshold_030() -> None:
    labels = {("ph", "a"): False, ("ph", "b"): False,
              ("ph", "c"): True, ("ph", "d"): True}
    cosines = {("ph", "a"): 0.1, ("ph", "b"): 0.2,
               ("ph", "c"): 0.35, ("ph", "d"): 0.4}
    (metrics,) = sweep(labels, cosines, thresholds=[0.3])
    (pm,) = metrics.per_phrase
    assert (pm.accuracy, pm.precision, pm.recall, pm.f1) == (1.0, 1.0, 1.0, 1.0)


def test_sweep_worked_example_threshold_038() -> None:
    labels = {("ph", "a"): False, ("ph", "b"): False,
              ("ph", "c"): True, ("ph", "d"): True}
    cosines = {("ph", "a"): 0.1, ("ph", "b"): 0.2,
               ("ph", "c"): 0.35, ("ph", "d"): 0.4}
    (metrics,) = sweep(labels, cosines, thresholds=[0.38])
    (pm,) = metrics.per_phrase
    assert pm.accuracy == pytest.approx(0.75)
    assert pm.precision == pytest.approx(1.0)
    assert pm.recall == pytest.approx(0.5)
    assert pm.f1 == pytest.approx(2 / 3)


def test_sweep_all_positive_low_threshold_full_recall() -> None:
    labels = {("ph", "a"): True, ("ph", "b"): True}
    cosines = {("ph", "a"): 0.5, ("ph", "b"): 0.9}
    (metrics,) = sweep(labels, cosines, thresholds=[0.1])
    assert metrics.per_phrase[0].recall == 1.0


def test_sweep_undefined_ratios_flagged_as_zero() -> None:
    labels = {("ph", "a"): False}
    cosines = {("ph", "a"): 0.1}
    (metrics,) = sweep(labels, cosines, thresholds=[0.9])
    (pm,) = metrics.per_phrase
    assert pm.precision == 0.0 and pm.undefined_precision
    assert pm.recall == 0.0 and pm.undefined_recall
    assert pm.f1 == 0.0


def test_sweep_missing_cosine_errors() -> None:
    with pytest.raises(ValueError):
        sweep({("ph", "a"): True}, {}, thresholds=[0.3])


def brute_force_metrics(pairs: list[tuple[bool, float]], threshold: float):
    tp = sum(1 for pos, c in pairs if pos and c >= threshold)
    fp = sum(1 for pos, c in pairs if not pos and c >= threshold)
    tn = sum(1 for pos, c in pairs if not pos and c < threshold)
    fn = sum(1 for pos, c in pairs if pos and c < threshold)
    accuracy = (tp + tn) / len(pairs)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return accuracy, precision, recall, f1


def test_sweep_matches_brute_force_on_random_sets() -> None:
    rng = np.random.default_rng(17)
    for _ in range(40):
        n_phrases = int(rng.integers(1, 6))
        labels = {}
        cosines = {}
        for p in range(n_phrases):
            for i in range(int(rng.integers(3, 40))):
                key = (f"ph{p}", f"im{i}")
                labels[key] = bool(rng.integers(0, 2))
                cosines[key] = float(rng.uniform(-0.2, 0.6))
        thresholds = sorted(rng.uniform(0.0, 0.5, size=5).tolist())
        results = sweep(labels, cosines, thresholds)
        recalls: dict[str, list[float]] = {}
        for tm in results:
            for pm in tm.per_phrase:
                pairs = [(labels[(pm.phrase_id, i)], cosines[(pm.phrase_id, i)])
                         for (pid, i) in labels if pid == pm.phrase_id]
                expected = brute_force_metrics(pairs, tm.threshold)
                assert (pm.accuracy, pm.precision, pm.recall, pm.f1) == expected
                recalls.setdefault(pm.phrase_id, []).append(pm.recall)
        for series in recalls.values():
            assert series == sorted(series, reverse=True)


def _tm(threshold: float, mean_f1: float) -> ThresholdMetrics:
    return ThresholdMetrics(threshold=threshold, per_phrase=[],
                            mean={"f1": mean_f1, "accuracy": 0, "precision": 0, "recall": 0},
                            std={"f1": 0, "accuracy": 0, "precision": 0, "recall": 0})


def test_select_threshold_single() -> None:
    assert select_threshold([_tm(0.25, 0.5)]) == 0.25


def test_select_threshold_peak_at_030() -> None:
    metrics = [_tm(0.2, 0.40), _tm(0.25, 0.55), _tm(0.3, 0.58), _tm(0.35, 0.52)]
    assert select_threshold(metrics) == 0.3


def test_select_threshold_tie_prefers_lower() -> None:
    assert select_threshold([_tm(0.28, 0.6), _tm(0.30, 0.6)]) == 0.28


def test_default_thresholds_contain_paper_point() -> None:
    grid = default_thresholds()
    assert 0.3 in grid
    assert grid[0] == 0.0 and grid[-1] == 0.5


def test_reports_round_trip(tmp_path) -> None:
    labels = {("ph", "a"): True, ("ph", "b"): False}
    cosines = {("ph", "a"): 0.4, ("ph", "b"): 0.1}
    metrics = sweep(labels, cosines, thresholds=[0.3])
    write_sweep_report(metrics, tmp_path / "sweep.csv", tmp_path / "summary.csv")
    assert (tmp_path / "sweep.csv").read_text().splitlines()[0] == \
        "threshold,phrase_id,accuracy,precision,recall,f1"
    assert "mean_f1" in (tmp_path / "summary.csv").read_text().splitlines()[0]

    sample = StratifiedSample(phrase_id="ph", entries=[("im1", 0.25, 2)], seed=0)
    write_sample([sample], tmp_path / "sample.csv")
    assert read_sample(tmp_path / "sample.csv") == [("ph", "im1", 0.25, 2)]
