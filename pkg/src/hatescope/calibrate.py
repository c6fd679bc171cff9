"""Threshold calibration: stratified pair sampling, metric sweeps, selection.

The sampling plan mirrors the annotation protocol: a category-quota draw of
phrases, then per phrase a fixed number of images drawn uniformly without
replacement from each cosine range. All draws are seeded and reproducible;
range shortfalls take everything available and are recorded, never padded.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .phrasemine import Phrase

# [lo, hi) per range; the final range is closed above.
DEFAULT_RANGES: tuple[tuple[float, float], ...] = (
    (0.0, 0.20), (0.2, 0.25), (0.25, 0.3), (0.3, 0.4))
DEFAULT_PER_RANGE = 50
DEFAULT_PHRASE_QUOTA: dict[str, int] = {"antisemitic": 8, "islamophobic": 2}

METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


@dataclass
class StratifiedSample:
    phrase_id: str
    entries: list[tuple[str, float, int]]  # (image_id, cosine, range_index)
    seed: int
    shortfalls: list[tuple[int, int]] = field(default_factory=list)  # (range_index, missing)


@dataclass
class PhraseMetrics:
    phrase_id: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    undefined_precision: bool = False
    undefined_recall: bool = False


@dataclass
class ThresholdMetrics:
    threshold: float
    per_phrase: list[PhraseMetrics]
    mean: dict[str, float]
    std: dict[str, float]


def _entropy(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def default_thresholds() -> list[float]:
    """0.05 steps over [0.0, 0.5]; includes the default operating point 0.3."""
    return [round(i * 0.05, 2) for i in range(11)]


def sample_phrases(phrases: Sequence[Phrase], n: int = 10,
                   category_quota: Mapping[str, int] | None = None,
                   seed: int = 0) -> list[Phrase]:
    """Quota-exact category draw, deterministic under seed."""
    quota = dict(category_quota) if category_quota is not None else dict(DEFAULT_PHRASE_QUOTA)
    if sum(quota.values()) != n:
        raise ValueError(f"quota sums to {sum(quota.values())}, expected n={n}")
    by_category: dict[str, list[Phrase]] = {}
    for phrase in phrases:
        by_category.setdefault(phrase.category, []).append(phrase)
    chosen: list[Phrase] = []
    for category in sorted(quota):
        want = quota[category]
        pool = sorted(by_category.get(category, []), key=lambda p: p.phrase_id)
        if len(pool) < want:
            raise ValueError(f"category {category!r} has {len(pool)} phrases, "
                             f"quota needs {want}")
        rng = np.random.default_rng([seed, _entropy(category)])
        picks = rng.choice(len(pool), size=want, replace=False)
        chosen.extend(pool[i] for i in sorted(picks.tolist()))
    chosen.sort(key=lambda p: (p.category, p.phrase_id))
    return chosen


def stratified_sample(phrase_id: str, cosines: Mapping[str, float],
                      ranges: Sequence[tuple[float, float]] = DEFAULT_RANGES,
                      per_range: int = DEFAULT_PER_RANGE,
                      seed: int = 0) -> StratifiedSample:
    """per_range uniform draws without replacement from each cosine range.

    cosines maps image_id -> cosine for this phrase against all images.
    Ranges are [lo, hi) except the last, which is closed above.
    """
    sample = StratifiedSample(phrase_id=phrase_id, entries=[], seed=seed)
    last = len(ranges) - 1
    for index, (lo, hi) in enumerate(ranges):
        if index == last:
            pool = [(i, c) for i, c in cosines.items() if lo <= c <= hi]
        else:
            pool = [(i, c) for i, c in cosines.items() if lo <= c < hi]
        pool.sort()
        if len(pool) <= per_range:
            picks = pool
            if len(pool) < per_range:
                sample.shortfalls.append((index, per_range - len(pool)))
        else:
            rng = np.random.default_rng([seed, _entropy(phrase_id), index])
            chosen = rng.choice(len(pool), size=per_range, replace=False)
            picks = [pool[i] for i in sorted(chosen.tolist())]
        sample.entries.extend((image_id, cosine, index) for image_id, cosine in picks)
    return sample


def _confusion(pairs: Iterable[tuple[bool, float]], threshold: float) -> tuple[int, int, int, int]:
    tp = fp = tn = fn = 0
    for positive, cos in pairs:
        predicted = cos >= threshold
        if predicted and positive:
            tp += 1
        elif predicted:
            fp += 1
        elif positive:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def _sample_std(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    mean = sum(values) / len(values)
    return math.sqrt(sum((v - mean) ** 2 for v in values) / (len(values) - 1))


def sweep(labels: Mapping[tuple[str, str], bool],
          cosines: Mapping[tuple[str, str], float],
          thresholds: Sequence[float] | None = None) -> list[ThresholdMetrics]:
    """Per-phrase accuracy/precision/recall/F1 at each threshold.

    Prediction is cosine >= threshold. Zero-denominator precision or recall
    is reported as 0 with an explicit flag so cross-phrase means stay
    defined; F1 is 0 when precision + recall is 0.
    """
    thresholds = list(thresholds) if thresholds is not None else default_thresholds()
    missing = [pair for pair in labels if pair not in cosines]
    if missing:
        raise ValueError(f"labeled pairs lack cosines: {sorted(missing)[:5]}")
    by_phrase: dict[str, list[tuple[bool, float]]] = {}
    for (phrase_id, image_id), positive in labels.items():
        by_phrase.setdefault(phrase_id, []).append(
            (positive, cosines[(phrase_id, image_id)]))

    out: list[ThresholdMetrics] = []
    for threshold in thresholds:
        per_phrase: list[PhraseMetrics] = []
        for phrase_id in sorted(by_phrase):
            tp, fp, tn, fn = _confusion(by_phrase[phrase_id], threshold)
            n = tp + fp + tn + fn
            accuracy = (tp + tn) / n
            undefined_p = (tp + fp) == 0
            undefined_r = (tp + fn) == 0
            precision = 0.0 if undefined_p else tp / (tp + fp)
            recall = 0.0 if undefined_r else tp / (tp + fn)
            f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
            per_phrase.append(PhraseMetrics(
                phrase_id=phrase_id, accuracy=accuracy, precision=precision,
                recall=recall, f1=f1, undefined_precision=undefined_p,
                undefined_recall=undefined_r))
        mean = {}
        std = {}
        for name in METRIC_NAMES:
            values = [getattr(m, name) for m in per_phrase]
            mean[name] = sum(values) / len(values)
            std[name] = _sample_std(values)
        out.append(ThresholdMetrics(threshold=threshold, per_phrase=per_phrase,
                                    mean=mean, std=std))
    return out


def select_threshold(metrics: Sequence[ThresholdMetrics],
                     criterion: str = "f1") -> float:
    """Threshold with the highest cross-phrase mean of the criterion; ties
    resolve to the lower threshold."""
    if not metrics:
        raise ValueError("empty sweep")
    best = sorted(metrics, key=lambda m: (-m.mean[criterion], m.threshold))[0]
    return best.threshold


def write_sweep_report(metrics: Sequence[ThresholdMetrics], dest: str | Path,
                       summary_dest: str | Path | None = None) -> None:
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "phrase_id", "accuracy", "precision", "recall", "f1"])
        for tm in metrics:
            for pm in tm.per_phrase:
                writer.writerow([f"{tm.threshold:.2f}", pm.phrase_id,
                                 f"{pm.accuracy:.6f}", f"{pm.precision:.6f}",
                                 f"{pm.recall:.6f}", f"{pm.f1:.6f}"])
    if summary_dest is not None:
        with open(summary_dest, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            header = ["threshold"]
            for name in METRIC_NAMES:
                header += [f"mean_{name}", f"std_{name}"]
            writer.writerow(header)
            for tm in metrics:
                row = [f"{tm.threshold:.2f}"]
                for name in METRIC_NAMES:
                    row += [f"{tm.mean[name]:.6f}", f"{tm.std[name]:.6f}"]
                writer.writerow(row)


def write_sample(samples: Sequence[StratifiedSample], dest: str | Path) -> None:
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phrase_id", "image_id", "cosine", "range_index"])
        for sample in samples:
            for image_id, cosine, range_index in sample.entries:
                writer.writerow([sample.phrase_id, image_id, f"{cosine:.6f}", range_index])


def read_sample(path: str | Path) -> list[tuple[str, str, float, int]]:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append((row["phrase_id"], row["image_id"],
                         float(row["cosine"]), int(row["range_index"])))
    return rows
