"""Descriptive statistics over the built datasets: CDFs, top-N tables, daily
series, Kendall tau-b with tie-corrected significance, and peak detection."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence


@dataclass
class CdfSeries:
    points: list[tuple[int, float]]


@dataclass
class DailySeries:
    points: list[tuple[date, int]]

    def counts(self) -> list[int]:
        return [c for _, c in self.points]


@dataclass
class CorrelationResult:
    tau_b: float
    p_value: float
    n: int


def cdf(counts: Sequence[int]) -> CdfSeries:
    """Empirical CDF: fraction at value v = share of items with count <= v."""
    if not counts:
        raise ValueError("cdf requires at least one count")
    n = len(counts)
    freq = Counter(counts)
    points = []
    cumulative = 0
    for value in sorted(freq):
        cumulative += freq[value]
        points.append((value, cumulative / n))
    return CdfSeries(points=points)


def top_n(items: Mapping[str, int], n: int = 15) -> list[tuple[str, int]]:
    """Descending count; ties broken by id."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ranked = sorted(items.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:n]


def _utc_date(ts: int) -> date:
    return datetime.fromtimestamp(ts, tz=timezone.utc).date()


def daily_series(timestamps: Iterable[int], span: tuple[int, int]) -> DailySeries:
    """Bucket by UTC calendar day over span, zero-filling missing days."""
    start, end = span
    if start > end:
        raise ValueError("span start after end")
    start_day = _utc_date(start)
    end_day = _utc_date(end)
    buckets: Counter[date] = Counter()
    for ts in timestamps:
        if ts < start or ts > end:
            raise ValueError(f"timestamp {ts} outside span {span}")
        buckets[_utc_date(ts)] += 1
    points = []
    day = start_day
    while day <= end_day:
        points.append((day, buckets.get(day, 0)))
        day += timedelta(days=1)
    return DailySeries(points=points)


def _dense_ranks(values: Sequence[float]) -> list[int]:
    order = {v: i for i, v in enumerate(sorted(set(values)))}
    return [order[v] for v in values]


class _Fenwick:
    def __init__(self, size: int) -> None:
        self.tree = [0] * (size + 1)

    def add(self, index: int) -> None:
        i = index + 1
        while i < len(self.tree):
            self.tree[i] += 1
            i += i & (-i)

    def prefix(self, index: int) -> int:
        # count of inserted items with rank <= index
        i = index + 1
        total = 0
        while i > 0:
            total += self.tree[i]
            i -= i & (-i)
        return total


def _tie_sum(values: Sequence[float], f) -> float:
    return sum(f(t) for t in Counter(values).values() if t > 1)


def kendall_tau_b(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """Tie-corrected Kendall rank correlation with a normal-approximation p-value.

    tau_b = (C - D) / sqrt((C + D + Tx)(C + D + Ty)) computed in O(n log n):
    discordant pairs are inversions of y after sorting by (x, y), counted with
    a Fenwick tree; tie terms come from the tie-group sizes. The p-value uses
    the tie-corrected variance of C - D and a two-sided normal tail.
    """
    n = len(x)
    if n != len(y):
        raise ValueError("series must be the same length")
    if n < 2:
        raise ValueError("need at least two observations")

    pairs = sorted(zip(x, y))
    ys = [p[1] for p in pairs]
    ranks = _dense_ranks(ys)
    tree = _Fenwick(max(ranks) + 1)
    discordant = 0
    for rank in reversed(ranks):
        if rank > 0:
            discordant += tree.prefix(rank - 1)
        tree.add(rank)

    n0 = n * (n - 1) // 2
    n1 = int(_tie_sum(x, lambda t: t * (t - 1) // 2))
    n2 = int(_tie_sum(y, lambda t: t * (t - 1) // 2))
    n3 = int(_tie_sum(list(zip(x, y)), lambda t: t * (t - 1) // 2))
    con_minus_dis = n0 - n1 - n2 + n3 - 2 * discordant

    denom_sq = (n0 - n1) * (n0 - n2)
    if denom_sq <= 0:
        raise ValueError("tau-b undefined: a series is entirely tied")
    tau = con_minus_dis / math.sqrt(denom_sq)

    v0 = n * (n - 1) * (2 * n + 5)
    vt = _tie_sum(x, lambda t: t * (t - 1) * (2 * t + 5))
    vu = _tie_sum(y, lambda t: t * (t - 1) * (2 * t + 5))
    sum_tx = _tie_sum(x, lambda t: t * (t - 1))
    sum_ty = _tie_sum(y, lambda t: t * (t - 1))
    sum_tx2 = _tie_sum(x, lambda t: t * (t - 1) * (t - 2))
    sum_ty2 = _tie_sum(y, lambda t: t * (t - 1) * (t - 2))
    var = (v0 - vt - vu) / 18 + (sum_tx * sum_ty) / (2 * n * (n - 1))
    if sum_tx2 and sum_ty2:
        var += (sum_tx2 * sum_ty2) / (9 * n * (n - 1) * (n - 2))
    if var <= 0:
        raise ValueError("tau-b variance non-positive; series degenerate")
    z = con_minus_dis / math.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2))
    return CorrelationResult(tau_b=tau, p_value=min(1.0, p), n=n)


def _distinct_permutations(values: list[float]):
    # Distinct arrangements of a multiset, lexicographic recursion.
    counts = Counter(values)
    keys = sorted(counts)
    n = len(values)
    slot: list[float] = [0.0] * n

    def rec(depth: int):
        if depth == n:
            yield tuple(slot)
            return
        for key in keys:
            if counts[key] > 0:
                counts[key] -= 1
                slot[depth] = key
                yield from rec(depth + 1)
                counts[key] += 1

    yield from rec(0)


def _inversion_distribution(n: int) -> list[int]:
    # counts[k] = number of permutations of n distinct items with k inversions
    counts = [1]
    for m in range(2, n + 1):
        new = [0] * (len(counts) + m - 1)
        running = 0
        for k in range(len(new)):
            running += counts[k] if k < len(counts) else 0
            if k - m >= 0:
                running -= counts[k - m]
            new[k] = running
        counts = new
    return counts


def _con_minus_dis(x: Sequence[float], y: Sequence[float]) -> int:
    total = 0
    n = len(x)
    for i in range(n):
        for j in range(i + 1, n):
            dx = (x[i] > x[j]) - (x[i] < x[j])
            dy = (y[i] > y[j]) - (y[i] < y[j])
            total += dx * dy
    return total


def kendall_exact_p(x: Sequence[float], y: Sequence[float],
                    max_arrangements: int = 1_000_000) -> float:
    """Exact two-sided permutation p-value for the tau statistic.

    Cross-check companion to the normal approximation. Untied series use the
    inversion-count distribution; tied series enumerate distinct arrangements
    of y, bounded by max_arrangements.
    """
    n = len(x)
    if n != len(y) or n < 2:
        raise ValueError("need two equal-length series")
    observed = abs(_con_minus_dis(x, y))
    untied = len(set(x)) == n and len(set(y)) == n
    if untied:
        n0 = n * (n - 1) // 2
        dist = _inversion_distribution(n)
        total = math.factorial(n)
        # C - D = n0 - 2k for k inversions
        hits = sum(c for k, c in enumerate(dist) if abs(n0 - 2 * k) >= observed)
        return hits / total
    counts = Counter(y)
    arrangements = math.factorial(n)
    for c in counts.values():
        arrangements //= math.factorial(c)
    if arrangements > max_arrangements:
        raise ValueError(
            f"{arrangements} distinct arrangements exceed budget {max_arrangements}")
    hits = 0
    for perm in _distinct_permutations(list(y)):
        if abs(_con_minus_dis(x, perm)) >= observed:
            hits += 1
    return hits / arrangements


def detect_peaks(series: DailySeries, z: float = 3.0) -> list[tuple[date, int]]:
    """Days with count > mean + z * std (population std), descending by count."""
    counts = series.counts()
    if len(counts) < 2:
        raise ValueError("series too short for peak detection")
    mean = sum(counts) / len(counts)
    variance = sum((c - mean) ** 2 for c in counts) / len(counts)
    cutoff = mean + z * math.sqrt(variance)
    peaks = [(day, count) for day, count in series.points if count > cutoff]
    peaks.sort(key=lambda p: (-p[1], p[0]))
    return peaks


def write_cdf(series: CdfSeries, dest: str | Path) -> None:
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "cumulative_fraction"])
        for value, fraction in series.points:
            writer.writerow([value, f"{fraction:.6f}"])


def write_daily_series(series: DailySeries, dest: str | Path) -> None:
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["utc_date", "post_count"])
        for day, count in series.points:
            writer.writerow([day.isoformat(), count])


def write_top_n(ranked: list[tuple[str, int]], dest: str | Path,
                id_header: str = "item_id") -> None:
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([id_header, "post_count"])
        for item_id, count in ranked:
            writer.writerow([item_id, count])
