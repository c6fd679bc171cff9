"""Two-annotator agreement: Cohen's kappa, adjudication, append-only label log.

Labels are persisted as an append-only log of actions (label / retract) so
the current state is always reproducible by replay; the annotation HTTP
service lives in annotation_service.py and builds on this module.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

LABELS = ("antisemitic", "islamophobic", "irrelevant")
ITEM_KINDS = ("phrase", "image-pair")


@dataclass
class LabelRecord:
    item_id: str
    item_kind: str
    annotator_id: str
    label: str
    timestamp: float


@dataclass
class AgreementReport:
    n_items: int
    percent_agreement: float
    kappa: float
    confusion: dict[str, dict[str, int]]


class DuplicateLabelError(ValueError):
    pass


def cohen_kappa(labels_a: Mapping[str, str], labels_b: Mapping[str, str]) -> AgreementReport:
    """Chance-corrected agreement: kappa = (p_o - p_e) / (1 - p_e).

    p_o is the observed agreement rate; p_e sums the products of the two
    annotators' label marginals. Degenerate marginals (p_e = 1) yield kappa 1
    only under perfect agreement, otherwise an error.
    """
    if set(labels_a) != set(labels_b):
        missing = set(labels_a) ^ set(labels_b)
        raise ValueError(f"annotators labeled different item sets; mismatched: {sorted(missing)[:5]}")
    n = len(labels_a)
    if n < 1:
        raise ValueError("kappa requires at least one item")

    label_set = sorted(set(labels_a.values()) | set(labels_b.values()))
    confusion = {la: {lb: 0 for lb in label_set} for la in label_set}
    for item, la in labels_a.items():
        confusion[la][labels_b[item]] += 1

    trace = sum(confusion[l][l] for l in label_set)
    row = {l: sum(confusion[l].values()) for l in label_set}
    col = {l: sum(confusion[la][l] for la in label_set) for l in label_set}
    # integer-exact form: (p_o - p_e)/(1 - p_e) = (n*trace - S)/(n^2 - S),
    # S = sum of row*column marginal products; one rounding at the division
    s = sum(row[l] * col[l] for l in label_set)
    numerator = n * trace - s
    denominator = n * n - s
    if denominator == 0:  # p_e = 1: both marginals are the same point mass
        if trace == n:
            kappa = 1.0
        else:
            raise ValueError("degenerate marginals: chance agreement is 1 but observed is not")
    else:
        kappa = numerator / denominator
    return AgreementReport(n_items=n, percent_agreement=trace / n, kappa=kappa,
                           confusion=confusion)


def disagreements(labels_a: Mapping[str, str], labels_b: Mapping[str, str]) -> dict[str, tuple[str, str]]:
    if set(labels_a) != set(labels_b):
        raise ValueError("annotators labeled different item sets")
    return {item: (labels_a[item], labels_b[item])
            for item in labels_a if labels_a[item] != labels_b[item]}


def adjudicate(labels_a: Mapping[str, str], labels_b: Mapping[str, str],
               resolutions: Mapping[str, str]) -> dict[str, str]:
    """Final labels = agreed labels plus one explicit resolution per disagreement."""
    disputed = disagreements(labels_a, labels_b)
    unresolved = sorted(set(disputed) - set(resolutions))
    if unresolved:
        raise ValueError(f"unresolved disagreements: {unresolved}")
    stray = sorted(set(resolutions) - set(disputed))
    if stray:
        raise ValueError(f"resolutions for items that are not disagreements: {stray}")
    final = {item: labels_a[item] for item in labels_a if item not in disputed}
    final.update(resolutions)
    return final


class LabelStore:
    """Append-only label log with tombstones; replay reproduces current state."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._current: dict[tuple[str, str], LabelRecord] = {}
        if self.path.exists():
            self._replay()

    def _replay(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                key = (obj["item_id"], obj["annotator_id"])
                if obj["action"] == "label":
                    self._current[key] = LabelRecord(
                        item_id=obj["item_id"], item_kind=obj["item_kind"],
                        annotator_id=obj["annotator_id"], label=obj["label"],
                        timestamp=obj["timestamp"])
                elif obj["action"] == "retract":
                    self._current.pop(key, None)

    def _append(self, obj: dict) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(obj) + "\n")

    def add(self, record: LabelRecord) -> None:
        if record.label not in LABELS:
            raise ValueError(f"unknown label {record.label!r}")
        if not record.annotator_id:
            raise ValueError("annotator_id must be non-empty")
        key = (record.item_id, record.annotator_id)
        if key in self._current:
            raise DuplicateLabelError(f"{key} already labeled")
        self._append({"action": "label", "item_id": record.item_id,
                      "item_kind": record.item_kind, "annotator_id": record.annotator_id,
                      "label": record.label, "timestamp": record.timestamp})
        self._current[key] = record

    def retract(self, item_id: str, annotator_id: str) -> None:
        key = (item_id, annotator_id)
        if key not in self._current:
            raise KeyError(f"no label to retract for {key}")
        self._append({"action": "retract", "item_id": item_id,
                      "annotator_id": annotator_id, "timestamp": time.time()})
        del self._current[key]

    def labels_for(self, annotator_id: str) -> dict[str, str]:
        return {item: rec.label for (item, annot), rec in self._current.items()
                if annot == annotator_id}

    def annotators(self) -> list[str]:
        return sorted({annot for _, annot in self._current})

    def records(self) -> list[LabelRecord]:
        return list(self._current.values())

    def __len__(self) -> int:
        return len(self._current)


def pairwise_report(store: LabelStore) -> AgreementReport | None:
    """Agreement over items labeled by the first two annotators (by id order)."""
    annotators = store.annotators()
    if len(annotators) < 2:
        return None
    a, b = annotators[:2]
    labels_a = store.labels_for(a)
    labels_b = store.labels_for(b)
    shared = sorted(set(labels_a) & set(labels_b))
    if not shared:
        return None
    return cohen_kappa({i: labels_a[i] for i in shared},
                       {i: labels_b[i] for i in shared})
