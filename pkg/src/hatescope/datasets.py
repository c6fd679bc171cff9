"""Assemble the final textual and visual datasets with dual-label exclusions.

Textual: a post takes the category of the phrases matched in it; posts
matching phrases from both categories are excluded entirely (exclusion
happens before counting). Visual: imagery is grouped by exact perceptual
hash; a unique image takes the union of categories of all phrases hitting
any member, dual-category groups are excluded, and post counts cover every
post sharing any member image. Phrase item counts are the labeled phrase
sets themselves, not just the matched subset, so they line up with the
annotation outputs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .embedcore import SimilarityHit
from .phash import PHash64
from .phrasemine import Phrase, PhraseMatch, TARGET_CATEGORIES


@dataclass
class HateDataset:
    modality: str
    category: str
    item_ids: list[str]
    post_ids: list[str]

    @property
    def item_count(self) -> int:
        return len(self.item_ids)

    @property
    def post_count(self) -> int:
        return len(self.post_ids)


@dataclass
class ExclusionReport:
    modality: str
    excluded: list[str] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.excluded)


def _category_map(phrases: Sequence[Phrase]) -> dict[str, str]:
    categories = {}
    for phrase in phrases:
        if phrase.category not in TARGET_CATEGORIES:
            raise ValueError(f"phrase {phrase.phrase_id} is {phrase.category!r}, "
                             "expected a target category")
        categories[phrase.phrase_id] = phrase.category
    return categories


def build_textual(matches: Iterable[PhraseMatch],
                  phrases: Sequence[Phrase]) -> tuple[HateDataset, HateDataset, ExclusionReport]:
    categories = _category_map(phrases)
    post_categories: dict[str, set[str]] = {}
    for match in matches:
        if match.phrase_id not in categories:
            raise ValueError(f"match references unlabeled phrase {match.phrase_id}")
        post_categories.setdefault(match.post_id, set()).add(categories[match.phrase_id])

    exclusions = ExclusionReport(modality="textual")
    posts_by_category: dict[str, list[str]] = {c: [] for c in TARGET_CATEGORIES}
    for post_id in sorted(post_categories):
        cats = post_categories[post_id]
        if len(cats) > 1:
            exclusions.excluded.append(post_id)
            continue
        posts_by_category[next(iter(cats))].append(post_id)

    def dataset(category: str) -> HateDataset:
        item_ids = sorted(p.phrase_id for p in phrases if p.category == category)
        return HateDataset(modality="textual", category=category,
                           item_ids=item_ids, post_ids=posts_by_category[category])

    return dataset("antisemitic"), dataset("islamophobic"), exclusions


def hashes_by_image(records: Iterable[PHash64]) -> dict[str, int]:
    return {rec.image_id: rec.bits for rec in records}


def build_visual(hits: Iterable[SimilarityHit], phrases: Sequence[Phrase],
                 hashes: Mapping[str, int],
                 image_posts: Mapping[str, Sequence[str]]) -> tuple[HateDataset, HateDataset, ExclusionReport]:
    """Unique-image datasets; uniqueness is exact hash equality.

    image_posts maps image_id -> post_ids sharing that image (needed because
    visual post counts attribute every post whose image falls in a dataset's
    unique-hash group).
    """
    categories = _category_map(phrases)
    group_members: dict[int, set[str]] = {}
    for image_id, bits in hashes.items():
        group_members.setdefault(bits, set()).add(image_id)

    group_categories: dict[int, set[str]] = {}
    for hit in hits:
        if hit.image_id not in hashes:
            raise ValueError(f"hit references unhashed image {hit.image_id}")
        if hit.phrase_id not in categories:
            raise ValueError(f"hit references unlabeled phrase {hit.phrase_id}")
        bits = hashes[hit.image_id]
        group_categories.setdefault(bits, set()).add(categories[hit.phrase_id])

    exclusions = ExclusionReport(modality="visual")
    groups_by_category: dict[str, list[int]] = {c: [] for c in TARGET_CATEGORIES}
    for bits in sorted(group_categories):
        cats = group_categories[bits]
        if len(cats) > 1:
            exclusions.excluded.append(f"{bits:016x}")
            continue
        groups_by_category[next(iter(cats))].append(bits)

    def dataset(category: str) -> HateDataset:
        item_ids = [f"{bits:016x}" for bits in groups_by_category[category]]
        post_ids: set[str] = set()
        for bits in groups_by_category[category]:
            for image_id in group_members[bits]:
                post_ids.update(image_posts.get(image_id, ()))
        return HateDataset(modality="visual", category=category,
                           item_ids=sorted(item_ids), post_ids=sorted(post_ids))

    return dataset("antisemitic"), dataset("islamophobic"), exclusions


def most_related_phrase(image_id: str, hits: Iterable[SimilarityHit]) -> str:
    """Highest-cosine phrase for the image; ties resolve to the smaller phrase id."""
    mine = [h for h in hits if h.image_id == image_id]
    if not mine:
        raise ValueError(f"image {image_id} has no hits")
    mine.sort(key=lambda h: (-h.cosine, h.phrase_id))
    return mine[0].phrase_id


def write_dataset_manifest(dataset: HateDataset, dest: str | Path,
                           representative: Mapping[str, str] | None = None,
                           top_phrase: Mapping[str, tuple[str, float]] | None = None) -> None:
    """CSV per dataset: item, representative post/path, top phrase, cosine."""
    representative = representative or {}
    top_phrase = top_phrase or {}
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item_id", "representative", "top_phrase", "cosine"])
        for item_id in dataset.item_ids:
            phrase_id, cosine = top_phrase.get(item_id, ("", float("nan")))
            cosine_text = f"{cosine:.6f}" if cosine == cosine else ""
            writer.writerow([item_id, representative.get(item_id, ""),
                             phrase_id, cosine_text])


def write_counts_summary(datasets: Sequence[HateDataset],
                         exclusions: Sequence[ExclusionReport],
                         dest: str | Path) -> None:
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["modality", "category", "item_count", "post_count"])
        for ds in datasets:
            writer.writerow([ds.modality, ds.category, ds.item_count, ds.post_count])
        for report in exclusions:
            writer.writerow([report.modality, "excluded-dual-label", report.count, ""])
