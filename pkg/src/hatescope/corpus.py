"""Corpus ingestion: normalize posts and image manifests into canonical streaming formats.

Canonical posts file: UTF-8 newline-delimited JSON, one post per line, fields
exactly {post_id, thread_id, timestamp_utc, raw_body, clean_text, image_ref}.
Image manifest: CSV with header image_id,storage_path,byte_size.

Ingestion is single-pass and keeps only one record in memory; post_id
uniqueness is assumed from the source and not tracked (a growing id set
would break the bounded-memory contract).
"""

from __future__ import annotations

import csv
import html
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

SOURCE_FORMATS = ("canonical", "fourchan-dump")

_TAG_RE = re.compile(r"<[^>]*>")
_WS_RE = re.compile(r"\s+")


@dataclass
class Post:
    post_id: str
    thread_id: str
    timestamp_utc: int
    raw_body: str
    clean_text: str
    image_ref: str | None = None


@dataclass
class ImageRecord:
    image_id: str
    storage_path: str
    byte_size: int
    width: int | None = None
    height: int | None = None
    phash: int | None = None


@dataclass
class CorpusManifest:
    post_count: int = 0
    image_count: int = 0
    time_span: tuple[int, int] = (0, 0)
    source_format: str = "canonical"


@dataclass
class SkipReport:
    """Per-record parse failures; these never abort the stream."""

    skipped: int = 0
    reasons: list[str] = field(default_factory=list)

    def record(self, line_no: int, reason: str) -> None:
        self.skipped += 1
        self.reasons.append(f"line {line_no}: {reason}")


def _is_url_token(token: str) -> bool:
    low = token.lower()
    return "://" in low or low.startswith("www.")


def _clean_pass(text: str) -> str:
    text = html.unescape(text)
    text = _TAG_RE.sub(" ", text)
    kept = [tok for tok in text.split() if not _is_url_token(tok)]
    return " ".join(kept)


def clean_text(raw_body: str) -> str:
    """Decode entities, strip tags, drop URL tokens, collapse whitespace.

    The pass order is decode -> strip -> de-URL; it is iterated to a fixed
    point so that doubly escaped markup cannot survive one pass and make
    the function non-idempotent.
    """
    text = raw_body
    for _ in range(5):
        cleaned = _clean_pass(text)
        if cleaned == text:
            return cleaned
        text = cleaned
    return text


def _post_to_canonical(post: Post) -> str:
    record = {
        "post_id": post.post_id,
        "thread_id": post.thread_id,
        "timestamp_utc": post.timestamp_utc,
        "raw_body": post.raw_body,
        "clean_text": post.clean_text,
        "image_ref": post.image_ref,
    }
    return json.dumps(record, ensure_ascii=False)


def _parse_canonical(obj: dict) -> Post:
    return Post(
        post_id=str(obj["post_id"]),
        thread_id=str(obj.get("thread_id", "")),
        timestamp_utc=int(obj["timestamp_utc"]),
        raw_body=str(obj.get("raw_body", "")),
        clean_text="",
        image_ref=obj.get("image_ref") or None,
    )


def _parse_fourchan(obj: dict) -> Post:
    # Public dump shape: no. / time / com / filename (+ext), resto for thread.
    no = obj["no"]
    resto = obj.get("resto", 0)
    image_ref = None
    if obj.get("filename") not in (None, ""):
        image_ref = str(obj["filename"]) + str(obj.get("ext", ""))
    return Post(
        post_id=str(no),
        thread_id=str(resto) if resto else str(no),
        timestamp_utc=int(obj["time"]),
        raw_body=str(obj.get("com", "")),
        clean_text="",
        image_ref=image_ref,
    )


def iter_posts(path: str | Path, source_format: str = "canonical",
               report: SkipReport | None = None) -> Iterator[Post]:
    """Stream posts from a newline-delimited file, skipping malformed records.

    clean_text is always recomputed from raw_body so the canonical form has a
    single source of truth.
    """
    if source_format not in SOURCE_FORMATS:
        raise ValueError(f"unknown source format: {source_format!r}")
    parse = _parse_canonical if source_format == "canonical" else _parse_fourchan
    report = report if report is not None else SkipReport()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                post = parse(obj)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                report.record(line_no, f"{type(exc).__name__}: {exc}")
                continue
            if post.timestamp_utc < 0:
                report.record(line_no, "negative timestamp")
                continue
            post.clean_text = clean_text(post.raw_body)
            yield post


def ingest_posts(src: str | Path, source_format: str,
                 dest: str | Path) -> tuple[CorpusManifest, SkipReport]:
    """Normalize a post dump into the canonical file at dest, single pass."""
    report = SkipReport()
    manifest = CorpusManifest(source_format=source_format)
    t_min: int | None = None
    t_max: int | None = None
    with open(dest, "w", encoding="utf-8") as out:
        for post in iter_posts(src, source_format, report):
            out.write(_post_to_canonical(post) + "\n")
            manifest.post_count += 1
            if post.image_ref is not None:
                manifest.image_count += 1
            t_min = post.timestamp_utc if t_min is None else min(t_min, post.timestamp_utc)
            t_max = post.timestamp_utc if t_max is None else max(t_max, post.timestamp_utc)
    if t_min is not None and t_max is not None:
        manifest.time_span = (t_min, t_max)
    return manifest, report


def read_posts(path: str | Path) -> Iterator[Post]:
    """Stream posts from a canonical file."""
    return iter_posts(path, "canonical")


def write_posts(posts: Iterable[Post], dest: str | Path) -> int:
    n = 0
    with open(dest, "w", encoding="utf-8") as out:
        for post in posts:
            out.write(_post_to_canonical(post) + "\n")
            n += 1
    return n


def write_image_manifest(records: Iterable[ImageRecord], dest: str | Path) -> int:
    n = 0
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "storage_path", "byte_size"])
        for rec in records:
            writer.writerow([rec.image_id, rec.storage_path, rec.byte_size])
            n += 1
    return n


def read_image_manifest(path: str | Path) -> Iterator[ImageRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            yield ImageRecord(
                image_id=row["image_id"],
                storage_path=row["storage_path"],
                byte_size=int(row["byte_size"]),
            )
