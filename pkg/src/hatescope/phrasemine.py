"""Candidate phrase extraction and corpus-wide phrase matching.

Sentences from keyword-filtered toxic posts are lemmatized whole; duplicate
lemma sequences are counted and frequency/length filters applied. Finalized
phrases are then matched as contiguous lemma subsequences inside lemmatized
sentences of the entire corpus, so matching is consistent with extraction.

The lemmatizer is a lookup-table + suffix-rule morphological reducer: an
exception table handles irregular forms, and a suffix rule only fires when
the reduced stem is attested in the bundled lexicon. Unknown tokens pass
through unchanged.
"""

from __future__ import annotations

import csv
import hashlib
import json
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .corpus import Post
from .textmine import tokenize

CATEGORIES = ("antisemitic", "islamophobic", "irrelevant", "unlabeled")
TARGET_CATEGORIES = ("antisemitic", "islamophobic")

_SENTENCE_SPLIT_RE = re.compile(r"([.!?]+|\n+)")
_TRAILING_WORD_RE = re.compile(r"(\w+)\W*$")

# Ordered (suffix, replacements); first attested candidate wins.
_NOUN_RULES: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("ses", ("s",)),
    ("xes", ("x",)),
    ("zes", ("z",)),
    ("ches", ("ch",)),
    ("shes", ("sh",)),
    ("ies", ("y",)),
    ("ves", ("f", "fe")),
    ("es", ("e", "")),
    ("s", ("",)),
)
_VERB_RULES: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("ies", ("y",)),
    ("es", ("e", "")),
    ("ed", ("e", "")),
    ("ing", ("e", "")),
    ("s", ("",)),
)


@dataclass
class Phrase:
    phrase_id: str
    lemma_tokens: list[str]
    surface_example: str
    frequency: int
    category: str = "unlabeled"
    multi_target: bool = False


@dataclass
class PhraseMatch:
    post_id: str
    phrase_id: str
    sentence_index: int
    token_offset: int


@dataclass
class ExtractionStats:
    sentence_count: int = 0
    distinct_sentences: int = 0
    dropped_short_freq: int = 0
    dropped_long: int = 0


def _load_lines(name: str) -> list[str]:
    text = resources.files("hatescope.data").joinpath(name).read_text("utf-8")
    return [line.strip() for line in text.splitlines()
            if line.strip() and not line.startswith("#")]


@lru_cache(maxsize=1)
def _abbreviations() -> frozenset[str]:
    return frozenset(_load_lines("abbreviations.txt"))


@lru_cache(maxsize=1)
def _lemma_exceptions() -> dict[str, str]:
    table = {}
    for line in _load_lines("lemma_exceptions.txt"):
        form, lemma = line.split()
        table[form] = lemma
    return table


@lru_cache(maxsize=1)
def _lexicon() -> frozenset[str]:
    return frozenset(_load_lines("lemma_lexicon.txt"))


def split_sentences(clean: str) -> list[str]:
    """Split on sentence-final punctuation and newlines; abbreviation-guarded."""
    abbrevs = _abbreviations()
    sentences: list[str] = []
    current: list[str] = []

    def flush() -> None:
        sentence = "".join(current).strip()
        if sentence:
            sentences.append(sentence)
        current.clear()

    for part in _SENTENCE_SPLIT_RE.split(clean):
        if not part:
            continue
        if part[0] == "\n":
            flush()
            continue
        if part[0] in ".!?":
            current.append(part)
            if part == ".":
                match = _TRAILING_WORD_RE.search("".join(current[:-1]))
                if match and match.group(1).lower() in abbrevs:
                    continue
            flush()
            continue
        current.append(part)
    flush()
    return sentences


def lemmatize_token(token: str) -> str:
    exceptions = _lemma_exceptions()
    if token in exceptions:
        return exceptions[token]
    lexicon = _lexicon()
    if token in lexicon:
        return token
    for rules in (_NOUN_RULES, _VERB_RULES):
        for suffix, replacements in rules:
            if token.endswith(suffix) and len(token) > len(suffix):
                for repl in replacements:
                    candidate = token[: -len(suffix)] + repl
                    if candidate in lexicon:
                        return candidate
    return token


def lemmatize(tokens: Sequence[str]) -> list[str]:
    """Map lowercase tokens to lemmas; unknown tokens pass through unchanged."""
    return [lemmatize_token(t) for t in tokens]


def phrase_id_for(lemmas: Sequence[str]) -> str:
    """Content-addressed phrase id: stable across runs and machines."""
    digest = hashlib.sha1(" ".join(lemmas).encode("utf-8")).hexdigest()
    return "p" + digest[:12]


def sentence_lemmas(clean: str) -> list[list[str]]:
    return [lemmatize(tokenize(sentence)) for sentence in split_sentences(clean)]


def extract_candidates(posts: Iterable[Post], min_freq: int = 5, max_words: int = 7,
                       keyword_groups: dict[str, set[str]] | None = None,
                       stats: ExtractionStats | None = None) -> list[Phrase]:
    """Count lemmatized whole sentences; keep frequency >= min_freq, length <= max_words.

    Input posts must already be toxicity- and keyword-filtered. Frequency is
    per sentence occurrence; each surviving candidate keeps its
    lexicographically smallest surface sentence so the result is invariant
    under post ordering.
    """
    counts: Counter[tuple[str, ...]] = Counter()
    surfaces: dict[tuple[str, ...], str] = {}
    stats = stats if stats is not None else ExtractionStats()
    for post in posts:
        for sentence in split_sentences(post.clean_text):
            lemmas = tuple(lemmatize(tokenize(sentence)))
            if not lemmas:
                continue
            stats.sentence_count += 1
            counts[lemmas] += 1
            prior = surfaces.get(lemmas)
            if prior is None or sentence < prior:
                surfaces[lemmas] = sentence

    group_lemmas = _lemmatized_groups(keyword_groups) if keyword_groups else {}
    candidates: list[Phrase] = []
    stats.distinct_sentences = len(counts)
    for lemmas, freq in counts.items():
        if freq < min_freq:
            stats.dropped_short_freq += 1
            continue
        if len(lemmas) > max_words:
            stats.dropped_long += 1
            continue
        phrase = Phrase(
            phrase_id=phrase_id_for(lemmas),
            lemma_tokens=list(lemmas),
            surface_example=surfaces[lemmas],
            frequency=freq,
        )
        if group_lemmas:
            hit_groups = {name for name, words in group_lemmas.items()
                          if words.intersection(lemmas)}
            phrase.multi_target = len(hit_groups) >= 2
        candidates.append(phrase)
    candidates.sort(key=lambda p: (-p.frequency, p.lemma_tokens))
    return candidates


def _lemmatized_groups(keyword_groups: dict[str, set[str]]) -> dict[str, set[str]]:
    out: dict[str, set[str]] = {}
    for name, words in keyword_groups.items():
        expanded = set(words)
        expanded.update(lemmatize_token(w) for w in words)
        out[name] = expanded
    return out


def match_phrases(corpus: Iterable[Post], phrases: Sequence[Phrase]) -> Iterator[PhraseMatch]:
    """All contiguous lemma-subsequence matches inside lemmatized sentences."""
    for phrase in phrases:
        if phrase.category not in TARGET_CATEGORIES:
            raise ValueError(
                f"phrase {phrase.phrase_id} has category {phrase.category!r}; "
                f"matching requires one of {TARGET_CATEGORIES}")
    by_first: dict[str, list[Phrase]] = defaultdict(list)
    for phrase in phrases:
        by_first[phrase.lemma_tokens[0]].append(phrase)
    for post in corpus:
        for s_idx, lemmas in enumerate(sentence_lemmas(post.clean_text)):
            for offset, lemma in enumerate(lemmas):
                for phrase in by_first.get(lemma, ()):
                    k = len(phrase.lemma_tokens)
                    if lemmas[offset:offset + k] == phrase.lemma_tokens:
                        yield PhraseMatch(post.post_id, phrase.phrase_id, s_idx, offset)


def write_phrases(phrases: Iterable[Phrase], dest: str | Path) -> None:
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phrase_id", "lemmas", "frequency", "category", "surface_example"])
        for p in phrases:
            writer.writerow([p.phrase_id, " ".join(p.lemma_tokens), p.frequency,
                             p.category, p.surface_example])


def read_phrases(path: str | Path) -> list[Phrase]:
    phrases = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            phrases.append(Phrase(
                phrase_id=row["phrase_id"],
                lemma_tokens=row["lemmas"].split(),
                frequency=int(row["frequency"]),
                category=row["category"],
                surface_example=row["surface_example"],
            ))
    return phrases


def write_matches(matches: Iterable[PhraseMatch], dest: str | Path) -> int:
    ordered = sorted(matches, key=lambda m: (m.post_id, m.phrase_id,
                                             m.sentence_index, m.token_offset))
    with open(dest, "w", encoding="utf-8") as fh:
        for m in ordered:
            fh.write(json.dumps({
                "post_id": m.post_id,
                "phrase_id": m.phrase_id,
                "sentence_index": m.sentence_index,
                "token_offset": m.token_offset,
            }) + "\n")
    return len(ordered)


def read_matches(path: str | Path) -> Iterator[PhraseMatch]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            yield PhraseMatch(obj["post_id"], obj["phrase_id"],
                              obj["sentence_index"], obj["token_offset"])
