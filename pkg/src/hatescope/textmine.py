"""Term ranking over the toxic post subset: tokenization, TF-IDF, top-K report.

The ranked report surfaces candidate target keywords; the actual keyword
selection is a human step recorded as a plain-text file (one keyword per
line). A default selection ships with the package.
"""

from __future__ import annotations

import csv
import math
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

_WORD_RE = re.compile(r"\w+")


@dataclass
class TermScore:
    term: str
    document_frequency: int
    corpus_tfidf: float


@dataclass
class KeywordSelection:
    keywords: set[str]
    selected_by: str = ""
    source_rank_cutoff: int = 0


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens split on Unicode word boundaries. Stopwords stay."""
    return _WORD_RE.findall(text.lower())


def load_stopwords() -> set[str]:
    text = resources.files("hatescope.data").joinpath("stopwords_en.txt").read_text("utf-8")
    return {line.strip() for line in text.splitlines()
            if line.strip() and not line.startswith("#")}


def default_keywords() -> set[str]:
    text = resources.files("hatescope.data").joinpath("keywords_default.txt").read_text("utf-8")
    return {line.strip() for line in text.splitlines() if line.strip()}


def build_tfidf(documents: Iterable[list[str]], stopwords: set[str]) -> list[TermScore]:
    """Aggregate corpus TF-IDF: score(t) = total_tf(t) * ln(N / df(t)).

    Raw term counts, natural-log idf, summed over documents. Only the
    resulting ranking is consumed downstream, so the simplest auditable
    variant is used.
    """
    total_tf: Counter[str] = Counter()
    df: Counter[str] = Counter()
    n_docs = 0
    any_tokens = False
    for tokens in documents:
        n_docs += 1
        kept = [t for t in tokens if t not in stopwords]
        if kept:
            any_tokens = True
        total_tf.update(kept)
        df.update(set(kept))
    if n_docs == 0 or not any_tokens:
        raise ValueError("TF-IDF requires at least one non-empty document")
    return [
        TermScore(term, df[term], total_tf[term] * math.log(n_docs / df[term]))
        for term in total_tf
    ]


def top_terms(scores: list[TermScore], k: int = 200) -> list[TermScore]:
    """Top k by corpus_tfidf descending; ties broken by lexicographic term order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(scores, key=lambda s: (-s.corpus_tfidf, s.term))
    return ranked[:k]


def write_term_report(scores: list[TermScore], dest: str | Path) -> None:
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["term", "document_frequency", "corpus_tfidf"])
        for s in scores:
            writer.writerow([s.term, s.document_frequency, f"{s.corpus_tfidf:.6f}"])


def read_keyword_selection(path: str | Path) -> KeywordSelection:
    keywords = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            word = line.strip()
            if word:
                keywords.add(word)
    return KeywordSelection(keywords=keywords)


def write_keyword_selection(selection: KeywordSelection, dest: str | Path) -> None:
    with open(dest, "w", encoding="utf-8") as fh:
        for word in sorted(selection.keywords):
            fh.write(word + "\n")


def iter_documents(texts: Iterable[str]) -> Iterator[list[str]]:
    for text in texts:
        yield tokenize(text)
