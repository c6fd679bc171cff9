"""Pipeline configuration: one TOML file, environment overrides for secrets.

Every default encodes the constants the methodology fixes (toxicity 0.8,
top-200 terms, phrase frequency >= 5 and length <= 7, a 10-phrase 8/2
calibration draw over 4 ranges x 50 images, similarity threshold 0.3), so
a faithful run needs no flags.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import tomli


@dataclass
class PathsConfig:
    run_dir: str = "runs/default"
    posts_source: str = ""
    posts_format: str = "canonical"
    image_manifest: str = ""
    image_root: str = ""
    keyword_file: str = ""
    toxicity_lexicon: str = ""
    fixture_vectors_text: str = ""
    fixture_vectors_image: str = ""
    phrase_labels: str = ""
    pair_labels: str = ""
    label_log: str = ""


@dataclass
class ToxicityConfig:
    threshold: float = 0.8
    provider: str = "lexicon"  # lexicon | remote
    endpoint: str = "https://commentanalyzer.googleapis.com/v1alpha1/comments:analyze"
    attribute: str = "SEVERE_TOXICITY"
    max_requests_per_second: float = 10.0
    max_retries: int = 2
    max_in_flight: int = 1


@dataclass
class KeywordsConfig:
    top_k: int = 200


@dataclass
class PhrasesConfig:
    min_freq: int = 5
    max_words: int = 7


@dataclass
class SimilarityConfig:
    threshold: float = 0.3
    provider: str = "procedural"  # procedural | fixture | remote
    endpoint: str = "http://127.0.0.1:8500"
    dim: int = 64
    block_rows: int = 2048
    workers: int = 1


@dataclass
class CalibrationConfig:
    ranges: list[list[float]] = field(default_factory=lambda: [
        [0.0, 0.20], [0.2, 0.25], [0.25, 0.3], [0.3, 0.4]])
    per_range: int = 50
    phrases_total: int = 10
    quota_antisemitic: int = 8
    quota_islamophobic: int = 2
    thresholds: list[float] = field(default_factory=list)  # empty -> default grid
    sweep_every: int = 10


@dataclass
class SeedsConfig:
    sample: int = 1337
    procedural: int = 0


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    toxicity: ToxicityConfig = field(default_factory=ToxicityConfig)
    keywords: KeywordsConfig = field(default_factory=KeywordsConfig)
    phrases: PhrasesConfig = field(default_factory=PhrasesConfig)
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)
    api_key: str = ""  # never read from file; PERSPECTIVE_API_KEY env only

    def validate(self) -> None:
        if not 0.0 <= self.toxicity.threshold <= 1.0:
            raise ValueError("toxicity threshold must be in [0, 1]")
        if not -1.0 <= self.similarity.threshold <= 1.0:
            raise ValueError("similarity threshold must be in [-1, 1]")
        if self.phrases.min_freq < 1 or self.phrases.max_words < 1:
            raise ValueError("phrase filters must be positive")
        if self.keywords.top_k < 1:
            raise ValueError("top_k must be >= 1")
        quota = self.calibration.quota_antisemitic + self.calibration.quota_islamophobic
        if quota != self.calibration.phrases_total:
            raise ValueError("calibration quotas must sum to phrases_total")
        for lo, hi in self.calibration.ranges:
            if lo > hi:
                raise ValueError(f"bad calibration range [{lo}, {hi}]")

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop("api_key")  # secrets never land in manifests
        return data

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _apply_section(target, data: dict) -> None:
    for key, value in data.items():
        if not hasattr(target, key):
            raise ValueError(f"unknown config key {key!r} for {type(target).__name__}")
        setattr(target, key, value)


def load_config(path: str | Path) -> PipelineConfig:
    with open(path, "rb") as fh:
        data = tomli.load(fh)
    config = PipelineConfig()
    sections = {"paths": config.paths, "toxicity": config.toxicity,
                "keywords": config.keywords, "phrases": config.phrases,
                "similarity": config.similarity, "calibration": config.calibration,
                "seeds": config.seeds}
    for name, payload in data.items():
        if name not in sections:
            raise ValueError(f"unknown config section {name!r}")
        _apply_section(sections[name], payload)
    config.api_key = os.environ.get("PERSPECTIVE_API_KEY", "")
    if os.environ.get("HATESCOPE_SIDECAR_URL"):
        config.similarity.endpoint = os.environ["HATESCOPE_SIDECAR_URL"]
    config.validate()
    return config
