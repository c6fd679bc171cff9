"""Pipeline orchestration: every stage as a subcommand over one config file.

Each stage writes its module's external format under the run directory and
appends a run-manifest entry (input digests, output digests, config
snapshot digest, timing). Re-running a stage with identical inputs and
config is a no-op. One stage runs at a time per run directory (lock file).

Exit codes: 0 success, 2 precondition failure, 3 provider failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import shutil
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import agreement as agreement_mod
from . import analytics, calibrate, corpus, datasets, embedcore, phash, phrasemine
from . import textmine, toxicity
from .config import PipelineConfig, load_config

REL = {
    "posts": "posts.ndjson",
    "ingest_manifest": "ingest_manifest.json",
    "scores": "toxicity_scores.ndjson",
    "toxic_posts": "toxic_posts.txt",
    "toxicity_failures": "toxicity_failures.json",
    "terms": "terms.csv",
    "keywords": "keywords.txt",
    "candidates": "candidates.csv",
    "phrases_labeled": "phrases_labeled.csv",
    "matches": "matches.ndjson",
    "phrase_store": "embeds/phrases.mmv1",
    "image_store": "embeds/images.mmv1",
    "embed_skips": "embed_skips.json",
    "hits": "hits.csv",
    "sampled_phrases": "sampled_phrases.txt",
    "sample": "sample.csv",
    "sample_shortfalls": "sample_shortfalls.json",
    "agreement": "agreement.json",
    "sweep": "sweep.csv",
    "sweep_summary": "sweep_summary.csv",
    "threshold": "threshold.json",
    "hashes": "hashes.csv",
    "phash_skips": "phash_skips.json",
    "counts": "datasets/counts.csv",
    "exclusions": "datasets/exclusions.json",
    "correlation": "analytics/correlation.json",
    "peaks": "analytics/peaks.csv",
    "report": "report.txt",
    "manifest": "manifest.jsonl",
}

DATASET_FILES = ["datasets/textual_antisemitic.csv", "datasets/textual_islamophobic.csv",
                 "datasets/visual_antisemitic.csv", "datasets/visual_islamophobic.csv",
                 "datasets/counts.csv", "datasets/exclusions.json"]
ANALYTICS_FILES = (
    [f"analytics/cdf_textual_{c}.csv" for c in ("antisemitic", "islamophobic")] +
    [f"analytics/cdf_visual_{c}.csv" for c in ("antisemitic", "islamophobic")] +
    [f"analytics/top_phrases_{c}.csv" for c in ("antisemitic", "islamophobic")] +
    [f"analytics/top_images_{c}.csv" for c in ("antisemitic", "islamophobic")] +
    [f"analytics/daily_textual_{c}.csv" for c in ("antisemitic", "islamophobic")] +
    [f"analytics/daily_visual_{c}.csv" for c in ("antisemitic", "islamophobic")] +
    ["analytics/correlation.json", "analytics/peaks.csv"])


class MissingUpstreamError(RuntimeError):
    def __init__(self, stage: str, requires: str):
        super().__init__(f"stage {stage!r} requires: {requires}")
        self.requires = requires


class StageLockError(RuntimeError):
    pass


def run_path(cfg: PipelineConfig, key: str) -> Path:
    return Path(cfg.paths.run_dir) / REL[key]


def _digest_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digests(paths: list[Path]) -> dict[str, str]:
    return {str(p): _digest_file(p) for p in sorted(paths) if p.exists()}


def _read_manifest(cfg: PipelineConfig) -> list[dict]:
    path = run_path(cfg, "manifest")
    if not path.exists():
        return []
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                entries.append(json.loads(line))
    return entries


def _append_manifest(cfg: PipelineConfig, entry: dict) -> None:
    path = run_path(cfg, "manifest")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")


class StageLock:
    def __init__(self, cfg: PipelineConfig):
        self.path = Path(cfg.paths.run_dir) / ".lock"

    def __enter__(self) -> "StageLock":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = self.path.open("x")
        except FileExistsError:
            raise StageLockError(
                f"run directory is locked ({self.path}); remove the lock if stale")
        with fd:
            fd.write(str(time.time()))
        return self

    def __exit__(self, *exc) -> None:
        self.path.unlink(missing_ok=True)


# ---------------------------------------------------------------- stage bodies


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def stage_ingest(cfg: PipelineConfig) -> None:
    src = Path(cfg.paths.posts_source)
    if not src.exists():
        raise FileNotFoundError(f"posts source not found: {src}")
    dest = run_path(cfg, "posts")
    dest.parent.mkdir(parents=True, exist_ok=True)
    manifest, report = corpus.ingest_posts(src, cfg.paths.posts_format, dest)
    _write_json(run_path(cfg, "ingest_manifest"), {
        "post_count": manifest.post_count,
        "image_count": manifest.image_count,
        "time_span": list(manifest.time_span),
        "source_format": manifest.source_format,
        "skipped": report.skipped,
        "skip_reasons": report.reasons[:50],
    })


def _toxicity_provider(cfg: PipelineConfig):
    if cfg.toxicity.provider == "lexicon":
        lexicon = cfg.paths.toxicity_lexicon
        if not lexicon:
            raise ValueError("toxicity.provider=lexicon requires paths.toxicity_lexicon")
        return toxicity.LexiconScorer.from_file(lexicon)
    if cfg.toxicity.provider == "remote":
        return toxicity.PerspectiveScorer(cfg.toxicity.endpoint, api_key=cfg.api_key,
                                          attribute=cfg.toxicity.attribute)
    raise ValueError(f"unknown toxicity provider {cfg.toxicity.provider!r}")


def stage_toxicity(cfg: PipelineConfig) -> None:
    provider = _toxicity_provider(cfg)
    scorer_config = toxicity.ScorerConfig(
        endpoint=cfg.toxicity.endpoint,
        max_requests_per_second=cfg.toxicity.max_requests_per_second,
        max_retries=cfg.toxicity.max_retries,
        cache_path=Path(cfg.paths.run_dir) / "toxicity_cache.ndjson",
        max_in_flight=cfg.toxicity.max_in_flight)
    report = toxicity.FailureReport()
    scores = list(toxicity.score_posts(corpus.read_posts(run_path(cfg, "posts")),
                                       provider, scorer_config, report=report))
    scores.sort(key=lambda s: s.post_id)
    toxicity.write_scores(scores, run_path(cfg, "scores"))
    toxic = sorted(toxicity.filter_toxic(scores, cfg.toxicity.threshold))
    run_path(cfg, "toxic_posts").write_text(
        "".join(pid + "\n" for pid in toxic), encoding="utf-8")
    _write_json(run_path(cfg, "toxicity_failures"),
                {"count": len(report.failures), "failures": report.failures[:50]})


def _toxic_ids(cfg: PipelineConfig) -> set[str]:
    return {line.strip() for line in
            run_path(cfg, "toxic_posts").read_text(encoding="utf-8").splitlines()
            if line.strip()}


def stage_keywords(cfg: PipelineConfig) -> None:
    toxic = _toxic_ids(cfg)
    documents = (textmine.tokenize(post.clean_text)
                 for post in corpus.read_posts(run_path(cfg, "posts"))
                 if post.post_id in toxic)
    scores = textmine.build_tfidf(documents, textmine.load_stopwords())
    ranked = textmine.top_terms(scores, cfg.keywords.top_k)
    textmine.write_term_report(ranked, run_path(cfg, "terms"))
    dest = run_path(cfg, "keywords")
    if cfg.paths.keyword_file:
        shutil.copyfile(cfg.paths.keyword_file, dest)
    elif not dest.exists():
        # keyword choice is a human step; the bundled selection is the default
        textmine.write_keyword_selection(
            textmine.KeywordSelection(keywords=textmine.default_keywords()), dest)


DEFAULT_KEYWORD_GROUPS = {
    "jewish": {"jews", "kike", "jew", "kikes", "jewish"},
    "muslim": {"muslims", "muslim"},
}


def stage_phrases(cfg: PipelineConfig) -> None:
    toxic = _toxic_ids(cfg)
    keywords = textmine.read_keyword_selection(run_path(cfg, "keywords")).keywords
    groups = DEFAULT_KEYWORD_GROUPS if keywords == textmine.default_keywords() else None
    filtered = (post for post in corpus.read_posts(run_path(cfg, "posts"))
                if post.post_id in toxic and
                keywords.intersection(textmine.tokenize(post.clean_text)))
    candidates = phrasemine.extract_candidates(
        filtered, min_freq=cfg.phrases.min_freq, max_words=cfg.phrases.max_words,
        keyword_groups=groups)
    phrasemine.write_phrases(candidates, run_path(cfg, "candidates"))


def _read_phrase_labels(path: str | Path) -> dict[str, str]:
    labels = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            labels[row["phrase_id"]] = row["category"]
    return labels


def _labeled_phrases(cfg: PipelineConfig) -> list[phrasemine.Phrase]:
    phrases = phrasemine.read_phrases(run_path(cfg, "phrases_labeled"))
    return [p for p in phrases if p.category in phrasemine.TARGET_CATEGORIES]


def stage_match(cfg: PipelineConfig) -> None:
    if not cfg.paths.phrase_labels:
        raise ValueError("stage match requires paths.phrase_labels (annotation output)")
    labels = _read_phrase_labels(cfg.paths.phrase_labels)
    candidates = phrasemine.read_phrases(run_path(cfg, "candidates"))
    for candidate in candidates:
        candidate.category = labels.get(candidate.phrase_id, "unlabeled")
    phrasemine.write_phrases(candidates, run_path(cfg, "phrases_labeled"))
    target = [p for p in candidates if p.category in phrasemine.TARGET_CATEGORIES]
    matches = phrasemine.match_phrases(corpus.read_posts(run_path(cfg, "posts")), target)
    phrasemine.write_matches(matches, run_path(cfg, "matches"))


def _embedding_provider(cfg: PipelineConfig, modality: str):
    kind = cfg.similarity.provider
    if kind == "procedural":
        return embedcore.ProceduralProvider(dim=cfg.similarity.dim,
                                            seed=cfg.seeds.procedural)
    if kind == "fixture":
        path = (cfg.paths.fixture_vectors_text if modality == "text"
                else cfg.paths.fixture_vectors_image)
        if not path:
            raise ValueError(f"fixture provider needs paths.fixture_vectors_{modality}")
        return embedcore.FixtureProvider(path)
    if kind == "remote":
        return embedcore.RemoteProvider(cfg.similarity.endpoint)
    raise ValueError(f"unknown embedding provider {kind!r}")


def stage_embed(cfg: PipelineConfig) -> None:
    phrases = _labeled_phrases(cfg)
    if not phrases:
        raise ValueError("no labeled target phrases to encode")
    text_provider = _embedding_provider(cfg, "text")
    vectors = embedcore.encode_texts(text_provider, phrases)
    store = embedcore.vectors_to_store(vectors)
    run_path(cfg, "phrase_store").parent.mkdir(parents=True, exist_ok=True)
    store.save(run_path(cfg, "phrase_store"))

    image_provider = _embedding_provider(cfg, "image")
    records = corpus.read_image_manifest(cfg.paths.image_manifest)
    _, report = embedcore.encode_images(
        image_provider, records, cfg.paths.image_root,
        store_path=run_path(cfg, "image_store"), resume=True)
    _write_json(run_path(cfg, "embed_skips"), {
        "encoded": report.encoded, "reused": report.reused,
        "skipped": report.skipped})


def stage_score(cfg: PipelineConfig) -> None:
    images = embedcore.VectorStore.load(run_path(cfg, "image_store"))
    phrases = embedcore.VectorStore.load(run_path(cfg, "phrase_store"))
    hits = embedcore.score_all(images, phrases, threshold=cfg.similarity.threshold,
                               block_rows=cfg.similarity.block_rows,
                               workers=cfg.similarity.workers)
    embedcore.write_hits(hits, run_path(cfg, "hits"))


def stage_sample(cfg: PipelineConfig) -> None:
    phrases = _labeled_phrases(cfg)
    quota = {"antisemitic": cfg.calibration.quota_antisemitic,
             "islamophobic": cfg.calibration.quota_islamophobic}
    chosen = calibrate.sample_phrases(phrases, n=cfg.calibration.phrases_total,
                                      category_quota=quota, seed=cfg.seeds.sample)
    run_path(cfg, "sampled_phrases").write_text(
        "".join(p.phrase_id + "\n" for p in chosen), encoding="utf-8")
    images = embedcore.VectorStore.load(run_path(cfg, "image_store"))
    phrase_store = embedcore.VectorStore.load(run_path(cfg, "phrase_store"))
    row_of = {pid: i for i, pid in enumerate(phrase_store.ids)}
    ranges = [tuple(r) for r in cfg.calibration.ranges]
    image_matrix = images.matrix.astype(np.float64)
    samples = []
    shortfalls = {}
    for p in chosen:
        query = phrase_store.matrix[row_of[p.phrase_id]].astype(np.float64)
        cosines = dict(zip(images.ids, (image_matrix @ query).tolist()))
        sample = calibrate.stratified_sample(p.phrase_id, cosines, ranges=ranges,
                                             per_range=cfg.calibration.per_range,
                                             seed=cfg.seeds.sample)
        samples.append(sample)
        if sample.shortfalls:
            shortfalls[p.phrase_id] = sample.shortfalls
    calibrate.write_sample(samples, run_path(cfg, "sample"))
    _write_json(run_path(cfg, "sample_shortfalls"), {"shortfalls": shortfalls})


def stage_agreement(cfg: PipelineConfig) -> None:
    log = cfg.paths.label_log or str(Path(cfg.paths.run_dir) / "labels.ndjson")
    if not Path(log).exists():
        raise FileNotFoundError(f"label log not found: {log}")
    store = agreement_mod.LabelStore(log)
    report = agreement_mod.pairwise_report(store)
    if report is None:
        raise ValueError("agreement needs two annotators with shared labeled items")
    _write_json(run_path(cfg, "agreement"), {
        "n_items": report.n_items,
        "percent_agreement": report.percent_agreement,
        "kappa": report.kappa,
        "confusion": report.confusion})


def _read_pair_labels(path: str | Path) -> dict[tuple[str, str], bool]:
    labels = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            positive = row["label"] in ("antisemitic", "islamophobic", "positive")
            labels[(row["phrase_id"], row["image_id"])] = positive
    return labels


def stage_calibrate(cfg: PipelineConfig) -> None:
    if not cfg.paths.pair_labels:
        raise ValueError("stage calibrate requires paths.pair_labels (annotation output)")
    labels = _read_pair_labels(cfg.paths.pair_labels)
    images = embedcore.VectorStore.load(run_path(cfg, "image_store"))
    phrase_store = embedcore.VectorStore.load(run_path(cfg, "phrase_store"))
    image_row = {iid: i for i, iid in enumerate(images.ids)}
    phrase_row = {pid: i for i, pid in enumerate(phrase_store.ids)}
    cosines = {}
    for phrase_id, image_id in labels:
        if phrase_id not in phrase_row or image_id not in image_row:
            raise ValueError(f"labeled pair ({phrase_id}, {image_id}) missing from stores")
        cosines[(phrase_id, image_id)] = embedcore.cosine(
            phrase_store.matrix[phrase_row[phrase_id]],
            images.matrix[image_row[image_id]])
    thresholds = cfg.calibration.thresholds or calibrate.default_thresholds()
    metrics = calibrate.sweep(labels, cosines, thresholds)
    calibrate.write_sweep_report(metrics, run_path(cfg, "sweep"),
                                 run_path(cfg, "sweep_summary"))
    _write_json(run_path(cfg, "threshold"), {
        "selected_threshold": calibrate.select_threshold(metrics),
        "criterion": "max mean f1, ties to lower threshold"})


def stage_phash(cfg: PipelineConfig) -> None:
    root = Path(cfg.paths.image_root)
    records = []
    skips = []
    for rec in corpus.read_image_manifest(cfg.paths.image_manifest):
        try:
            records.append(phash.hash_file(root / rec.storage_path, rec.image_id))
        except phash.ImageDecodeError as exc:
            skips.append((rec.image_id, str(exc)))
    phash.write_hashes(records, run_path(cfg, "hashes"))
    _write_json(run_path(cfg, "phash_skips"), {"count": len(skips), "skipped": skips})


def _image_posts(cfg: PipelineConfig) -> dict[str, list[str]]:
    mapping: dict[str, list[str]] = {}
    for post in corpus.read_posts(run_path(cfg, "posts")):
        if post.image_ref:
            mapping.setdefault(post.image_ref, []).append(post.post_id)
    return mapping


def stage_build_datasets(cfg: PipelineConfig) -> None:
    phrases = _labeled_phrases(cfg)
    matches = list(phrasemine.read_matches(run_path(cfg, "matches")))
    anti_t, islamo_t, excl_t = datasets.build_textual(matches, phrases)
    hits = embedcore.read_hits(run_path(cfg, "hits"))
    hashes = datasets.hashes_by_image(phash.read_hashes(run_path(cfg, "hashes")))
    image_posts = _image_posts(cfg)
    anti_v, islamo_v, excl_v = datasets.build_visual(hits, phrases, hashes, image_posts)

    out_dir = Path(cfg.paths.run_dir) / "datasets"
    out_dir.mkdir(parents=True, exist_ok=True)

    first_post: dict[str, str] = {}
    for m in matches:
        prior = first_post.get(m.phrase_id)
        if prior is None or m.post_id < prior:
            first_post[m.phrase_id] = m.post_id
    for ds in (anti_t, islamo_t):
        datasets.write_dataset_manifest(ds, out_dir / f"textual_{ds.category}.csv",
                                        representative=first_post)

    storage = {rec.image_id: rec.storage_path
               for rec in corpus.read_image_manifest(cfg.paths.image_manifest)}
    group_repr: dict[str, str] = {}
    group_top: dict[str, tuple[str, float]] = {}
    members: dict[str, list[str]] = {}
    for image_id, bits in hashes.items():
        members.setdefault(f"{bits:016x}", []).append(image_id)
    hits_by_image: dict[str, list[embedcore.SimilarityHit]] = {}
    for h in hits:
        hits_by_image.setdefault(h.image_id, []).append(h)
    for key, image_ids in members.items():
        image_ids.sort()
        group_repr[key] = storage.get(image_ids[0], image_ids[0])
        best: tuple[float, str] | None = None
        for image_id in image_ids:
            for h in hits_by_image.get(image_id, ()):
                candidate = (-h.cosine, h.phrase_id)
                if best is None or candidate < best:
                    best = candidate
        if best is not None:
            group_top[key] = (best[1], -best[0])
    for ds in (anti_v, islamo_v):
        datasets.write_dataset_manifest(ds, out_dir / f"visual_{ds.category}.csv",
                                        representative=group_repr, top_phrase=group_top)

    datasets.write_counts_summary([anti_t, islamo_t, anti_v, islamo_v],
                                  [excl_t, excl_v], run_path(cfg, "counts"))
    _write_json(run_path(cfg, "exclusions"), {
        "textual_posts": excl_t.excluded,
        "visual_unique_images": excl_v.excluded})


def _dataset_posts(cfg: PipelineConfig, modality: str, category: str) -> list[str]:
    path = Path(cfg.paths.run_dir) / "datasets" / f"{modality}_{category}.csv"
    with open(path, encoding="utf-8", newline="") as fh:
        return [row["item_id"] for row in csv.DictReader(fh)]


def stage_analyze(cfg: PipelineConfig) -> None:
    out_dir = Path(cfg.paths.run_dir) / "analytics"
    out_dir.mkdir(parents=True, exist_ok=True)
    phrases = _labeled_phrases(cfg)
    categories = {p.phrase_id: p.category for p in phrases}
    matches = list(phrasemine.read_matches(run_path(cfg, "matches")))
    excl = json.loads(run_path(cfg, "exclusions").read_text(encoding="utf-8"))
    excluded_posts = set(excl["textual_posts"])
    excluded_groups = set(excl["visual_unique_images"])

    post_ts = {}
    for post in corpus.read_posts(run_path(cfg, "posts")):
        post_ts[post.post_id] = post.timestamp_utc
    span_info = json.loads(run_path(cfg, "ingest_manifest").read_text(encoding="utf-8"))
    span = tuple(span_info["time_span"])

    # textual: posts per phrase, per category, dual-label posts excluded
    phrase_posts: dict[str, set[str]] = {}
    for m in matches:
        if m.post_id in excluded_posts:
            continue
        phrase_posts.setdefault(m.phrase_id, set()).add(m.post_id)
    daily_by_key: dict[str, analytics.DailySeries] = {}
    for category in ("antisemitic", "islamophobic"):
        counts = {pid: len(posts) for pid, posts in phrase_posts.items()
                  if categories.get(pid) == category}
        _write_counts_cdf(counts, out_dir / f"cdf_textual_{category}.csv")
        analytics.write_top_n(analytics.top_n(counts, 15) if counts else [],
                              out_dir / f"top_phrases_{category}.csv", "phrase_id")
        post_ids = sorted(set().union(*[phrase_posts[p] for p in counts], set())
                          if counts else set())
        series = analytics.daily_series([post_ts[p] for p in post_ids if p in post_ts],
                                        span)
        analytics.write_daily_series(series, out_dir / f"daily_textual_{category}.csv")
        daily_by_key[f"textual_{category}"] = series

    # visual: posts per unique image group, per category
    hits = embedcore.read_hits(run_path(cfg, "hits"))
    hashes = datasets.hashes_by_image(phash.read_hashes(run_path(cfg, "hashes")))
    image_posts = _image_posts(cfg)
    group_posts: dict[str, set[str]] = {}
    group_category: dict[str, set[str]] = {}
    members: dict[str, set[str]] = {}
    for image_id, bits in hashes.items():
        members.setdefault(f"{bits:016x}", set()).add(image_id)
    for h in hits:
        key = f"{hashes[h.image_id]:016x}"
        group_category.setdefault(key, set()).add(categories[h.phrase_id])
    for key, cats in group_category.items():
        if key in excluded_groups:
            continue
        posts: set[str] = set()
        for image_id in members[key]:
            posts.update(image_posts.get(image_id, ()))
        group_posts[key] = posts
    group_top: dict[str, str] = {}
    hits_sorted = sorted(hits, key=lambda h: (-h.cosine, h.phrase_id))
    for h in hits_sorted:
        key = f"{hashes[h.image_id]:016x}"
        group_top.setdefault(key, h.phrase_id)
    for category in ("antisemitic", "islamophobic"):
        counts = {key: len(posts) for key, posts in group_posts.items()
                  if group_category[key] == {category}}
        _write_counts_cdf(counts, out_dir / f"cdf_visual_{category}.csv")
        ranked = analytics.top_n(counts, 15) if counts else []
        with open(out_dir / f"top_images_{category}.csv", "w",
                  encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["unique_image", "post_count", "most_related_phrase"])
            for key, count in ranked:
                writer.writerow([key, count, group_top.get(key, "")])
        post_ids = sorted(set().union(*[group_posts[k] for k in counts], set())
                          if counts else set())
        series = analytics.daily_series([post_ts[p] for p in post_ids if p in post_ts],
                                        span)
        analytics.write_daily_series(series, out_dir / f"daily_visual_{category}.csv")
        daily_by_key[f"visual_{category}"] = series

    correlation: dict[str, dict] = {}
    peaks_rows: list[tuple[str, str, int]] = []
    for category in ("antisemitic", "islamophobic"):
        textual = daily_by_key[f"textual_{category}"]
        visual = daily_by_key[f"visual_{category}"]
        try:
            result = analytics.kendall_tau_b(textual.counts(), visual.counts())
            correlation[category] = {"tau_b": result.tau_b,
                                     "p_value": result.p_value, "n": result.n}
        except ValueError as exc:
            correlation[category] = {"error": str(exc)}
        for modality, series in (("textual", textual), ("visual", visual)):
            if len(series.points) >= 2:
                for day, count in analytics.detect_peaks(series):
                    peaks_rows.append((f"{modality}_{category}", day.isoformat(), count))
    _write_json(run_path(cfg, "correlation"), correlation)
    with open(run_path(cfg, "peaks"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series", "utc_date", "post_count"])
        for row in peaks_rows:
            writer.writerow(row)


def _write_counts_cdf(counts: dict[str, int], dest: Path) -> None:
    if counts:
        analytics.write_cdf(analytics.cdf(list(counts.values())), dest)
    else:
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            csv.writer(fh).writerow(["value", "cumulative_fraction"])


def stage_report(cfg: PipelineConfig) -> None:
    lines = ["hatescope run report", "====================", ""]
    with open(run_path(cfg, "counts"), encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    lines.append(f"{'dataset':<28}{'items':>10}{'posts':>10}")
    for row in rows:
        lines.append(f"{row['modality'] + ' ' + row['category']:<28}"
                     f"{row['item_count']:>10}{row['post_count']:>10}")
    lines.append("")
    correlation_path = run_path(cfg, "correlation")
    if correlation_path.exists():
        correlation = json.loads(correlation_path.read_text(encoding="utf-8"))
        for category, result in sorted(correlation.items()):
            if "tau_b" in result:
                lines.append(f"kendall tau-b ({category}): "
                             f"tau={result['tau_b']:.3f} p={result['p_value']:.3g} "
                             f"n={result['n']}")
            else:
                lines.append(f"kendall tau-b ({category}): {result['error']}")
        lines.append("")
        for category in ("antisemitic", "islamophobic"):
            top_path = Path(cfg.paths.run_dir) / "analytics" / f"top_phrases_{category}.csv"
            if top_path.exists():
                with open(top_path, encoding="utf-8", newline="") as fh:
                    top = list(csv.DictReader(fh))[:5]
                lines.append(f"top {category} phrases by posts:")
                for row in top:
                    lines.append(f"  {row['phrase_id']}  {row['post_count']}")
                lines.append("")
    run_path(cfg, "report").write_text("\n".join(lines) + "\n", encoding="utf-8")


# ------------------------------------------------------------- stage registry


@dataclass
class StageDef:
    name: str
    requires: tuple[str, ...]
    run: Callable[[PipelineConfig], None]
    inputs: Callable[[PipelineConfig], list[Path]]
    outputs: Callable[[PipelineConfig], list[Path]]


def _paths(cfg: PipelineConfig, *keys: str, extra: list[str] | None = None) -> list[Path]:
    out = [run_path(cfg, k) for k in keys]
    for name in extra or []:
        if name:
            out.append(Path(name))
    return out


STAGES: dict[str, StageDef] = {}


def _stage(name: str, requires: tuple[str, ...], run: Callable,
           inputs: Callable, outputs: Callable) -> None:
    STAGES[name] = StageDef(name, requires, run, inputs, outputs)


_stage("ingest", (), stage_ingest,
       lambda c: _paths(c, extra=[c.paths.posts_source]),
       lambda c: _paths(c, "posts", "ingest_manifest"))
_stage("toxicity", ("ingest",), stage_toxicity,
       lambda c: _paths(c, "posts", extra=[c.paths.toxicity_lexicon]),
       lambda c: _paths(c, "scores", "toxic_posts", "toxicity_failures"))
_stage("keywords", ("toxicity",), stage_keywords,
       lambda c: _paths(c, "posts", "toxic_posts", extra=[c.paths.keyword_file]),
       lambda c: _paths(c, "terms", "keywords"))
_stage("phrases", ("keywords",), stage_phrases,
       lambda c: _paths(c, "posts", "toxic_posts", "keywords"),
       lambda c: _paths(c, "candidates"))
_stage("match", ("phrases",), stage_match,
       lambda c: _paths(c, "posts", "candidates", extra=[c.paths.phrase_labels]),
       lambda c: _paths(c, "phrases_labeled", "matches"))
_stage("embed", ("match",), stage_embed,
       lambda c: _paths(c, "phrases_labeled",
                        extra=[c.paths.image_manifest, c.paths.fixture_vectors_text,
                               c.paths.fixture_vectors_image]),
       lambda c: _paths(c, "phrase_store", "image_store", "embed_skips"))
_stage("score", ("embed",), stage_score,
       lambda c: _paths(c, "phrase_store", "image_store"),
       lambda c: _paths(c, "hits"))
_stage("sample", ("embed",), stage_sample,
       lambda c: _paths(c, "phrase_store", "image_store", "phrases_labeled"),
       lambda c: _paths(c, "sampled_phrases", "sample", "sample_shortfalls"))
_stage("agreement", (), stage_agreement,
       lambda c: _paths(c, extra=[c.paths.label_log or
                                  str(Path(c.paths.run_dir) / "labels.ndjson")]),
       lambda c: _paths(c, "agreement"))
_stage("calibrate", ("embed",), stage_calibrate,
       lambda c: _paths(c, "phrase_store", "image_store",
                        extra=[c.paths.pair_labels]),
       lambda c: _paths(c, "sweep", "sweep_summary", "threshold"))
_stage("phash", ("ingest",), stage_phash,
       lambda c: _paths(c, extra=[c.paths.image_manifest]),
       lambda c: _paths(c, "hashes", "phash_skips"))
_stage("build-datasets", ("match", "score", "phash"), stage_build_datasets,
       lambda c: _paths(c, "matches", "phrases_labeled", "hits", "hashes", "posts"),
       lambda c: [Path(c.paths.run_dir) / rel for rel in DATASET_FILES])
_stage("analyze", ("build-datasets",), stage_analyze,
       lambda c: _paths(c, "matches", "phrases_labeled", "hits", "hashes", "posts",
                        "exclusions", "ingest_manifest"),
       lambda c: [Path(c.paths.run_dir) / rel for rel in ANALYTICS_FILES])
_stage("report", ("build-datasets",), stage_report,
       lambda c: _paths(c, "counts", "correlation"),
       lambda c: _paths(c, "report"))


def _check_requirements(stage: StageDef, cfg: PipelineConfig) -> None:
    for name in stage.requires:
        required = STAGES[name]
        missing = [p for p in required.outputs(cfg) if not p.exists()]
        if missing:
            raise MissingUpstreamError(stage.name, name)


def run_stage(name: str, cfg: PipelineConfig, force: bool = False) -> str:
    """Run one stage; returns "ok" or "cached"."""
    if name not in STAGES:
        raise ValueError(f"unknown stage {name!r}; stages: {', '.join(sorted(STAGES))}")
    stage = STAGES[name]
    Path(cfg.paths.run_dir).mkdir(parents=True, exist_ok=True)
    with StageLock(cfg):
        _check_requirements(stage, cfg)
        input_digests = _digests(stage.inputs(cfg))
        config_digest = cfg.digest()
        if not force:
            for entry in reversed(_read_manifest(cfg)):
                if entry["stage"] != name:
                    continue
                if (entry["config_digest"] == config_digest
                        and entry["inputs"] == input_digests
                        and entry["outputs"] == _digests(stage.outputs(cfg))):
                    return "cached"
                break
        started = time.time()
        stage.run(cfg)
        _append_manifest(cfg, {
            "stage": name,
            "config_digest": config_digest,
            "config": cfg.to_dict(),
            "inputs": input_digests,
            "outputs": _digests(stage.outputs(cfg)),
            "started_utc": started,
            "elapsed_s": round(time.time() - started, 3),
        })
        return "ok"


def run_annotation_server(cfg: PipelineConfig, host: str, port: int) -> None:
    from .annotation_service import AnnotationService, QueueItem, serve_annotation_api
    from .agreement import LabelStore

    items: list[QueueItem] = []
    candidates_path = run_path(cfg, "candidates")
    if candidates_path.exists():
        for p in phrasemine.read_phrases(candidates_path):
            items.append(QueueItem(item_id=p.phrase_id, kind="phrase",
                                   phrase_id=p.phrase_id,
                                   phrase_text=" ".join(p.lemma_tokens),
                                   multi_target=p.multi_target))
    sample_path = run_path(cfg, "sample")
    if sample_path.exists():
        phrase_text = {p.phrase_id: " ".join(p.lemma_tokens)
                       for p in phrasemine.read_phrases(run_path(cfg, "phrases_labeled"))}
        storage = {rec.image_id: rec.storage_path
                   for rec in corpus.read_image_manifest(cfg.paths.image_manifest)}
        for phrase_id, image_id, cosine_value, _ in calibrate.read_sample(sample_path):
            items.append(QueueItem(
                item_id=f"{phrase_id}:{image_id}", kind="image-pair",
                phrase_id=phrase_id, phrase_text=phrase_text.get(phrase_id, phrase_id),
                image_id=image_id, image_path=storage.get(image_id),
                cosine=cosine_value))
    if not items:
        raise ValueError("nothing to annotate: run the phrases or sample stage first")
    log = cfg.paths.label_log or str(Path(cfg.paths.run_dir) / "labels.ndjson")
    service = AnnotationService(items, LabelStore(log),
                                image_root=cfg.paths.image_root or None,
                                sweep_every=cfg.calibration.sweep_every,
                                thresholds=cfg.calibration.thresholds or None)
    serve_annotation_api(service, host=host, port=port)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="hatescope",
        description="Phrase mining, cross-modal image retrieval, and analytics pipeline")
    parser.add_argument("stage", help="pipeline stage or 'annotate-serve'",
                        choices=sorted(STAGES) + ["annotate-serve"])
    parser.add_argument("--config", required=True, help="TOML config path")
    parser.add_argument("--seed", type=int, default=None, help="override sampling seed")
    parser.add_argument("--threshold", type=float, default=None,
                        help="override the stage-relevant threshold")
    parser.add_argument("--force", action="store_true",
                        help="run even if the stage output is current")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8400)
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seeds.sample = args.seed
    if args.threshold is not None:
        if args.stage == "toxicity":
            cfg.toxicity.threshold = args.threshold
        else:
            cfg.similarity.threshold = args.threshold
        cfg.validate()

    try:
        if args.stage == "annotate-serve":
            run_annotation_server(cfg, args.host, args.port)
            return 0
        status = run_stage(args.stage, cfg, force=args.force)
        print(f"{args.stage}: {status}")
        return 0
    except MissingUpstreamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, StageLockError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (embedcore.ProviderError, toxicity.ScorerError) as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
