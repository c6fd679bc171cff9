"""End-to-end fixture run: every stage over the bundled synthetic corpus,
checked against the hand-derived ledger, plus determinism across runs and
worker counts."""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent / "fixtures"))

import e2e_corpus  # noqa: E402
from test_analytics import brute_force_tau_b  # noqa: E402

from hatescope.cli import STAGES, run_stage, run_path  # noqa: E402
from hatescope.config import load_config  # noqa: E402
from hatescope.phrasemine import read_phrases  # noqa: E402

LEDGER = json.loads((Path(__file__).parent / "fixtures" / "e2e_ledger.json").read_text())

BATCH_STAGES = ["ingest", "toxicity", "keywords", "phrases", "match", "embed",
                "score", "sample", "agreement", "calibrate", "phash",
                "build-datasets", "analyze", "report"]


def run_all(tmp_path: Path, name: str, workers: int = 1):
    root = tmp_path / name
    config_path = e2e_corpus.build(root / "fixture", root / "run", workers=workers)
    cfg = load_config(config_path)
    statuses = {stage: run_stage(stage, cfg) for stage in BATCH_STAGES}
    return cfg, config_path, statuses


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("e2e")
    cfg, config_path, statuses = run_all(tmp_path, "main")
    return tmp_path, cfg, config_path, statuses


def _lemmas_by_id(cfg) -> dict[str, str]:
    return {p.phrase_id: " ".join(p.lemma_tokens)
            for p in read_phrases(run_path(cfg, "candidates"))}


def test_all_stages_ran(pipeline) -> None:
    _, _, _, statuses = pipeline
    assert all(status == "ok" for status in statuses.values()), statuses


def test_ingest_ledger(pipeline) -> None:
    _, cfg, _, _ = pipeline
    manifest = json.loads(run_path(cfg, "ingest_manifest").read_text())
    assert manifest["post_count"] == LEDGER["post_count"]
    assert manifest["skipped"] == LEDGER["ingest_skipped"]


def test_toxic_count_ledger(pipeline) -> None:
    _, cfg, _, _ = pipeline
    toxic = [line for line in run_path(cfg, "toxic_posts").read_text().splitlines()
             if line.strip()]
    assert len(toxic) == LEDGER["toxic_count"]


def test_ranked_terms_include_targets(pipeline) -> None:
    _, cfg, _, _ = pipeline
    with open(run_path(cfg, "terms"), newline="") as fh:
        top20 = [row["term"] for row in csv.DictReader(fh)][:20]
    assert {"kike", "kikes", "muslims"} <= set(top20)


def test_candidate_set_ledger(pipeline) -> None:
    _, cfg, _, _ = pipeline
    candidates = read_phrases(run_path(cfg, "candidates"))
    assert len(candidates) == LEDGER["candidate_count"]
    freqs = {" ".join(p.lemma_tokens): p.frequency for p in candidates}
    assert freqs == LEDGER["candidate_freqs"]


def test_matched_posts_ledger(pipeline) -> None:
    _, cfg, _, _ = pipeline
    lemmas = _lemmas_by_id(cfg)
    posts_per_phrase: dict[str, set[str]] = {}
    with open(run_path(cfg, "matches")) as fh:
        for line in fh:
            obj = json.loads(line)
            posts_per_phrase.setdefault(lemmas[obj["phrase_id"]], set()).add(obj["post_id"])
    counts = {lemma: len(posts) for lemma, posts in posts_per_phrase.items()}
    assert counts == LEDGER["matched_posts_per_phrase"]


def test_dataset_counts_ledger(pipeline) -> None:
    _, cfg, _, _ = pipeline
    with open(run_path(cfg, "counts"), newline="") as fh:
        rows = {(row["modality"], row["category"]): row for row in csv.DictReader(fh)}
    for modality, key in (("textual", "phrases"), ("visual", "images")):
        for category in ("antisemitic", "islamophobic"):
            expected = LEDGER[modality][category]
            row = rows[(modality, category)]
            assert int(row["item_count"]) == expected[key], (modality, category)
            assert int(row["post_count"]) == expected["posts"], (modality, category)
    assert int(rows[("textual", "excluded-dual-label")]["item_count"]) == \
        LEDGER["textual"]["excluded_posts"]
    assert int(rows[("visual", "excluded-dual-label")]["item_count"]) == \
        LEDGER["visual"]["excluded_images"]


def test_exclusions_exercised(pipeline) -> None:
    _, cfg, _, _ = pipeline
    excl = json.loads(run_path(cfg, "exclusions").read_text())
    assert len(excl["textual_posts"]) >= 1
    assert len(excl["visual_unique_images"]) >= 1


def test_unique_hash_count_ledger(pipeline) -> None:
    _, cfg, _, _ = pipeline
    with open(run_path(cfg, "hashes"), newline="") as fh:
        hashes = [row["phash_hex"] for row in csv.DictReader(fh)]
    assert len(hashes) == 40
    assert len(set(hashes)) == LEDGER["unique_hashes"]


def test_hit_rows_ledger(pipeline) -> None:
    _, cfg, _, _ = pipeline
    with open(run_path(cfg, "hits"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == LEDGER["hit_rows"]
    assert all(float(row["cosine"]) >= 0.3 for row in rows)


def test_selected_threshold_ledger(pipeline) -> None:
    _, cfg, _, _ = pipeline
    payload = json.loads(run_path(cfg, "threshold").read_text())
    assert payload["selected_threshold"] == LEDGER["selected_threshold"]


def test_agreement_ledger(pipeline) -> None:
    _, cfg, _, _ = pipeline
    report = json.loads(run_path(cfg, "agreement").read_text())
    assert report["n_items"] == LEDGER["agreement"]["n_items"]
    assert report["percent_agreement"] == pytest.approx(
        LEDGER["agreement"]["percent_agreement"])
    assert report["kappa"] == pytest.approx(LEDGER["agreement"]["kappa"], abs=1e-12)


def _read_cdf(path: Path) -> list[list[float]]:
    with open(path, newline="") as fh:
        return [[int(row["value"]), float(row["cumulative_fraction"])]
                for row in csv.DictReader(fh)]


def test_cdf_points_ledger(pipeline) -> None:
    _, cfg, _, _ = pipeline
    analytics_dir = Path(cfg.paths.run_dir) / "analytics"
    for key in ("cdf_textual_antisemitic", "cdf_textual_islamophobic",
                "cdf_visual_antisemitic", "cdf_visual_islamophobic"):
        points = _read_cdf(analytics_dir / f"{key}.csv")
        expected = [[v, pytest.approx(f)] for v, f in LEDGER[key]]
        assert points == expected, key


def test_top_phrase_order_ledger(pipeline) -> None:
    _, cfg, _, _ = pipeline
    lemmas = _lemmas_by_id(cfg)
    analytics_dir = Path(cfg.paths.run_dir) / "analytics"
    for category in ("antisemitic", "islamophobic"):
        with open(analytics_dir / f"top_phrases_{category}.csv", newline="") as fh:
            got = [[lemmas[row["phrase_id"]], int(row["post_count"])]
                   for row in csv.DictReader(fh)]
        assert got == LEDGER[f"top_phrases_{category}"], category


def test_dataset_posts_per_phrase_ledger(pipeline) -> None:
    _, cfg, _, _ = pipeline
    lemmas = _lemmas_by_id(cfg)
    excluded = set(json.loads(run_path(cfg, "exclusions").read_text())["textual_posts"])
    posts_per_phrase: dict[str, set[str]] = {}
    with open(run_path(cfg, "matches")) as fh:
        for line in fh:
            obj = json.loads(line)
            if obj["post_id"] in excluded:
                continue
            posts_per_phrase.setdefault(lemmas[obj["phrase_id"]], set()).add(obj["post_id"])
    counts = {lemma: len(posts) for lemma, posts in posts_per_phrase.items()}
    assert counts == LEDGER["dataset_posts_per_phrase"]


def test_daily_series_and_correlation(pipeline) -> None:
    _, cfg, _, _ = pipeline
    analytics_dir = Path(cfg.paths.run_dir) / "analytics"
    correlation = json.loads(run_path(cfg, "correlation").read_text())
    for category in ("antisemitic", "islamophobic"):
        textual = _daily_counts(analytics_dir / f"daily_textual_{category}.csv")
        visual = _daily_counts(analytics_dir / f"daily_visual_{category}.csv")
        assert len(textual) == len(visual) == LEDGER["daily_days"]
        oracle = brute_force_tau_b(textual, visual)
        result = correlation[category]
        assert result["n"] == LEDGER["daily_days"]
        assert result["tau_b"] == pytest.approx(oracle.tau_b, abs=1e-12)
        assert result["p_value"] == pytest.approx(oracle.p_value, abs=1e-9)


def _daily_counts(path: Path) -> list[int]:
    with open(path, newline="") as fh:
        return [int(row["post_count"]) for row in csv.DictReader(fh)]


def test_peaks_ledger(pipeline) -> None:
    _, cfg, _, _ = pipeline
    with open(run_path(cfg, "peaks"), newline="") as fh:
        rows = [[row["series"], row["utc_date"], int(row["post_count"])]
                for row in csv.DictReader(fh)]
    assert rows == LEDGER["peaks"]


def test_sample_plan_with_shortfalls(pipeline) -> None:
    _, cfg, _, _ = pipeline
    sampled = run_path(cfg, "sampled_phrases").read_text().split()
    assert len(sampled) == 10
    with open(run_path(cfg, "sample"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    by_phrase: dict[str, int] = {}
    for row in rows:
        by_phrase[row["phrase_id"]] = by_phrase.get(row["phrase_id"], 0) + 1
    assert set(by_phrase) == set(sampled)
    shortfalls = json.loads(run_path(cfg, "sample_shortfalls").read_text())["shortfalls"]
    assert shortfalls  # the tiny corpus cannot fill 50 per range


def test_report_written_and_stable(pipeline) -> None:
    _, cfg, _, _ = pipeline
    text = run_path(cfg, "report").read_text()
    assert "textual antisemitic" in text
    assert "kendall tau-b" in text
    first = run_path(cfg, "report").read_bytes()
    run_stage("report", cfg, force=True)
    assert run_path(cfg, "report").read_bytes() == first


def test_second_run_is_noop(pipeline) -> None:
    _, cfg, _, _ = pipeline
    statuses = {stage: run_stage(stage, cfg) for stage in BATCH_STAGES}
    assert all(status == "cached" for status in statuses.values()), statuses


def _output_digests(cfg) -> dict[str, str]:
    import hashlib

    digests = {}
    for stage in BATCH_STAGES:
        for path in STAGES[stage].outputs(cfg):
            rel = Path(path).relative_to(cfg.paths.run_dir)
            digests[str(rel)] = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return digests


def test_independent_run_bit_identical(pipeline, tmp_path) -> None:
    _, cfg, _, _ = pipeline
    cfg2, _, statuses = run_all(tmp_path, "replica")
    assert all(status == "ok" for status in statuses.values())
    assert _output_digests(cfg) == _output_digests(cfg2)


def test_thread_count_does_not_change_hits(pipeline, tmp_path) -> None:
    _, cfg, _, _ = pipeline
    cfg4, _, statuses = run_all(tmp_path, "threads", workers=4)
    assert all(status == "ok" for status in statuses.values())
    assert run_path(cfg4, "hits").read_bytes() == run_path(cfg, "hits").read_bytes()


def test_score_before_embed_reports_missing_stage(tmp_path) -> None:
    root = tmp_path / "dag"
    config_path = e2e_corpus.build(root / "fixture", root / "run")
    cfg = load_config(config_path)
    from hatescope.cli import MissingUpstreamError

    with pytest.raises(MissingUpstreamError, match="requires: embed"):
        run_stage("score", cfg)
