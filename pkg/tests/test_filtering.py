from __future__ import annotations

import math
import random

import numpy as np
import pytest

from idapipe import synthetic
from idapipe.backends import StubGenerationBackend
from idapipe.corpus import AugmentationRecord, AugmentationStore, ingest_directory, put_record
from idapipe.filtering import (FilterReport, ParamsEmbedder, ScoredRecord, apply_filter,
                               percentile_ranks, rank_report, retained_store, score_pair,
                               score_store)
from idapipe.pipeline import pregenerate
from idapipe.prompts import build_plan, load_catalog


# --- independent O(n^2) oracle -------------------------------------------

def oracle_percentiles(scores):
    """Percentile via pairwise comparison counts; ties get the mean rank."""
    n = len(scores)
    if n == 1:
        return [100.0]
    out = []
    for s in scores:
        below = sum(1 for t in scores if t < s)
        equal = sum(1 for t in scores if t == s)
        mean_rank = below + (equal - 1) / 2.0  # mean of the tied 0-based ranks
        out.append(mean_rank / (n - 1) * 100.0)
    return out


def oracle_retained(entries, fraction):
    """entries: list of (record_id, class_score, domain_score)."""
    class_p = oracle_percentiles([c for _, c, _ in entries])
    domain_p = oracle_percentiles([d for _, _, d in entries])
    avg = [(cp + dp) / 2.0 for cp, dp in zip(class_p, domain_p)]
    order = sorted(range(len(entries)), key=lambda i: (avg[i], entries[i][0]))
    n_drop = math.floor(fraction * len(entries))
    dropped = set(order[:n_drop])
    return {entries[i][0] for i in range(len(entries)) if i not in dropped}


def run_filter(entries, fraction):
    scored = [ScoredRecord(record_id=rid, source_id="s" * 64, prompt_id=rid, seed=0,
                           class_score=c, domain_score=d)
              for rid, c, d in entries]
    return apply_filter(rank_report(scored), fraction)


# --- percentile_ranks ------------------------------------------------------

def test_percentiles_two_points():
    assert percentile_ranks([0.2, 0.8]) == [0.0, 100.0]


def test_percentiles_full_tie():
    assert percentile_ranks([0.5, 0.5, 0.5]) == [50.0, 50.0, 50.0]


def test_percentiles_four_values():
    # Oracle values computed by brute-force ranking.
    expected = [100.0, 0.0, 100.0 / 3.0, 200.0 / 3.0]
    got = percentile_ranks([0.9, 0.1, 0.5, 0.7])
    assert got == pytest.approx(expected)
    assert oracle_percentiles([0.9, 0.1, 0.5, 0.7]) == pytest.approx(expected)


def test_percentiles_single():
    assert percentile_ranks([0.4]) == [100.0]


def test_percentiles_match_oracle_random():
    rng = random.Random(0)
    for _ in range(50):
        n = rng.randint(1, 40)
        scores = [rng.choice([rng.random(), round(rng.random(), 1)]) for _ in range(n)]
        assert percentile_ranks(scores) == pytest.approx(oracle_percentiles(scores))


# --- scoring ---------------------------------------------------------------

class BasisEmbedder:
    """Image i -> e_i, any text -> e_0; scores equal first components."""

    def __init__(self, mapping):
        self.mapping = mapping  # image bytes -> basis index
        self.dim = max(mapping.values()) + 1

    def embed_image(self, image):
        vec = np.zeros(self.dim)
        vec[self.mapping[image]] = 1.0
        return vec

    def embed_text(self, text):
        vec = np.zeros(self.dim)
        vec[0] = 1.0
        return vec


def _rec(pid, seed=0):
    return AugmentationRecord(source_id="s" * 64, prompt_id=pid, prompt_text="t",
                              target_domain="sketch", backend_mode="sdedit", seed=seed,
                              image_path=f"aug/{pid}.png", status="ok")


def test_score_pair_identical_and_orthogonal():
    embedder = BasisEmbedder({b"img0": 0, b"img1": 1, b"img2": 2})
    records = [(_rec("p0"), b"img0"), (_rec("p1"), b"img1"), (_rec("p2"), b"img2")]
    scored, errors = score_pair(records, "dog", "sketch", embedder)
    assert errors == []
    # Hand-computed dot products: e_0 @ e_0 = 1, e_1 @ e_0 = 0, e_2 @ e_0 = 0.
    assert [s.class_score for s in scored] == [1.0, 0.0, 0.0]
    assert [s.domain_score for s in scored] == [1.0, 0.0, 0.0]


def test_score_pair_embedder_failure_excluded():
    class Failing(BasisEmbedder):
        def embed_image(self, image):
            if image == b"img1":
                raise RuntimeError("boom")
            return super().embed_image(image)

    embedder = Failing({b"img0": 0, b"img1": 1})
    scored, errors = score_pair([(_rec("p0"), b"img0"), (_rec("p1"), b"img1")],
                                "dog", "sketch", embedder)
    assert len(scored) == 1 and len(errors) == 1


# --- apply_filter -----------------------------------------------------------

def test_filter_fraction_zero_retains_all():
    report = run_filter([("a", 0.1, 0.2), ("b", 0.3, 0.4)], 0.0)
    assert report.retained_ids() == {"a", "b"}


def test_filter_floor_rounding():
    entries = [(f"r{i:02d}", i / 10.0, i / 10.0) for i in range(10)]
    report = run_filter(entries, 0.25)
    assert len(report.retained_ids()) == 8  # floor(2.5) = 2 dropped


def test_filter_all_equal_ties_break_by_id():
    entries = [(f"r{i}", 0.5, 0.5) for i in range(6)]
    report = run_filter(entries, 0.5)
    assert report.retained_ids() == {"r3", "r4", "r5"}


def test_filter_matches_oracle_on_random_tables():
    rng = random.Random(42)
    for _ in range(100):
        n = rng.randint(1, 100)
        entries = []
        for i in range(n):
            c = rng.choice([rng.random(), round(rng.random(), 1)])
            d = rng.choice([rng.random(), round(rng.random(), 1)])
            entries.append((f"r{i:03d}", c, d))
        fraction = rng.choice([0.0, 0.1, 0.25, 0.5, rng.random() * 0.9])
        got = run_filter(entries, fraction).retained_ids()
        assert got == oracle_retained(entries, fraction)


def test_filter_monotone_transform_invariance():
    rng = random.Random(7)
    entries = [(f"r{i:03d}", rng.random(), rng.random()) for i in range(40)]
    base = run_filter(entries, 0.25).retained_ids()
    transforms = [lambda x: 3.0 * x + 1.0, math.exp, lambda x: x ** 3 + 10 * x,
                  lambda x: math.atan(x) * 2.0]
    for f in transforms:
        warped = [(rid, f(c), f(d)) for rid, c, d in entries]
        assert run_filter(warped, 0.25).retained_ids() == base


def test_filter_permutation_invariance():
    rng = random.Random(9)
    entries = [(f"r{i:03d}", rng.random(), rng.random()) for i in range(30)]
    base = run_filter(entries, 0.3).retained_ids()
    for _ in range(5):
        shuffled = list(entries)
        rng.shuffle(shuffled)
        assert run_filter(shuffled, 0.3).retained_ids() == base


def test_report_roundtrip(tmp_path):
    entries = [("a", 0.1, 0.9), ("b", 0.8, 0.2), ("c", 0.5, 0.5)]
    report = run_filter(entries, 0.25)
    path = tmp_path / "filter-report.jsonl"
    report.save(path)
    loaded = FilterReport.load(path)
    assert loaded.fraction_dropped == 0.25
    assert loaded.retained_ids() == report.retained_ids()
    for entry in loaded.entries:
        assert entry.avg_pct == pytest.approx((entry.class_pct + entry.domain_pct) / 2)


# --- end-to-end over the stub store ----------------------------------------

def test_score_store_and_retained_view(tmp_path):
    root = tmp_path / "data"
    synthetic.build_sdg_dataset(root, domains=("photo", "sketch"), n_per_class_per_domain=2,
                                seed=5)
    index = ingest_directory(root, "domain_class", name="d").index
    catalog = load_catalog("desk", "M")
    plan = build_plan(index, "photo", catalog, 1, "sdg_one_per_target", rng_seed=0)
    store = AugmentationStore(dataset_name="d", k=1)
    pregenerate(index, plan, StubGenerationBackend(), store, root)
    scored, errors = score_store(store, index, root, ParamsEmbedder())
    assert errors == []
    assert len(scored) == store.ok_count()
    report = apply_filter(rank_report(scored), 0.25)
    view = retained_store(store, report)
    assert view.ok_count() == len(scored) - math.floor(0.25 * len(scored))
