"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s``.
"""
from __future__ import annotations

import math
import random
import time
from pathlib import Path

import numpy as np
import pytest

from idapipe import synthetic
from idapipe.backends import StubGenerationBackend
from idapipe.corpus import AugmentationStore, DatasetIndex, get_variants, ingest_directory
from idapipe.filtering import HashEmbedder, ScoredRecord, apply_filter, rank_report
from idapipe.metrics import (SetStatistics, background_gap, demographic_gaps,
                             duplication_report, frechet_distance, sdg_average)
from idapipe.pipeline import pregenerate
from idapipe.prompts import build_plan, load_catalog
from idapipe.trainer import SoftmaxRegressionBackend, TrainConfig, evaluate, train

from test_filtering import oracle_retained, run_filter
from test_trainer import gradient_check_instance


def _report(criterion: int, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    print(f"[{status}] acceptance criterion {criterion}" + (f": {detail}" if detail else ""))
    assert passed, f"criterion {criterion}: {detail}"


# -- criterion 1: metric oracles, exact --------------------------------------

def test_criterion_1_metric_oracles():
    started = time.monotonic()
    checks = [
        (background_gap(86.02, 73.54), 12.48, 1e-9),
        (background_gap(91.96, 79.76), 12.20, 1e-9),
        (demographic_gaps(99.44, 77.16, 88.48)[0], 22.28, 1e-9),
        (demographic_gaps(99.16, 79.4, 88.86)[0], 19.76, 1e-9),
        (sdg_average({"art": 74.44, "photo": 48.78, "sketch": 50.89, "cartoon": 73.74}),
         61.96, 0.005),
    ]
    ok = all(abs(got - want) <= tol for got, want, tol in checks)
    elapsed = time.monotonic() - started
    _report(1, ok and elapsed < 1.0,
            f"5 exact metric oracles, {elapsed * 1000:.0f} ms")


# -- criteria 2 and 7: Algorithm-1 counting and leave-one-out purity ---------

@pytest.fixture(scope="module")
def counting_fixture(tmp_path_factory):
    """N=20 source samples (photo), 3 eligible target domains."""
    root = tmp_path_factory.mktemp("counting") / "data"
    synthetic.build_sdg_dataset(root, domains=("photo",), n_per_class_per_domain=5, seed=50)
    synthetic.build_sdg_dataset(root, domains=("cartoon", "neon", "sketch"),
                                n_per_class_per_domain=1, seed=51)
    index = ingest_directory(root, "domain_class", name="counting").index
    return root, index


def test_criterion_2_algorithm1_counting(counting_fixture):
    started = time.monotonic()
    root, index = counting_fixture
    catalog = load_catalog("desk", "M")
    plan = build_plan(index, "photo", catalog, 3, "sdg_one_per_target", rng_seed=0)
    store = AugmentationStore(dataset_name="counting", k=3)
    report = pregenerate(index, plan, StubGenerationBackend(), store, root)
    ok = report.ok == 60 and store.ok_count() == 60
    photo_ids = [s.id for s in index.subset(domain="photo")]
    for source_id in photo_ids:
        variants = get_variants(store, source_id)
        ok = ok and len(variants) == 3
        ok = ok and sorted(v.target_domain for v in variants) == ["cartoon", "neon", "sketch"]
    rerun = pregenerate(index, plan, StubGenerationBackend(), store, root)
    ok = ok and rerun.ok == 0 and rerun.skipped == 60 and store.ok_count() == 60
    elapsed = time.monotonic() - started
    _report(2, ok and elapsed < 30.0,
            f"60 ok records, 3 per source, one per target; re-run no-op; {elapsed:.1f} s")


def test_criterion_7_leave_one_out_purity(counting_fixture):
    root, index = counting_fixture
    catalog = load_catalog("desk", "M")
    plan = build_plan(index, "photo", catalog, 2, "sdg_leave_one_out",
                      excluded_domains={"sketch"}, rng_seed=0)
    store = AugmentationStore(dataset_name="counting", k=2)
    pregenerate(index, plan, StubGenerationBackend(), store, root)
    targeting_excluded = sum(1 for r in store.records.values()
                             if r.target_domain == "sketch")
    ok = store.ok_count() == 40 and targeting_excluded == 0
    _report(7, ok, f"40 records stored, {targeting_excluded} target the excluded domain")


# -- criterion 3: filter equivalence ------------------------------------------

def _random_increasing_transform(rng: random.Random):
    w1, w2, w3 = (rng.uniform(0.1, 3.0) for _ in range(3))
    b = rng.uniform(-1.0, 1.0)
    return lambda x: w1 * x + w2 * math.atan(x) + w3 * math.expm1(min(x, 20.0) / 4.0) + b


def test_criterion_3_filter_equivalence():
    started = time.monotonic()
    rng = random.Random(2024)
    ok = True
    for _ in range(200):
        n = rng.randint(1, 100)
        entries = []
        for i in range(n):
            c = rng.choice([rng.random(), round(rng.random(), 1)])
            d = rng.choice([rng.random(), round(rng.random(), 1)])
            entries.append((f"r{i:03d}", c, d))
        fraction = rng.choice([0.0, 0.1, 0.25, 0.5, rng.random() * 0.9])
        if run_filter(entries, fraction).retained_ids() != oracle_retained(entries, fraction):
            ok = False
            break
    base_entries = [(f"r{i:03d}", rng.random(), rng.random()) for i in range(60)]
    base = run_filter(base_entries, 0.25).retained_ids()
    for _ in range(50):
        f = _random_increasing_transform(rng)
        transform_class = rng.random() < 0.8
        transform_domain = rng.random() < 0.8 or not transform_class
        warped = [(rid,
                   f(c) if transform_class else c,
                   f(d) if transform_domain else d)
                  for rid, c, d in base_entries]
        if run_filter(warped, 0.25).retained_ids() != base:
            ok = False
            break
    elapsed = time.monotonic() - started
    _report(3, ok and elapsed < 30.0,
            f"200 oracle tables + 50 monotone transforms, {elapsed:.1f} s")


# -- criterion 4: Fréchet distance ---------------------------------------------

def test_criterion_4_frechet_distance():
    rng = np.random.default_rng(7)
    stats = SetStatistics.from_features(rng.standard_normal((40, 5)))
    ok = abs(frechet_distance(stats, stats)) <= 1e-8

    a = SetStatistics(mean=np.array([0.0]), covariance=np.array([[1.0]]), n=10)
    b = SetStatistics(mean=np.array([1.0]), covariance=np.array([[1.0]]), n=10)
    ok = ok and abs(frechet_distance(a, b) - 1.0) <= 1e-8

    xa = rng.standard_normal((50, 8))
    xb = rng.standard_normal((50, 8)) * 1.3 + 0.4
    sa, sb = SetStatistics.from_features(xa), SetStatistics.from_features(xb)
    ok = ok and abs(frechet_distance(sa, sb) - frechet_distance(sb, sa)) <= 1e-8

    base = frechet_distance(sa, sb)
    q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    rotated = frechet_distance(SetStatistics.from_features(xa @ q),
                               SetStatistics.from_features(xb @ q))
    ok = ok and abs(rotated - base) <= 1e-6
    _report(4, ok, "identity, 1-D closed form, symmetry, rotation invariance")


# -- criterion 5: gradient check -------------------------------------------------

def test_criterion_5_gradient_check():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        n_classes = int(rng.integers(2, 6))       # K <= 5
        dim = int(rng.integers(2, 65))            # D <= 64
        worst = max(worst, gradient_check_instance(rng, n_classes, dim))
    _report(5, worst <= 1e-4, f"max relative error {worst:.2e} over 20 instances")


# -- criterion 6: desk-scale directional SDG -------------------------------------

def test_criterion_6_directional_sdg(tmp_path):
    started = time.monotonic()
    root = tmp_path / "data"
    # 2 domains as distinct render styles, 4 classes, 200 train images.
    synthetic.build_sdg_dataset(root, domains=("photo",), n_per_class_per_domain=50, seed=100)
    synthetic.build_sdg_dataset(root, domains=("sketch",), n_per_class_per_domain=25, seed=200)
    index = ingest_directory(root, "domain_class", name="desk").index
    catalog = load_catalog("desk", "M")
    plan = build_plan(index, "photo", catalog, 1, "sdg_one_per_target", rng_seed=0)
    store = AugmentationStore(dataset_name="desk", k=1)
    pregenerate(index, plan, StubGenerationBackend(), store, root)

    source = DatasetIndex(name="src", domains=index.domains, classes=index.classes,
                          samples=index.subset(domain="photo"))
    target = index.subset(domain="sketch")
    empty = AugmentationStore(dataset_name="desk", k=0)
    margins = []
    for seed in range(5):
        erm = train(source, empty, TrainConfig(seed=seed, use_augmentations=False),
                    images_root=root)
        ida = train(source, store, TrainConfig(seed=seed, use_augmentations=True),
                    images_root=root)
        margins.append(evaluate(ida, target, root) - evaluate(erm, target, root))
    mean_margin = float(np.mean(margins))
    elapsed = time.monotonic() - started
    _report(6, mean_margin >= 5.0 and elapsed < 300.0,
            f"mean IDA-ERM margin {mean_margin:+.1f} points over 5 seeds, {elapsed:.1f} s")


# -- criterion 8: duplication check -----------------------------------------------

def test_criterion_8_duplication_check():
    rng = random.Random(31)
    test_images = [synthetic.render(synthetic.random_params(rng, shape, "photo"))
                   for shape in ("circle", "square", "triangle")]
    candidates = [
        test_images[0],  # planted byte-identical duplicate
        synthetic.render(synthetic.random_params(rng, "cross", "sketch")),
        synthetic.render(synthetic.random_params(rng, "triangle", "cartoon")),
    ]
    embedder = HashEmbedder(dim=16)
    cand = np.stack([embedder.embed_image(b) for b in candidates])
    tests = np.stack([embedder.embed_image(b) for b in test_images])
    report = duplication_report(cand, tests, threshold=0.9)
    ok = report.fraction_flagged == pytest.approx(1.0 / 3.0)
    ok = ok and report.top_pairs[0][:2] == (0, 0)
    _report(8, ok, f"fraction_flagged={report.fraction_flagged:.4f} at threshold 0.9")
