from __future__ import annotations

import random
from pathlib import Path

import pytest

from idapipe import synthetic
from idapipe.corpus import ingest_directory


@pytest.fixture
def tiny_dataset(tmp_path: Path):
    """2 domains x 2 classes x 1 image each."""
    root = tmp_path / "tiny"
    rng = random.Random(7)
    for domain in ("photo", "sketch"):
        for shape in ("circle", "square"):
            params = synthetic.random_params(rng, shape, domain)
            path = root / domain / shape / f"{shape}_0.png"
            path.parent.mkdir(parents=True)
            path.write_bytes(synthetic.render(params))
    return root


@pytest.fixture
def desk_dataset(tmp_path: Path):
    """4 domains x 4 classes, a handful of images per cell."""
    root = tmp_path / "desk"
    synthetic.build_sdg_dataset(root, domains=("cartoon", "neon", "photo", "sketch"),
                                n_per_class_per_domain=2, seed=3)
    return root


@pytest.fixture
def desk_index(desk_dataset):
    return ingest_directory(desk_dataset, "domain_class", name="desk").index
