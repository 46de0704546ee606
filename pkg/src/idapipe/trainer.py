"""ERM training over original+augmented batches, evaluation, and the
SDG / RRSF protocol drivers.

The reference classifier is multinomial logistic regression over
standardized, downsampled pixel features: framework-free, deterministic,
and sufficient for desk-scale runs. Heavier models plug in behind the
ClassifierBackend protocol.
"""
from __future__ import annotations

import io
import json
import random
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Protocol

import numpy as np
from PIL import Image

from . import synthetic
from .backends import StubGenerationBackend
from .corpus import AugmentationStore, DatasetIndex, SampleRecord
from .errors import EmptyInput, MissingSplit, TrainingDiverged, UndefinedMetric
from .metrics import (BiasReport, SdgReport, background_gap, demographic_gaps,
                      sdg_average, texture_bias)
from .pipeline import GenerationKnobs, pregenerate, sample_training_pairs
from .prompts import PromptCatalog, build_plan

TRAIN_LOG_FILE = "train-log.jsonl"

RRSF_REQUIRED_DOMAINS = {
    "background": ("train", "test_mixed_same", "test_mixed_rand"),
    "texture": ("train", "test_cue_conflict"),
    "demographic": ("train", "test_iid", "test_flip", "test_rand"),
}
RRSF_K = 4  # variants per source sample when randomizing a spurious cue


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.1
    seed: int = 0
    image_side: int = 16
    use_augmentations: bool = True
    filter_fraction: float | None = None

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0 or self.image_side <= 0:
            raise ValueError("learning_rate and image_side must be positive")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")


class ClassifierBackend(Protocol):
    def init(self, n_classes: int, feature_dim: int, seed: int) -> None: ...

    def train_step(self, features: np.ndarray, onehot: np.ndarray) -> float: ...

    def predict(self, features: np.ndarray) -> list[int]: ...

    def parameters(self) -> np.ndarray: ...


class SoftmaxRegressionBackend:
    """Multinomial logistic regression trained with plain gradient steps."""

    def __init__(self, learning_rate: float = 0.1):
        self.learning_rate = learning_rate
        self.weights: np.ndarray | None = None
        self.bias: np.ndarray | None = None
        self.n_classes = 0
        self.feature_dim = 0

    def init(self, n_classes: int, feature_dim: int, seed: int) -> None:
        rng = np.random.default_rng(seed)
        self.n_classes = n_classes
        self.feature_dim = feature_dim
        self.weights = rng.normal(0.0, 0.01, size=(feature_dim, n_classes))
        self.bias = np.zeros(n_classes)

    @staticmethod
    def _softmax(logits: np.ndarray) -> np.ndarray:
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        return exp / exp.sum(axis=1, keepdims=True)

    def _logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights + self.bias

    def loss(self, features: np.ndarray, onehot: np.ndarray) -> float:
        logits = self._logits(features)
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return float(-(onehot * log_probs).sum(axis=1).mean())

    def gradients(self, features: np.ndarray, onehot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        batch = features.shape[0]
        dlogits = (self._softmax(self._logits(features)) - onehot) / batch
        return features.T @ dlogits, dlogits.sum(axis=0)

    def train_step(self, features: np.ndarray, onehot: np.ndarray) -> float:
        loss = self.loss(features, onehot)
        grad_w, grad_b = self.gradients(features, onehot)
        self.weights -= self.learning_rate * grad_w
        self.bias -= self.learning_rate * grad_b
        return loss

    def predict(self, features: np.ndarray) -> list[int]:
        return [int(i) for i in self._logits(features).argmax(axis=1)]

    def parameters(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias.ravel()])

    def set_parameters(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        split = self.feature_dim * self.n_classes
        self.weights = flat[:split].reshape(self.feature_dim, self.n_classes).copy()
        self.bias = flat[split:].copy()


def featurize(image_bytes: bytes, image_side: int) -> np.ndarray:
    """Downsampled RGB pixels in [0, 1], flattened to one row."""
    with Image.open(io.BytesIO(image_bytes)) as img:
        small = img.convert("RGB").resize((image_side, image_side), Image.BILINEAR)
    return np.asarray(small, dtype=np.float64).ravel() / 255.0


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    # Near-constant pixels get a floor so domain-shifted inputs cannot blow
    # up after standardization.
    STD_FLOOR = 0.05

    @classmethod
    def fit(cls, features: np.ndarray) -> FeatureStats:
        std = features.std(axis=0)
        return cls(mean=features.mean(axis=0), std=np.maximum(std, cls.STD_FLOOR))

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std


@dataclass
class TrainedModel:
    backend: ClassifierBackend
    stats: FeatureStats
    image_side: int
    classes: list[str]
    train_ids: frozenset[str]
    log: list[dict] = field(default_factory=list)

    def predict_labels(self, samples: list[SampleRecord], images_root: Path) -> list[str]:
        images_root = Path(images_root)
        rows = np.stack([featurize((images_root / s.path).read_bytes(), self.image_side)
                         for s in samples])
        indices = self.backend.predict(self.stats.apply(rows))
        return [self.classes[i] for i in indices]

    def save_log(self, path: Path) -> None:
        lines = [json.dumps(entry, sort_keys=True) for entry in self.log]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_parameters(backend: ClassifierBackend, path: Path, *, n_classes: int,
                    feature_dim: int, seed: int) -> None:
    """JSON header line + flat little-endian float64 parameter vector."""
    header = json.dumps({"n_classes": n_classes, "feature_dim": feature_dim, "seed": seed},
                        sort_keys=True).encode("utf-8")
    Path(path).write_bytes(header + b"\n" + backend.parameters().astype("<f8").tobytes())


def load_parameters(path: Path) -> tuple[dict, np.ndarray]:
    data = Path(path).read_bytes()
    newline = data.index(b"\n")
    header = json.loads(data[:newline].decode("utf-8"))
    flat = np.frombuffer(data[newline + 1:], dtype="<f8")
    return header, np.array(flat)


def train(index: DatasetIndex, store: AugmentationStore, config: TrainConfig,
          backend: ClassifierBackend | None = None, *, images_root: Path) -> TrainedModel:
    """ERM over shuffled source batches, each the concat of originals and
    one randomly selected pre-generated variant per original.

    The final model is the last-epoch model; standardization statistics come
    from the training originals only.
    """
    images_root = Path(images_root)
    samples = sorted((s for s in index.samples if s.split == "train"), key=lambda s: s.id)
    if not samples:
        raise EmptyInput("index has no train-split samples")
    classes = list(index.classes)
    class_index = {c: i for i, c in enumerate(classes)}

    original_rows = np.stack([featurize((images_root / s.path).read_bytes(), config.image_side)
                              for s in samples])
    stats = FeatureStats.fit(original_rows)
    original_rows = stats.apply(original_rows)
    labels = np.array([class_index[s.class_label] for s in samples])

    backend = backend or SoftmaxRegressionBackend(learning_rate=config.learning_rate)
    backend.init(len(classes), original_rows.shape[1], config.seed)

    variant_cache: dict[tuple[str, str, int], np.ndarray] = {}

    def variant_row(rec) -> np.ndarray:
        if rec.key not in variant_cache:
            raw = featurize((images_root / rec.image_path).read_bytes(), config.image_side)
            variant_cache[rec.key] = stats.apply(raw)
        return variant_cache[rec.key]

    rng = random.Random(config.seed)
    n = len(samples)
    log: list[dict] = []
    for epoch in range(config.epochs):
        epoch_start = time.monotonic()
        order = list(range(n))
        rng.shuffle(order)
        losses: list[float] = []
        missing = 0
        for start in range(0, n, config.batch_size):
            batch_idx = order[start:start + config.batch_size]
            rows = [original_rows[i] for i in batch_idx]
            ys = [labels[i] for i in batch_idx]
            if config.use_augmentations:
                pairs = sample_training_pairs([samples[i] for i in batch_idx], store, rng)
                for (sample, rec), y in zip(pairs, list(ys)):
                    if rec is None:
                        missing += 1
                        continue
                    rows.append(variant_row(rec))
                    ys.append(y)
            features = np.stack(rows)
            onehot = np.zeros((len(ys), len(classes)))
            onehot[np.arange(len(ys)), ys] = 1.0
            loss = backend.train_step(features, onehot)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} in epoch {epoch}")
            losses.append(loss)
        log.append({"epoch": epoch, "mean_loss": float(np.mean(losses)),
                    "missing_variants": missing,
                    "wall_time": round(time.monotonic() - epoch_start, 4)})
    return TrainedModel(backend=backend, stats=stats, image_side=config.image_side,
                        classes=classes, train_ids=frozenset(s.id for s in samples), log=log)


def evaluate(model: TrainedModel, samples: list[SampleRecord], images_root: Path) -> float:
    """Accuracy percent over the given samples; train/test ids must be disjoint."""
    if not samples:
        raise EmptyInput("no samples to evaluate")
    overlap = {s.id for s in samples} & set(getattr(model, "train_ids", frozenset()))
    assert not overlap, f"{len(overlap)} test samples appeared in training"
    predicted = model.predict_labels(samples, images_root)
    correct = sum(1 for p, s in zip(predicted, samples) if p == s.class_label)
    return correct / len(samples) * 100.0


def _domain_index(index: DatasetIndex, domain: str, split: str = "train") -> DatasetIndex:
    samples = index.subset(domain=domain, split=split)
    sub = DatasetIndex(name=f"{index.name}:{domain}", domains=list(index.domains),
                       classes=list(index.classes), samples=samples)
    sub.validate()
    return sub


def run_sdg_protocol(index: DatasetIndex, catalog: PromptCatalog, config: TrainConfig,
                     *, images_root: Path, workdir: Path, gen_backend=None,
                     k: int | None = None, excluded_domains: set[str] | None = None,
                     knobs: GenerationKnobs | None = None,
                     backend_factory=None) -> dict[str, SdgReport]:
    """Train on each domain as the single source; test on every other domain.

    Leave-one-out runs thread excluded_domains into the plan so no stored
    prompt targets an excluded domain.
    """
    if len(index.domains) < 2:
        raise EmptyInput("SDG needs at least two domains")
    images_root = Path(images_root)
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    gen_backend = gen_backend or StubGenerationBackend(classes=index.classes)
    excluded = set(excluded_domains or ())
    mode = "sdg_leave_one_out" if excluded else "sdg_one_per_target"

    reports: dict[str, SdgReport] = {}
    for source in index.domains:
        if source in excluded:
            continue
        eligible = [d for d in index.domains if d != source and d not in excluded]
        k_source = k if k is not None else len(eligible)
        store = AugmentationStore(dataset_name=index.name, k=k_source)
        store_path = workdir / f"store-{source.replace(' ', '_')}.jsonl"
        if store_path.exists():
            store = AugmentationStore.load(store_path)
        if config.use_augmentations and k_source > 0:
            plan = build_plan(index, source, catalog, k_source, mode,
                              excluded_domains=excluded, rng_seed=config.seed)
            pregenerate(index, plan, gen_backend, store, images_root,
                        knobs=knobs, store_path=store_path)
        backend = backend_factory() if backend_factory else None
        model = train(_domain_index(index, source), store, config, backend,
                      images_root=images_root)
        per_target: dict[str, float] = {}
        for target in index.domains:
            if target == source:
                continue
            samples = index.subset(domain=target)
            per_target[target] = evaluate(model, samples, images_root)
        reports[source] = SdgReport.build(source, per_target)
    return reports


def _texture_label(sample: SampleRecord, images_root: Path) -> str:
    params = synthetic.decode_params((Path(images_root) / sample.path).read_bytes())
    if params is None:
        raise MissingSplit(f"cue-conflict sample {sample.path} carries no texture metadata")
    return synthetic.texture_class(params.texture)


def run_rrsf_protocol(index: DatasetIndex, bias_kind: str, config: TrainConfig,
                      catalog: PromptCatalog | None = None, *, images_root: Path,
                      workdir: Path, gen_backend=None, knobs: GenerationKnobs | None = None,
                      model: TrainedModel | None = None) -> BiasReport:
    """Train with a k=4 correlation-randomizing plan and measure the bias
    index the kind calls for; a pre-trained model may be injected instead."""
    if bias_kind not in RRSF_REQUIRED_DOMAINS:
        raise ValueError(f"bias_kind must be one of {sorted(RRSF_REQUIRED_DOMAINS)}")
    required = RRSF_REQUIRED_DOMAINS[bias_kind]
    for domain in required:
        if not index.subset(domain=domain):
            raise MissingSplit(f"{bias_kind} evaluation needs domain {domain!r}")
    images_root = Path(images_root)
    workdir = Path(workdir)

    if model is None:
        if catalog is None:
            raise ValueError("catalog is required when training inside the protocol")
        workdir.mkdir(parents=True, exist_ok=True)
        gen_backend = gen_backend or StubGenerationBackend(classes=index.classes)
        store = AugmentationStore(dataset_name=index.name, k=RRSF_K)
        store_path = workdir / f"store-rrsf-{bias_kind}.jsonl"
        if store_path.exists():
            store = AugmentationStore.load(store_path)
        if config.use_augmentations:
            plan = build_plan(index, "train", catalog, RRSF_K, "rrsf_random",
                              rng_seed=config.seed)
            pregenerate(index, plan, gen_backend, store, images_root,
                        knobs=knobs, store_path=store_path)
        model = train(_domain_index(index, "train"), store, config,
                      images_root=images_root)

    def accuracy(domain: str) -> float:
        return evaluate(model, index.subset(domain=domain), images_root)

    if bias_kind == "background":
        same, rand = accuracy("test_mixed_same"), accuracy("test_mixed_rand")
        report = BiasReport(kind="background", gap=background_gap(same, rand),
                            inputs={"acc_mixed_same": same, "acc_mixed_rand": rand})
    elif bias_kind == "demographic":
        iid, flip, rand = accuracy("test_iid"), accuracy("test_flip"), accuracy("test_rand")
        flip_gap, rand_gap = demographic_gaps(iid, flip, rand)
        report = BiasReport(kind="demographic", flip_gap=flip_gap, rand_gap=rand_gap,
                            inputs={"acc_iid": iid, "acc_flip": flip, "acc_rand": rand})
    else:
        samples = index.subset(domain="test_cue_conflict")
        predicted = model.predict_labels(samples, images_root)
        tp_texture = sum(1 for p, s in zip(predicted, samples)
                         if p == _texture_label(s, images_root))
        tp_shape = sum(1 for p, s in zip(predicted, samples) if p == s.class_label)
        inputs = {"tp_texture": tp_texture, "tp_shape": tp_shape}
        try:
            value = texture_bias(tp_texture, tp_shape)
            report = BiasReport(kind="texture", texture_bias=value, inputs=inputs)
        except UndefinedMetric:
            report = BiasReport(kind="texture", texture_bias=None, inputs=inputs,
                                note="not applicable: no correct texture or shape predictions")
    report.validate()
    return report
