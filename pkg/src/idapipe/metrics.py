"""Quantitative evaluation: SDG aggregation, bias indices, Fréchet distance,
and the duplication check.

Accuracies are carried as percents throughout, matching the convention of
the benchmark tables these indices come from; serialized reports tag the
unit explicitly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import EmptyInput, UndefinedMetric

PERCENT = "percent"


def sdg_average(per_target: dict[str, float]) -> float:
    """Arithmetic mean accuracy over the target domains."""
    if not per_target:
        raise EmptyInput("per-target accuracy map is empty")
    return float(sum(per_target.values()) / len(per_target))


def background_gap(acc_mixed_same: float, acc_mixed_rand: float) -> float:
    """Accuracy difference between the mixed-same and mixed-random test sets."""
    return acc_mixed_same - acc_mixed_rand


def texture_bias(tp_texture: int, tp_shape: int) -> float:
    """Correct texture classifications over all correct texture+shape ones."""
    if tp_texture + tp_shape == 0:
        raise UndefinedMetric("no correct texture or shape classifications")
    return tp_texture / (tp_texture + tp_shape)


def demographic_gaps(acc_iid: float, acc_flip: float, acc_rand: float) -> tuple[float, float]:
    """(flip_gap, rand_gap): accuracy drop from the i.i.d. split to each shifted one."""
    return acc_iid - acc_flip, acc_iid - acc_rand


@dataclass
class SdgReport:
    source_domain: str
    per_target_accuracy: dict[str, float]
    average: float

    @classmethod
    def build(cls, source_domain: str, per_target: dict[str, float]) -> SdgReport:
        return cls(source_domain=source_domain, per_target_accuracy=dict(per_target),
                   average=sdg_average(per_target))

    def validate(self) -> None:
        assert abs(self.average - sdg_average(self.per_target_accuracy)) < 1e-9

    def to_dict(self) -> dict:
        return dict(asdict(self), unit=PERCENT)


@dataclass
class BiasReport:
    kind: str  # background | texture | demographic
    gap: float | None = None
    texture_bias: float | None = None
    flip_gap: float | None = None
    rand_gap: float | None = None
    inputs: dict = field(default_factory=dict)
    note: str = ""

    def validate(self) -> None:
        """Every present index must recompute from its echoed inputs."""
        if self.gap is not None:
            assert abs(self.gap - background_gap(self.inputs["acc_mixed_same"],
                                                 self.inputs["acc_mixed_rand"])) < 1e-9
        if self.texture_bias is not None:
            assert abs(self.texture_bias - texture_bias(self.inputs["tp_texture"],
                                                        self.inputs["tp_shape"])) < 1e-9
        if self.flip_gap is not None or self.rand_gap is not None:
            flip, rand = demographic_gaps(self.inputs["acc_iid"], self.inputs["acc_flip"],
                                          self.inputs["acc_rand"])
            assert abs(self.flip_gap - flip) < 1e-9
            assert abs(self.rand_gap - rand) < 1e-9

    def to_dict(self) -> dict:
        return dict(asdict(self), unit=PERCENT)


@dataclass
class SetStatistics:
    """Gaussian fit (mean, covariance) of an embedded image set."""

    mean: np.ndarray
    covariance: np.ndarray
    n: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)
        if self.covariance.shape != (self.mean.shape[0], self.mean.shape[0]):
            raise ValueError("covariance shape must be (E, E)")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-8):
            raise ValueError("covariance must be symmetric")

    @classmethod
    def from_features(cls, features: np.ndarray) -> SetStatistics:
        features = np.asarray(features, dtype=float)
        if features.ndim != 2 or features.shape[0] < 2:
            raise ValueError("need a 2-D feature matrix with at least 2 rows")
        # Unbiased (n-1) normalizer, the convention of FID implementations.
        cov = np.cov(features, rowvar=False, ddof=1)
        cov = np.atleast_2d(cov)
        return cls(mean=features.mean(axis=0), covariance=(cov + cov.T) / 2.0,
                   n=features.shape[0])


PSD_TOLERANCE = -1e-8


def frechet_distance(a: SetStatistics, b: SetStatistics) -> float:
    """Fréchet distance between the two Gaussian fits.

    ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}); the matrix square
    root is taken on the symmetrized product, rejecting eigenvalues below
    -1e-8 and clamping the band [-1e-8, 0) to zero.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError("dimension mismatch between statistics")
    diff = a.mean - b.mean
    mean_term = float(diff @ diff)
    product = a.covariance @ b.covariance
    sym = (product + product.T) / 2.0
    eigvals = np.linalg.eigvalsh(sym)
    if eigvals.min() < PSD_TOLERANCE:
        raise ValueError(f"covariance product is not PSD within tolerance "
                         f"(min eigenvalue {eigvals.min():.3e})")
    eigvals = np.clip(eigvals, 0.0, None)
    trace_sqrt = float(np.sqrt(eigvals).sum())
    return mean_term + float(np.trace(a.covariance + b.covariance)) - 2.0 * trace_sqrt


@dataclass
class DuplicationReport:
    fraction_flagged: float
    n_candidates: int
    n_flagged: int
    threshold: float
    top_pairs: list[tuple[int, int, float]]

    def to_dict(self) -> dict:
        return {
            "fraction_flagged": self.fraction_flagged,
            "n_candidates": self.n_candidates,
            "n_flagged": self.n_flagged,
            "threshold": self.threshold,
            "top_pairs": [{"candidate": c, "test": t, "similarity": s}
                          for c, t, s in self.top_pairs],
        }


def duplication_report(candidate_features: np.ndarray, test_features: np.ndarray,
                       threshold: float = 0.9, n_top_pairs: int = 20) -> DuplicationReport:
    """Flag candidates whose best cosine similarity to any test feature
    reaches the threshold; report the flagged proportion and the most
    similar pairs for visual inspection."""
    candidates = np.asarray(candidate_features, dtype=float)
    tests = np.asarray(test_features, dtype=float)
    if candidates.size == 0 or tests.size == 0:
        raise EmptyInput("candidate and test feature sets must be non-empty")
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    sims = candidates @ tests.T
    best = sims.max(axis=1)
    flagged = int((best >= threshold).sum())
    flat = [(float(sims[i, j]), i, j)
            for i in range(sims.shape[0]) for j in range(sims.shape[1])]
    flat.sort(key=lambda item: (-item[0], item[1], item[2]))
    top = [(i, j, s) for s, i, j in flat[:n_top_pairs]]
    return DuplicationReport(fraction_flagged=flagged / candidates.shape[0],
                             n_candidates=candidates.shape[0], n_flagged=flagged,
                             threshold=threshold, top_pairs=top)


def save_report(payload: dict, path: Path) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")
