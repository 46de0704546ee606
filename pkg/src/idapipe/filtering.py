"""Post-hoc dual-prompt filtering of generated images.

Each image is scored against a class prompt ("An image of a {class}") and a
domain prompt ("{domain}"); scores are turned into percentile ranks pooled
over the whole run, and the records with the lowest average rank are dropped.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Protocol

import httpx
import numpy as np
from scipy.stats import rankdata

from . import synthetic
from .corpus import AugmentationRecord, AugmentationStore, DatasetIndex
from .errors import BackendUnavailable

log = logging.getLogger(__name__)

REPORT_FILE = "filter-report.jsonl"


class MultimodalEmbedder(Protocol):
    """Image/text encoder pair mapping into one unit-norm space."""

    def embed_image(self, image: bytes) -> np.ndarray: ...

    def embed_text(self, text: str) -> np.ndarray: ...


def class_prompt(class_label: str) -> str:
    return f"An image of a {class_label}"


def domain_prompt(domain_label: str) -> str:
    return domain_label


def record_sort_id(rec: AugmentationRecord) -> str:
    return f"{rec.source_id}/{rec.prompt_id}-{rec.seed}"


@dataclass
class ScoredRecord:
    record_id: str
    source_id: str
    prompt_id: str
    seed: int
    class_score: float
    domain_score: float
    class_pct: float | None = None
    domain_pct: float | None = None
    avg_pct: float | None = None
    retained: bool | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FilterReport:
    fraction_dropped: float
    entries: list[ScoredRecord]
    errors: list[dict] = field(default_factory=list)

    def retained_ids(self) -> set[str]:
        return {e.record_id for e in self.entries if e.retained}

    def save(self, path: Path) -> None:
        lines = [json.dumps({"kind": "header", "fraction_dropped": self.fraction_dropped,
                             "n": len(self.entries),
                             "retained": sum(1 for e in self.entries if e.retained)},
                            sort_keys=True)]
        for entry in sorted(self.entries, key=lambda e: e.record_id):
            lines.append(json.dumps(dict(entry.to_dict(), kind="entry"), sort_keys=True))
        for err in self.errors:
            lines.append(json.dumps(dict(err, kind="error"), sort_keys=True))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> FilterReport:
        fraction = 0.0
        entries: list[ScoredRecord] = []
        errors: list[dict] = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                kind = obj.pop("kind", "entry")
                if kind == "header":
                    fraction = obj["fraction_dropped"]
                elif kind == "error":
                    errors.append(obj)
                else:
                    entries.append(ScoredRecord(**obj))
        return cls(fraction_dropped=fraction, entries=entries, errors=errors)


def score_pair(records: list[tuple[AugmentationRecord, bytes]], class_label: str,
               domain_label: str, embedder: MultimodalEmbedder) -> tuple[list[ScoredRecord], list[dict]]:
    """Cosine scores of each image against the pair's class and domain prompts.

    Embedder failures become error entries excluded from ranking.
    """
    try:
        class_vec = embedder.embed_text(class_prompt(class_label))
        domain_vec = embedder.embed_text(domain_prompt(domain_label))
    except Exception as exc:
        errs = [{"record_id": record_sort_id(rec), "reason": f"text embedding failed: {exc}"}
                for rec, _ in records]
        for err in errs:
            log.warning("filter: %(record_id)s excluded (%(reason)s)", err)
        return [], errs
    scored: list[ScoredRecord] = []
    errors: list[dict] = []
    for rec, image in records:
        try:
            vec = embedder.embed_image(image)
        except Exception as exc:
            err = {"record_id": record_sort_id(rec), "reason": f"image embedding failed: {exc}"}
            log.warning("filter: %(record_id)s excluded (%(reason)s)", err)
            errors.append(err)
            continue
        scored.append(ScoredRecord(
            record_id=record_sort_id(rec), source_id=rec.source_id,
            prompt_id=rec.prompt_id, seed=rec.seed,
            class_score=float(vec @ class_vec), domain_score=float(vec @ domain_vec)))
    return scored, errors


def percentile_ranks(scores: list[float]) -> list[float]:
    """Percentile of each score under an ascending ranking, ties averaged.

    Percentile = (0-based rank) / (n-1) * 100; a single score is 100 by
    convention.
    """
    n = len(scores)
    if n == 0:
        raise ValueError("scores must be non-empty")
    if n == 1:
        return [100.0]
    ranks = rankdata(scores, method="average")  # 1-based, ties averaged
    return [float((r - 1.0) / (n - 1) * 100.0) for r in ranks]


def rank_report(scored: list[ScoredRecord], errors: list[dict] | None = None) -> FilterReport:
    """Pool all scored records of a run into the two percentile rankings."""
    if scored:
        class_pcts = percentile_ranks([e.class_score for e in scored])
        domain_pcts = percentile_ranks([e.domain_score for e in scored])
        for entry, cp, dp in zip(scored, class_pcts, domain_pcts):
            entry.class_pct = cp
            entry.domain_pct = dp
            entry.avg_pct = (cp + dp) / 2.0
    return FilterReport(fraction_dropped=0.0, entries=list(scored), errors=list(errors or []))


def apply_filter(report: FilterReport, fraction_dropped: float) -> FilterReport:
    """Drop the floor(fraction * n) entries with the lowest average rank.

    Boundary ties break by ascending record id so the retained set is
    deterministic.
    """
    if not 0.0 <= fraction_dropped < 1.0:
        raise ValueError("fraction_dropped must lie in [0, 1)")
    entries = sorted(report.entries, key=lambda e: (e.avg_pct, e.record_id))
    n_drop = math.floor(fraction_dropped * len(entries))
    dropped = {e.record_id for e in entries[:n_drop]}
    out = []
    for entry in report.entries:
        out.append(ScoredRecord(**dict(entry.to_dict(), retained=entry.record_id not in dropped)))
    return FilterReport(fraction_dropped=fraction_dropped, entries=out,
                        errors=list(report.errors))


def score_store(store: AugmentationStore, index: DatasetIndex, images_root: Path,
                embedder: MultimodalEmbedder) -> tuple[list[ScoredRecord], list[dict]]:
    """Score every ok record in the store, grouped by (class, target domain)."""
    images_root = Path(images_root)
    class_of = {s.id: s.class_label for s in index.samples}
    groups: dict[tuple[str, str], list[tuple[AugmentationRecord, bytes]]] = {}
    errors: list[dict] = []
    for key in sorted(store.records):
        rec = store.records[key]
        if rec.status != "ok" or rec.source_id not in class_of:
            continue
        try:
            image = (images_root / rec.image_path).read_bytes()
        except OSError as exc:
            errors.append({"record_id": record_sort_id(rec), "reason": f"unreadable image: {exc}"})
            continue
        groups.setdefault((class_of[rec.source_id], rec.target_domain), []).append((rec, image))
    scored: list[ScoredRecord] = []
    for (class_label, domain_label) in sorted(groups):
        part, errs = score_pair(groups[(class_label, domain_label)], class_label,
                                domain_label, embedder)
        scored.extend(part)
        errors.extend(errs)
    return scored, errors


def retained_store(store: AugmentationStore, report: FilterReport) -> AugmentationStore:
    """View of the store keeping only records the report retains."""
    keep = report.retained_ids()
    view = AugmentationStore(dataset_name=store.dataset_name, k=store.k)
    for key, rec in store.records.items():
        if rec.status == "ok" and record_sort_id(rec) in keep:
            view.records[key] = rec
    return view


class HashEmbedder:
    """Deterministic unit vectors from content hashes; useful in tests."""

    def __init__(self, dim: int = 16):
        self.dim = dim

    def _vector(self, payload: bytes) -> np.ndarray:
        digest = hashlib.sha256(payload).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
        vec = rng.standard_normal(self.dim)
        return vec / np.linalg.norm(vec)

    def embed_image(self, image: bytes) -> np.ndarray:
        return self._vector(b"image\x00" + image)

    def embed_text(self, text: str) -> np.ndarray:
        return self._vector(b"text\x00" + text.encode("utf-8"))


class ParamsEmbedder:
    """Desk-scale embedder that understands the synthetic renderer's metadata.

    Images embed their generative parameters; texts embed the class/style/
    backdrop/texture tokens they mention, so cosine similarity is high
    exactly when the prompt's description matches the rendered content.
    """

    def __init__(self, classes: list[str] | None = None):
        self.classes = list(classes) if classes else list(synthetic.SHAPES)
        styles = sorted(synthetic.DOMAIN_STYLES)
        backdrops = sorted(synthetic.BACKDROPS)
        textures = sorted(synthetic.TEXTURES)
        self.axes: list[str] = ([f"class:{c}" for c in sorted(self.classes)]
                                + [f"style:{s}" for s in styles]
                                + [f"backdrop:{b}" for b in backdrops]
                                + [f"texture:{t}" for t in textures])
        self.dim = len(self.axes)

    def _unit(self, hot: set[str]) -> np.ndarray:
        vec = np.array([1.0 if axis in hot else 0.0 for axis in self.axes])
        norm = np.linalg.norm(vec)
        if norm == 0:
            vec = np.ones(self.dim)
            norm = np.linalg.norm(vec)
        return vec / norm

    def embed_image(self, image: bytes) -> np.ndarray:
        params = synthetic.decode_params(image)
        if params is None:
            return self._unit(set())
        hot = {f"class:{params.shape}", f"style:{params.style}", f"texture:{params.texture}"}
        if params.backdrop:
            hot.add(f"backdrop:{params.backdrop}")
        return self._unit(hot)

    def embed_text(self, text: str) -> np.ndarray:
        low = text.lower()
        hot = set()
        for c in self.classes:
            if c.lower() in low:
                hot.add(f"class:{c}")
        for s in synthetic.DOMAIN_STYLES:
            if s in low:
                hot.add(f"style:{s}")
        for b in synthetic.BACKDROPS:
            if f"{b} backdrop" in low:
                hot.add(f"backdrop:{b}")
        for t in synthetic.TEXTURES:
            if f"{t} texture" in low:
                hot.add(f"texture:{t}")
        return self._unit(hot)


class HttpEmbedder:
    """Client for POST /embed {kind: image|text, payload} -> {vector}."""

    def __init__(self, base_url: str, timeout_s: float = 60.0,
                 client: httpx.Client | None = None):
        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout_s)

    def _embed(self, kind: str, payload: str) -> np.ndarray:
        try:
            response = self._client.post(self.base_url + "/embed",
                                         json={"kind": kind, "payload": payload})
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"{self.base_url}/embed: {exc}") from exc
        if response.status_code >= 400:
            raise BackendUnavailable(f"{self.base_url}/embed: HTTP {response.status_code}")
        return np.asarray(response.json()["vector"], dtype=float)

    def embed_image(self, image: bytes) -> np.ndarray:
        return self._embed("image", base64.b64encode(image).decode("ascii"))

    def embed_text(self, text: str) -> np.ndarray:
        return self._embed("text", text)
