"""Content-addressed image corpus: dataset indices and augmentation stores.

Both artifacts serialize as JSON Lines (one record per line, UTF-8, object
keys sorted) so they diff cleanly and tolerate concurrent whole-line appends.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from PIL import Image

from .errors import EmptyDataset, KeyConflict

SPLITS = ("train", "val", "test")
BACKEND_MODES = ("text2image", "sdedit", "controlnet_canny", "instructpix2pix", "inpaint", "retrieval")
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp"}

INDEX_FILE = "index.jsonl"
STORE_FILE = "augmentations.jsonl"


def content_id(image_bytes: bytes, relative_path: str) -> str:
    """sha256 over bytes + NUL + relative path.

    The path salt keeps byte-identical files under different classes distinct,
    since class labels live in paths.
    """
    digest = hashlib.sha256()
    digest.update(image_bytes)
    digest.update(b"\x00")
    digest.update(relative_path.encode("utf-8"))
    return digest.hexdigest()


@dataclass(frozen=True)
class SampleRecord:
    id: str
    path: str
    class_label: str
    domain_label: str
    split: str = "train"

    def __post_init__(self):
        if len(self.id) != 64:
            raise ValueError("sample id must be a 64-char content hash")
        if not self.class_label or not self.domain_label:
            raise ValueError("class_label and domain_label must be non-empty")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SampleRecord:
        return cls(id=d["id"], path=d["path"], class_label=d["class_label"],
                   domain_label=d["domain_label"], split=d.get("split", "train"))


@dataclass
class DatasetIndex:
    name: str
    domains: list[str]
    classes: list[str]
    samples: list[SampleRecord]

    def validate(self) -> None:
        if self.domains != sorted(set(self.domains)):
            raise ValueError("domains must be deduplicated and sorted")
        if self.classes != sorted(set(self.classes)):
            raise ValueError("classes must be deduplicated and sorted")
        seen: set[str] = set()
        for s in self.samples:
            if s.domain_label not in self.domains:
                raise ValueError(f"sample {s.id} has undeclared domain {s.domain_label!r}")
            if s.class_label not in self.classes:
                raise ValueError(f"sample {s.id} has undeclared class {s.class_label!r}")
            if s.id in seen:
                raise ValueError(f"duplicate sample id {s.id}")
            seen.add(s.id)

    def subset(self, domain: str | None = None, split: str | None = None,
               class_label: str | None = None) -> list[SampleRecord]:
        out = self.samples
        if domain is not None:
            out = [s for s in out if s.domain_label == domain]
        if split is not None:
            out = [s for s in out if s.split == split]
        if class_label is not None:
            out = [s for s in out if s.class_label == class_label]
        return list(out)

    def save(self, path: Path) -> None:
        lines = [json.dumps({"kind": "header", "name": self.name, "domains": self.domains,
                             "classes": self.classes}, sort_keys=True)]
        for s in self.samples:
            lines.append(json.dumps(dict(s.to_dict(), kind="sample"), sort_keys=True))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> DatasetIndex:
        name, domains, classes = "", [], []
        samples: list[SampleRecord] = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                if obj.get("kind") == "header":
                    name, domains, classes = obj["name"], obj["domains"], obj["classes"]
                else:
                    obj.pop("kind", None)
                    samples.append(SampleRecord.from_dict(obj))
        index = cls(name=name, domains=domains, classes=classes, samples=samples)
        index.validate()
        return index


@dataclass
class RejectedFile:
    path: str
    reason: str


@dataclass
class IngestResult:
    index: DatasetIndex
    rejects: list[RejectedFile]


def _decodable(data: bytes) -> bool:
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.verify()
        return True
    except Exception:
        return False


def ingest_directory(root: Path, layout: str = "domain_class", *, name: str | None = None,
                     domain: str = "default", split: str = "train") -> IngestResult:
    """Build an immutable index from a directory tree.

    domain_class expects root/<domain>/<class>/<image>; class_only expects
    root/<class>/<image> and labels every sample with ``domain``.
    Undecodable files land in the rejects report; only an entirely empty or
    entirely rejected tree is fatal.
    """
    root = Path(root)
    if layout not in ("domain_class", "class_only"):
        raise ValueError(f"unknown layout {layout!r}")
    if not root.is_dir():
        raise EmptyDataset(f"{root} does not exist")

    samples: list[SampleRecord] = []
    rejects: list[RejectedFile] = []
    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        rel = path.relative_to(root).as_posix()
        parts = rel.split("/")
        expected_depth = 3 if layout == "domain_class" else 2
        if len(parts) != expected_depth:
            rejects.append(RejectedFile(rel, f"expected depth {expected_depth} for layout {layout}"))
            continue
        try:
            data = path.read_bytes()
        except OSError as exc:
            rejects.append(RejectedFile(rel, f"unreadable: {exc}"))
            continue
        if not _decodable(data):
            rejects.append(RejectedFile(rel, "undecodable image"))
            continue
        if layout == "domain_class":
            sample_domain, sample_class = parts[0], parts[1]
        else:
            sample_domain, sample_class = domain, parts[0]
        samples.append(SampleRecord(id=content_id(data, rel), path=rel,
                                    class_label=sample_class, domain_label=sample_domain,
                                    split=split))
    if not samples:
        raise EmptyDataset(f"no usable images under {root} ({len(rejects)} rejected)")

    samples.sort(key=lambda s: s.id)
    index = DatasetIndex(
        name=name or root.name,
        domains=sorted({s.domain_label for s in samples}),
        classes=sorted({s.class_label for s in samples}),
        samples=samples,
    )
    index.validate()
    return IngestResult(index=index, rejects=rejects)


@dataclass(frozen=True)
class AugmentationRecord:
    source_id: str
    prompt_id: str
    prompt_text: str
    target_domain: str
    backend_mode: str
    seed: int
    image_path: str
    status: str  # ok | failed

    def __post_init__(self):
        if self.status not in ("ok", "failed"):
            raise ValueError("status must be ok or failed")
        if self.backend_mode not in BACKEND_MODES:
            raise ValueError(f"backend_mode must be one of {BACKEND_MODES}")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")
        if self.status == "ok" and not self.image_path:
            raise ValueError("ok records must carry an image_path")

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.source_id, self.prompt_id, self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> AugmentationRecord:
        d = {k: v for k, v in d.items() if k != "kind"}
        return cls(**d)


@dataclass
class AugmentationStore:
    """Map source sample -> generated variants, keyed by (source, prompt, seed)."""

    dataset_name: str
    k: int
    records: dict[tuple[str, str, int], AugmentationRecord] = field(default_factory=dict)

    def ok_count(self) -> int:
        return sum(1 for r in self.records.values() if r.status == "ok")

    def source_ids(self) -> list[str]:
        return sorted({r.source_id for r in self.records.values()})

    def save(self, path: Path) -> None:
        lines = [json.dumps({"kind": "header", "dataset_name": self.dataset_name, "k": self.k},
                            sort_keys=True)]
        for key in sorted(self.records):
            lines.append(json.dumps(dict(self.records[key].to_dict(), kind="record"), sort_keys=True))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> AugmentationStore:
        store = cls(dataset_name="", k=0)
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                if obj.get("kind") == "header":
                    store.dataset_name = obj["dataset_name"]
                    store.k = obj["k"]
                else:
                    put_record(store, AugmentationRecord.from_dict(obj))
        return store


def put_record(store: AugmentationStore, rec: AugmentationRecord) -> AugmentationStore:
    """Idempotent insert keyed by (source_id, prompt_id, seed).

    Identical re-puts are no-ops; a retry may upgrade a failed record to ok
    (never the reverse); two ok records with diverging payload conflict.
    """
    existing = store.records.get(rec.key)
    if existing is None:
        store.records[rec.key] = rec
    elif existing == rec:
        pass
    elif existing.status == "failed":
        store.records[rec.key] = rec
    elif rec.status == "failed":
        pass  # an ok record is authoritative over a late failure report
    else:
        raise KeyConflict(
            f"key {rec.key} already stored with different payload "
            f"({existing.image_path!r}/{existing.prompt_text!r} vs {rec.image_path!r}/{rec.prompt_text!r})")
    return store


def get_variants(store: AugmentationStore, source_id: str) -> list[AugmentationRecord]:
    """ok-status variants for a source, sorted by (prompt_id, seed)."""
    out = [r for r in store.records.values()
           if r.source_id == source_id and r.status == "ok"]
    out.sort(key=lambda r: (r.prompt_id, r.seed))
    return out


class StoreWriter:
    """Append-only journal for concurrent pre-generation workers.

    Each append is a single whole-line write; readers get a consistent
    snapshot by reading to EOF (AugmentationStore.load applies put semantics
    line by line, so duplicate lines collapse).
    """

    def __init__(self, path: Path, dataset_name: str, k: int):
        self.path = Path(path)
        if not self.path.exists():
            header = json.dumps({"kind": "header", "dataset_name": dataset_name, "k": k},
                                sort_keys=True)
            self.path.write_text(header + "\n", encoding="utf-8")

    def append(self, rec: AugmentationRecord) -> None:
        line = json.dumps(dict(rec.to_dict(), kind="record"), sort_keys=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
