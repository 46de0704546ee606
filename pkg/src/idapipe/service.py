"""HTTP service exposing stores, reports, prompt catalogs, and job control.

Reads never mutate state; the only writers are PUT /api/prompts/{strategy}
(new catalog revision) and POST /api/regenerate (background job), and both
journal their effects so a restarted service reports terminal states.
"""
from __future__ import annotations

import hashlib
import json
import threading
import time
import uuid
from dataclasses import dataclass, field, asdict
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel, Field

from .backends import StubGenerationBackend, HttpGenerationBackend
from .corpus import AugmentationStore, DatasetIndex, StoreWriter
from .errors import PipelineError
from .filtering import FilterReport, ParamsEmbedder, apply_filter, rank_report, score_store
from .pipeline import GenerationKnobs, pregenerate
from .prompts import PromptCatalog, build_plan, load_catalog
from .config import DEFAULT_CONFIG

JOBS_FILE = "jobs.jsonl"
REVISIONS_FILE = "prompt-revisions.jsonl"
RUNS_DIR = "runs"


# --- pydantic request/response models ---------------------------------------

class DatasetOut(BaseModel):
    name: str
    domains: list[str]
    classes: list[str]
    n_samples: int


class SampleOut(BaseModel):
    id: str
    path: str
    class_label: str
    domain_label: str
    split: str
    media_url: str


class SamplePage(BaseModel):
    items: list[SampleOut]
    page: int
    page_size: int
    total: int


class AugmentationOut(BaseModel):
    source_id: str
    prompt_id: str
    prompt_text: str
    target_domain: str
    backend_mode: str
    seed: int
    image_path: str
    status: str
    media_url: str | None = None
    avg_pct: float | None = None
    retained: bool | None = None


class CatalogOut(BaseModel):
    strategy: str
    compose: str
    keyed_by: str
    templates: dict[str, list[str]]
    revision_id: str | None = None


class PromptsOut(BaseModel):
    catalog: str
    strategies: dict[str, CatalogOut]


class CatalogPut(BaseModel):
    templates: dict[str, list[str]]
    compose: str = "class_with_article"
    keyed_by: str = "domain"
    note: str = ""
    expected_head: str | None = None


class RevisionOut(BaseModel):
    revision_id: str
    strategy: str
    compose: str
    keyed_by: str
    templates: dict[str, list[str]]
    created_at: float
    note: str


class RegenerateRequest(BaseModel):
    dataset: str
    strategy: str
    k: int = Field(ge=0)
    scope: dict = Field(default_factory=dict)


class JobOut(BaseModel):
    id: str
    kind: str
    status: str
    created_at: float
    updated_at: float
    detail: str = ""
    result: dict = Field(default_factory=dict)


class RunSummary(BaseModel):
    id: str
    kind: str
    created_at: float


class CompareOut(BaseModel):
    run_a: str
    run_b: str
    rows: list[dict]


# --- prompt revisions ---------------------------------------------------------

@dataclass
class PromptRevision:
    revision_id: str
    strategy: str
    compose: str
    keyed_by: str
    templates: dict[str, list[str]]
    created_at: float
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


class RevisionLog:
    """Append-only, linear-per-strategy catalog revision history."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.revisions: list[PromptRevision] = []
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self.revisions.append(PromptRevision(**json.loads(line)))

    def head(self, strategy: str) -> PromptRevision | None:
        for rev in reversed(self.revisions):
            if rev.strategy == strategy:
                return rev
        return None

    def history(self, strategy: str) -> list[PromptRevision]:
        return [r for r in self.revisions if r.strategy == strategy]

    def append(self, strategy: str, compose: str, keyed_by: str,
               templates: dict[str, list[str]], note: str) -> PromptRevision:
        n = len(self.history(strategy)) + 1
        rev = PromptRevision(revision_id=f"{strategy}-r{n}", strategy=strategy,
                             compose=compose, keyed_by=keyed_by,
                             templates=templates, created_at=time.time(), note=note)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rev.to_dict(), sort_keys=True) + "\n")
        self.revisions.append(rev)
        return rev


# --- jobs ----------------------------------------------------------------------

@dataclass
class Job:
    id: str
    kind: str
    status: str  # queued | running | succeeded | failed
    created_at: float
    updated_at: float
    detail: str = ""
    result: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


class JobJournal:
    def __init__(self, path: Path):
        self.path = Path(path)
        self.jobs: dict[str, Job] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    job = Job(**json.loads(line))
                    self.jobs[job.id] = job
        # A restarted service can only report terminal states.
        for job in self.jobs.values():
            if job.status in ("queued", "running"):
                job.status = "failed"
                job.detail = "interrupted by service restart"
                self._write(job)

    def _write(self, job: Job) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(job.to_dict(), sort_keys=True) + "\n")

    def create(self, kind: str) -> Job:
        job = Job(id=uuid.uuid4().hex[:12], kind=kind, status="queued",
                  created_at=time.time(), updated_at=time.time())
        self.jobs[job.id] = job
        self._write(job)
        return job

    def update(self, job: Job, status: str, detail: str = "", result: dict | None = None) -> None:
        job.status = status
        job.updated_at = time.time()
        if detail:
            job.detail = detail
        if result is not None:
            job.result = result
        self._write(job)


# --- service state ---------------------------------------------------------------

class ServiceState:
    def __init__(self, config: dict):
        self.config = config
        self.workdir = Path(config["workdir"])
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.images_root = Path(config["dataset"]["root"])
        self.index: DatasetIndex | None = None
        index_path = self.workdir / "index.jsonl"
        if index_path.exists():
            self.index = DatasetIndex.load(index_path)
        self.store_path = self.workdir / "augmentations.jsonl"
        self.store = (AugmentationStore.load(self.store_path) if self.store_path.exists()
                      else AugmentationStore(dataset_name=config["dataset"]["name"],
                                             k=config["generation"]["k"]))
        self.revisions = RevisionLog(self.workdir / REVISIONS_FILE)
        self.jobs = JobJournal(self.workdir / JOBS_FILE)
        self.regen_lock = threading.Lock()
        (self.workdir / RUNS_DIR).mkdir(exist_ok=True)

    def catalog_for(self, strategy: str) -> PromptCatalog:
        head = self.revisions.head(strategy)
        if head is not None:
            return PromptCatalog.from_raw(self.config["prompts"]["catalog"], head.revision_id,
                                          strategy, head.compose, head.keyed_by, head.templates)
        return load_catalog(self.config["prompts"]["catalog"], strategy)

    def _shipped_payload(self) -> dict:
        from importlib import resources
        name = self.config["prompts"]["catalog"]
        path = Path(name)
        if path.suffix == ".json" and path.exists():
            return json.loads(path.read_text(encoding="utf-8"))
        return json.loads(resources.files("idapipe.data.catalogs")
                          .joinpath(f"{name}.json").read_text(encoding="utf-8"))

    def shipped_strategies(self) -> list[str]:
        return sorted(self._shipped_payload()["strategies"])

    def raw_strategy(self, strategy: str) -> tuple[str, str, dict[str, list[str]], str | None]:
        """(compose, keyed_by, verbatim templates, head revision id) for display."""
        head = self.revisions.head(strategy)
        if head is not None:
            return head.compose, head.keyed_by, head.templates, head.revision_id
        section = self._shipped_payload()["strategies"][strategy]
        return (section.get("compose", "class_with_article"),
                section.get("keyed_by", "domain"), section["templates"], None)

    def latest_filter_report(self) -> FilterReport | None:
        path = self.workdir / "filter-report.jsonl"
        return FilterReport.load(path) if path.exists() else None

    def gen_backend(self):
        if self.config["generation"]["backend"] == "http":
            return HttpGenerationBackend(self.config["generation"]["base_url"])
        classes = self.index.classes if self.index else None
        return StubGenerationBackend(classes=classes)

    def run_files(self) -> list[Path]:
        return sorted((self.workdir / RUNS_DIR).glob("*.json"))


def _validate_catalog_put(strategy: str, body: CatalogPut) -> PromptCatalog:
    try:
        return PromptCatalog.from_raw("edited", "pending", strategy, body.compose,
                                      body.keyed_by, body.templates)
    except (ValueError, PipelineError) as exc:
        raise HTTPException(status_code=400,
                            detail={"error": "invalid_catalog", "message": str(exc)})


def _flatten(prefix: str, value, rows: list[dict], a_or_b: str,
             unit: str | None = None) -> None:
    if isinstance(value, dict):
        unit = value.get("unit", unit) if isinstance(value.get("unit"), str) else unit
        for key, sub in sorted(value.items()):
            if key == "unit":
                continue
            _flatten(f"{prefix}.{key}" if prefix else str(key), sub, rows, a_or_b, unit)
    elif isinstance(value, (int, float)) and not isinstance(value, bool):
        for row in rows:
            if row["metric"] == prefix:
                row[a_or_b] = float(value)
                return
        rows.append({"metric": prefix, a_or_b: float(value), "unit": unit})


def create_app(config: dict | None = None) -> FastAPI:
    state = ServiceState(config or DEFAULT_CONFIG)
    app = FastAPI(title="idapipe service", version="0.1.0")
    app.state.pipeline = state

    @app.exception_handler(PipelineError)
    def pipeline_error(_, exc: PipelineError):
        return JSONResponse(status_code=400,
                            content={"error": type(exc).__name__, "message": str(exc)})

    @app.get("/api/datasets", response_model=list[DatasetOut])
    def datasets():
        if state.index is None:
            return []
        return [DatasetOut(name=state.index.name, domains=state.index.domains,
                           classes=state.index.classes, n_samples=len(state.index.samples))]

    @app.get("/api/samples", response_model=SamplePage)
    def samples(domain: str | None = None, class_label: str | None = Query(None, alias="class"),
                page: int = 1, page_size: int = 50):
        if state.index is None:
            raise HTTPException(404, detail="no index ingested")
        subset = state.index.subset(domain=domain, class_label=class_label)
        start = (page - 1) * page_size
        items = [SampleOut(id=s.id, path=s.path, class_label=s.class_label,
                           domain_label=s.domain_label, split=s.split,
                           media_url=f"/media/{s.path}")
                 for s in subset[start:start + page_size]]
        return SamplePage(items=items, page=page, page_size=page_size, total=len(subset))

    @app.get("/api/augmentations", response_model=list[AugmentationOut])
    def augmentations(source_id: str | None = None, prompt_id: str | None = None):
        report = state.latest_filter_report()
        ranks = {}
        if report is not None:
            ranks = {e.record_id: e for e in report.entries}
        out = []
        for key in sorted(state.store.records):
            rec = state.store.records[key]
            if source_id is not None and rec.source_id != source_id:
                continue
            if prompt_id is not None and rec.prompt_id != prompt_id:
                continue
            rid = f"{rec.source_id}/{rec.prompt_id}-{rec.seed}"
            entry = ranks.get(rid)
            out.append(AugmentationOut(
                **rec.to_dict(),
                media_url=f"/media/{rec.image_path}" if rec.status == "ok" else None,
                avg_pct=entry.avg_pct if entry else None,
                retained=entry.retained if entry else None))
        return out

    @app.get("/api/prompts", response_model=PromptsOut)
    def prompts():
        strategies: dict[str, CatalogOut] = {}
        known = set(state.shipped_strategies()) | {r.strategy for r in state.revisions.revisions}
        for strategy in sorted(known):
            compose, keyed_by, templates, revision_id = state.raw_strategy(strategy)
            strategies[strategy] = CatalogOut(strategy=strategy, compose=compose,
                                              keyed_by=keyed_by, templates=templates,
                                              revision_id=revision_id)
        return PromptsOut(catalog=state.config["prompts"]["catalog"], strategies=strategies)

    @app.get("/api/prompts/{strategy}/history", response_model=list[RevisionOut])
    def prompt_history(strategy: str):
        return [RevisionOut(**r.to_dict()) for r in state.revisions.history(strategy)]

    @app.put("/api/prompts/{strategy}", response_model=RevisionOut)
    def put_prompts(strategy: str, body: CatalogPut):
        _validate_catalog_put(strategy, body)
        head = state.revisions.head(strategy)
        if body.expected_head is not None:
            head_id = head.revision_id if head else None
            if head_id != body.expected_head:
                raise HTTPException(409, detail={"error": "revision_conflict",
                                                 "head": head_id,
                                                 "expected": body.expected_head})
        rev = state.revisions.append(strategy, body.compose, body.keyed_by,
                                     body.templates, body.note)
        return RevisionOut(**rev.to_dict())

    def _run_regenerate(job: Job, request: RegenerateRequest) -> None:
        with state.regen_lock:  # one regeneration at a time per dataset
            state.jobs.update(job, "running")
            try:
                if state.index is None:
                    raise PipelineError("no index ingested")
                catalog = state.catalog_for(request.strategy)
                head = state.revisions.head(request.strategy)
                # A fresh base seed per revision keeps regenerated records
                # distinct from earlier runs even for unchanged prompts.
                seed_key = head.revision_id if head else "shipped"
                base_seed = int.from_bytes(
                    hashlib.sha256(seed_key.encode()).digest()[:4], "big")
                samples = [s for s in state.index.samples if s.split == "train"]
                limit = request.scope.get("limit")
                source_ids = request.scope.get("source_ids")
                if source_ids:
                    samples = [s for s in samples if s.id in set(source_ids)]
                samples.sort(key=lambda s: s.id)
                if limit:
                    samples = samples[:limit]
                sub = DatasetIndex(name=state.index.name, domains=state.index.domains,
                                   classes=state.index.classes, samples=samples)
                mode = ("rrsf_random" if catalog.compose == "attribute_only"
                        else "sdg_one_per_target")
                plan = build_plan(sub, None, catalog, request.k, mode, rng_seed=base_seed)
                knobs = GenerationKnobs(mode=state.config["generation"]["mode"],
                                        base_seed=base_seed)
                report = pregenerate(sub, plan, state.gen_backend(), state.store,
                                     state.images_root, knobs=knobs,
                                     store_path=state.store_path)
                scored, errors = score_store(state.store, state.index, state.images_root,
                                             ParamsEmbedder(state.index.classes))
                filtered = apply_filter(rank_report(scored, errors),
                                        state.config["filter"]["fraction"])
                filtered.save(state.workdir / "filter-report.jsonl")
                state.jobs.update(job, "succeeded", result={
                    "requested": report.requested, "ok": report.ok,
                    "failed": report.failed, "skipped": report.skipped,
                    "revision_id": head.revision_id if head else None})
            except Exception as exc:  # job machinery: report, never crash the service
                state.jobs.update(job, "failed", detail=str(exc))

    @app.post("/api/regenerate", response_model=JobOut)
    def regenerate(request: RegenerateRequest):
        job = state.jobs.create("regenerate")
        thread = threading.Thread(target=_run_regenerate, args=(job, request), daemon=True)
        thread.start()
        return JobOut(**job.to_dict())

    @app.get("/api/jobs/{job_id}", response_model=JobOut)
    def job_status(job_id: str):
        job = state.jobs.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, detail="unknown job")
        return JobOut(**job.to_dict())

    @app.get("/api/filter/report")
    def filter_report(run: str | None = None):
        path = (state.workdir / RUNS_DIR / f"{run}.jsonl" if run
                else state.workdir / "filter-report.jsonl")
        if not path.exists():
            raise HTTPException(404, detail="no filter report")
        report = FilterReport.load(path)
        return {"fraction_dropped": report.fraction_dropped,
                "entries": [e.to_dict() for e in report.entries],
                "errors": report.errors}

    @app.get("/api/metrics/runs", response_model=list[RunSummary])
    def metric_runs():
        out = []
        for path in state.run_files():
            payload = json.loads(path.read_text(encoding="utf-8"))
            out.append(RunSummary(id=path.stem, kind=payload.get("kind", "unknown"),
                                  created_at=payload.get("created_at", 0.0)))
        return out

    @app.get("/api/metrics/runs/{run_id}")
    def metric_run(run_id: str):
        path = state.workdir / RUNS_DIR / f"{run_id}.json"
        if not path.exists():
            raise HTTPException(404, detail="unknown run")
        return json.loads(path.read_text(encoding="utf-8"))

    @app.get("/api/metrics/compare", response_model=CompareOut)
    def compare(a: str, b: str):
        rows: list[dict] = []
        for run_id, tag in ((a, "a"), (b, "b")):
            path = state.workdir / RUNS_DIR / f"{run_id}.json"
            if not path.exists():
                raise HTTPException(404, detail=f"unknown run {run_id}")
            payload = json.loads(path.read_text(encoding="utf-8"))
            _flatten("", payload.get("report", {}), rows, tag)
        for row in rows:
            if "a" in row and "b" in row:
                row["delta"] = row["b"] - row["a"]
        rows = [row for row in rows if "delta" in row and row["metric"] != "created_at"]
        return CompareOut(run_a=a, run_b=b, rows=rows)

    @app.get("/media/{path:path}")
    def media(path: str):
        target = (state.images_root / path).resolve()
        if not str(target).startswith(str(state.images_root.resolve())):
            raise HTTPException(403, detail="path escapes media root")
        if not target.is_file():
            raise HTTPException(404, detail="no such file")
        return FileResponse(target)

    studio_dist = Path(state.config.get("service", {}).get("studio_dist", "frontend/dist"))
    if studio_dist.is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/studio", StaticFiles(directory=studio_dist, html=True), name="studio")

    return app


def save_metric_run(workdir: Path, kind: str, report: dict) -> str:
    """Persist a metrics run under runs/<kind>-<n>.json and return its id."""
    runs = Path(workdir) / RUNS_DIR
    runs.mkdir(parents=True, exist_ok=True)
    n = sum(1 for p in runs.glob(f"{kind}-*.json")) + 1
    run_id = f"{kind}-{n:03d}"
    payload = {"id": run_id, "kind": kind, "created_at": time.time(), "report": report}
    (runs / f"{run_id}.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                                         encoding="utf-8")
    return run_id
