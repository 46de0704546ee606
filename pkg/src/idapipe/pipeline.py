"""Pre-generation of the augmentation store and the training-stage sampler.

Pre-generation walks the plan's (sample, prompt) pairs in a deterministic
order, generating exactly one image per pair; runs are resumable because
every pair's record key is derived deterministically and ok records are
skipped on re-entry.
"""
from __future__ import annotations

import hashlib
import json
import random
import time
from dataclasses import dataclass, asdict
from pathlib import Path

from .backends import GenerationRequest, DEFAULT_STRENGTH, DEFAULT_GUIDANCE, DEFAULT_STEPS
from .corpus import (AugmentationRecord, AugmentationStore, DatasetIndex, SampleRecord,
                     StoreWriter, get_variants, put_record)
from .errors import BackendTimeout, BackendUnavailable, InvalidRequest, PipelineError
from .prompts import PromptPlan

REPORT_FILE = "pregenerate-report.json"


@dataclass
class GenerationKnobs:
    mode: str = "sdedit"
    strength: float = DEFAULT_STRENGTH
    guidance_scale: float = DEFAULT_GUIDANCE
    steps: int = DEFAULT_STEPS
    base_seed: int = 0


@dataclass
class PregenerateReport:
    requested: int = 0
    ok: int = 0
    failed: int = 0
    skipped: int = 0
    wall_time_s: float = 0.0

    def save(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), sort_keys=True) + "\n", encoding="utf-8")


def derive_seed(source_id: str, prompt_id: str, slot: int, base_seed: int) -> int:
    """Stable uint32 per (sample, prompt, slot); slots keep repeated prompts distinct."""
    digest = hashlib.sha256(f"{source_id}:{prompt_id}:{slot}:{base_seed}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def variant_path(source_id: str, prompt_id: str, seed: int) -> str:
    return f"aug/{source_id}/{prompt_id}-{seed}.png"


def pregenerate(index: DatasetIndex, plan: PromptPlan, backend, store: AugmentationStore,
                images_root: Path, knobs: GenerationKnobs | None = None,
                store_path: Path | None = None, mask_provider=None) -> PregenerateReport:
    """Generate one image per (sample, prompt) pair in the plan.

    Per-pair failures become status=failed records and are aggregated into
    the run report; only store I/O failures abort the run.
    """
    knobs = knobs or GenerationKnobs()
    images_root = Path(images_root)
    samples_by_id = {s.id: s for s in index.samples}
    writer = StoreWriter(store_path, store.dataset_name, store.k) if store_path else None

    work: list[tuple[str, int, object]] = []
    for source_id in sorted(plan.assignments):
        if source_id not in samples_by_id:
            raise PipelineError(f"plan covers unknown sample {source_id}")
        for slot, prompt in enumerate(plan.assignments[source_id]):
            work.append((source_id, slot, prompt))
    work.sort(key=lambda item: (item[0], item[2].id, item[1]))

    report = PregenerateReport(requested=len(work))
    started = time.monotonic()
    needs_source = knobs.mode in ("sdedit", "controlnet_canny", "instructpix2pix", "inpaint")

    for source_id, slot, prompt in work:
        seed = derive_seed(source_id, prompt.id, slot, knobs.base_seed)
        key = (source_id, prompt.id, seed)
        existing = store.records.get(key)
        if existing is not None and existing.status == "ok":
            report.skipped += 1
            continue

        sample = samples_by_id[source_id]
        rel_path = variant_path(source_id, prompt.id, seed)
        record = None
        try:
            source_bytes = (images_root / sample.path).read_bytes() if needs_source else None
            mask = None
            if knobs.mode == "inpaint":
                if mask_provider is None:
                    raise InvalidRequest("inpaint mode needs a mask_provider")
                mask = mask_provider(source_bytes)
            if knobs.mode == "retrieval":
                result = backend.retrieve(prompt.text, 1)
                if not result.images:
                    raise BackendUnavailable("retrieval returned no hits")
            else:
                request = GenerationRequest(mode=knobs.mode, prompt=prompt.text,
                                            source_image=source_bytes, mask=mask,
                                            strength=knobs.strength,
                                            guidance_scale=knobs.guidance_scale,
                                            steps=knobs.steps, seed=seed)
                result = backend.generate(request)
            out_path = images_root / rel_path
            out_path.parent.mkdir(parents=True, exist_ok=True)
            out_path.write_bytes(result.images[0])
            record = AugmentationRecord(source_id=source_id, prompt_id=prompt.id,
                                        prompt_text=prompt.text,
                                        target_domain=prompt.target_domain,
                                        backend_mode=knobs.mode, seed=seed,
                                        image_path=rel_path, status="ok")
            report.ok += 1
        except (BackendTimeout, BackendUnavailable, InvalidRequest, OSError, ValueError) as exc:
            if isinstance(exc, OSError) and record is not None:
                raise  # store-side I/O failure, not a generation failure
            record = AugmentationRecord(source_id=source_id, prompt_id=prompt.id,
                                        prompt_text=prompt.text,
                                        target_domain=prompt.target_domain,
                                        backend_mode=knobs.mode, seed=seed,
                                        image_path="", status="failed")
            report.failed += 1
        put_record(store, record)
        if writer is not None:
            writer.append(record)

    report.wall_time_s = round(time.monotonic() - started, 3)
    return report


def sample_training_pairs(batch: list[SampleRecord], store: AugmentationStore,
                          rng: random.Random) -> list[tuple[SampleRecord, AugmentationRecord | None]]:
    """Pair every batch sample with one uniformly chosen ok variant.

    Samples without variants pass through with None; batch order is
    preserved and the rng is the only source of randomness.
    """
    pairs: list[tuple[SampleRecord, AugmentationRecord | None]] = []
    for sample in batch:
        variants = get_variants(store, sample.id)
        if not variants:
            pairs.append((sample, None))
        else:
            pairs.append((sample, variants[rng.randrange(len(variants))]))
    return pairs
