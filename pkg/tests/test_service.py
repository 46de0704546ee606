from __future__ import annotations

import json
import time
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from idapipe import synthetic
from idapipe.cli import main
from idapipe.config import apply_overrides, load_config
from idapipe.service import create_app, save_metric_run


@pytest.fixture
def service(tmp_path):
    root = tmp_path / "data"
    synthetic.build_sdg_dataset(root, domains=("cartoon", "neon", "photo", "sketch"),
                                n_per_class_per_domain=2, seed=19)
    workdir = tmp_path / "work"
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps({
        "dataset": {"name": "desk", "root": str(root)},
        "workdir": str(workdir),
    }))
    assert main(["--config", str(config_path), "ingest"]) == 0
    assert main(["--config", str(config_path), "pregenerate", "--source", "photo",
                 "--k", "1", "--strategy", "M"]) == 0
    assert main(["--config", str(config_path), "filter", "--fraction", "0.25"]) == 0
    cfg = apply_overrides(load_config(config_path), [])
    app = create_app(cfg)
    return TestClient(app), workdir, cfg


def _wait_job(client, job_id, timeout=30):
    deadline = time.time() + timeout
    while time.time() < deadline:
        body = client.get(f"/api/jobs/{job_id}").json()
        if body["status"] in ("succeeded", "failed"):
            return body
        time.sleep(0.05)
    raise TimeoutError("job did not finish")


def test_datasets_and_samples(service):
    client, _, _ = service
    datasets = client.get("/api/datasets").json()
    assert datasets[0]["name"] == "desk"
    assert datasets[0]["n_samples"] == 32
    page = client.get("/api/samples", params={"domain": "photo", "page_size": 5}).json()
    assert page["total"] == 8
    assert len(page["items"]) == 5
    assert page["items"][0]["media_url"].startswith("/media/")


def test_media_roundtrip_and_traversal_guard(service):
    client, _, _ = service
    page = client.get("/api/samples", params={"page_size": 1}).json()
    media = client.get(page["items"][0]["media_url"])
    assert media.status_code == 200
    assert media.content[:8] == b"\x89PNG\r\n\x1a\n"
    assert client.get("/media/../config.json").status_code in (403, 404)


def test_augmentations_with_filter_ranks(service):
    client, _, _ = service
    records = client.get("/api/augmentations").json()
    assert len(records) == 8
    assert all(r["avg_pct"] is not None for r in records)
    source_id = records[0]["source_id"]
    per_source = client.get("/api/augmentations", params={"source_id": source_id}).json()
    assert all(r["source_id"] == source_id for r in per_source)


def test_prompts_roundtrip_verbatim(service):
    client, _, cfg = service
    body = client.get("/api/prompts").json()
    shipped = json.loads(Path(__file__).resolve().parents[1]
                         .joinpath("src/idapipe/data/catalogs/desk.json").read_text())
    assert body["strategies"]["M"]["templates"] == shipped["strategies"]["M"]["templates"]
    assert body["strategies"]["M"]["revision_id"] is None
    # PUT then GET returns the stored strings untouched.
    put = client.put("/api/prompts/H", json={
        "templates": {"photo": ["a grainy photo of "], "sketch": ["a sketch of"]},
        "note": "trailing space kept"})
    assert put.status_code == 200
    body = client.get("/api/prompts").json()
    assert body["strategies"]["H"]["templates"]["photo"] == ["a grainy photo of "]
    assert body["strategies"]["H"]["revision_id"] == "H-r1"


def test_put_prompts_validation_and_revisions(service):
    client, _, _ = service
    bad = client.put("/api/prompts/M", json={
        "templates": {"photo": ["two {CLASS} and {CLASS}"]}})
    assert bad.status_code == 400
    ok = client.put("/api/prompts/M", json={
        "templates": {"photo": ["a photo of"], "sketch": ["a sketch of"],
                      "cartoon": ["a cartoon of"], "neon": ["a neon render of"],
                      "extra": ["a woodcut of"]},
        "note": "add woodcut style"})
    assert ok.status_code == 200
    rev = ok.json()
    assert rev["revision_id"] == "M-r1"
    history = client.get("/api/prompts/M/history").json()
    assert [r["revision_id"] for r in history] == ["M-r1"]
    conflict = client.put("/api/prompts/M", json={
        "templates": {"photo": ["a photo of"]}, "expected_head": "M-r9"})
    assert conflict.status_code == 409
    accepted = client.put("/api/prompts/M", json={
        "templates": {"photo": ["a photo of"]}, "expected_head": "M-r1"})
    assert accepted.json()["revision_id"] == "M-r2"


def test_regenerate_job_creates_new_records(service):
    client, workdir, _ = service
    before = {(r["source_id"], r["prompt_id"], r["seed"])
              for r in client.get("/api/augmentations").json()}
    put = client.put("/api/prompts/M", json={
        "templates": {"photo": ["a photo of"], "sketch": ["a hatched sketch of"],
                      "cartoon": ["a cartoon of"], "neon": ["a neon render of"]},
        "note": "rework sketch prompt"})
    assert put.status_code == 200
    job = client.post("/api/regenerate", json={
        "dataset": "desk", "strategy": "M", "k": 1, "scope": {"limit": 5}}).json()
    done = _wait_job(client, job["id"])
    assert done["status"] == "succeeded", done
    assert done["result"]["ok"] == 5
    after = client.get("/api/augmentations").json()
    new = [r for r in after
           if (r["source_id"], r["prompt_id"], r["seed"]) not in before]
    assert len(new) == 5
    assert all(r["avg_pct"] is not None for r in new)
    # The journal reflects the new records too.
    assert (workdir / "augmentations.jsonl").exists()


def test_job_unknown_404(service):
    client, _, _ = service
    assert client.get("/api/jobs/doesnotexist").status_code == 404


def test_filter_report_endpoint(service):
    client, _, _ = service
    body = client.get("/api/filter/report").json()
    assert body["fraction_dropped"] == 0.25
    assert len(body["entries"]) == 8


def test_metric_runs_and_compare(service):
    client, workdir, _ = service
    report = {"photo": {"average": 80.0, "per_target_accuracy": {"sketch": 80.0}}}
    run_a = save_metric_run(workdir, "sdg", report)
    run_b = save_metric_run(workdir, "sdg", report)
    runs = client.get("/api/metrics/runs").json()
    assert {r["id"] for r in runs} == {run_a, run_b}
    one = client.get(f"/api/metrics/runs/{run_a}").json()
    assert one["kind"] == "sdg"
    compare = client.get("/api/metrics/compare", params={"a": run_a, "b": run_a}).json()
    assert compare["rows"]
    assert all(row["delta"] == 0.0 for row in compare["rows"])
    assert client.get("/api/metrics/runs/nope").status_code == 404


def test_restart_marks_running_jobs_failed(service, tmp_path):
    client, workdir, cfg = service
    jobs_file = workdir / "jobs.jsonl"
    jobs_file.write_text(json.dumps({
        "id": "stuck1", "kind": "regenerate", "status": "running",
        "created_at": 0.0, "updated_at": 0.0, "detail": "", "result": {}}) + "\n")
    app = create_app(cfg)
    with TestClient(app) as fresh:
        body = fresh.get("/api/jobs/stuck1").json()
    assert body["status"] == "failed"
    assert "interrupted" in body["detail"]
