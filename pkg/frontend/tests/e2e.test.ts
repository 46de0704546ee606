// End-to-end against the stub-backed service: edit a prompt catalog, let a
// scoped regeneration run, and confirm the new records land in the review
// grid with filter ranks; a run compared with itself shows all-zero deltas.

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { compareRuns } from "../src/compare.js";
import { reviewSamples } from "../src/review.js";
import { editAndRegenerate, CatalogValidationError } from "../src/revisions.js";
import { startFixtureService, type Fixture } from "./harness.js";

let fixture: Fixture;
let client: ApiClient;

beforeAll(async () => {
  fixture = await startFixtureService(8911);
  client = new ApiClient(fixture.baseUrl);
}, 120_000);

afterAll(() => {
  fixture?.stop();
});

describe("studio end-to-end", () => {
  it("edits the catalog, regenerates a 5-sample scope, and shows the records", async () => {
    const before = await client.augmentations();
    const beforeKeys = new Set(before.map((r) => `${r.source_id}/${r.prompt_id}-${r.seed}`));

    const prompts = await client.prompts();
    const minimal = prompts.strategies["M"];
    expect(minimal).toBeDefined();
    const edited = {
      ...minimal!.templates,
      sketch: ["a hatched sketch of"],
    };

    const { revision, job } = await editAndRegenerate(
      client, "desk", "M", { templates: edited, note: "rework sketch prompt" },
      1, { limit: 5 }, { timeoutMs: 90_000 });
    expect(revision.revision_id).toBe("M-r1");
    expect(job.status).toBe("succeeded");
    expect(job.result["ok"]).toBe(5);

    const history = await client.promptHistory("M");
    expect(history.map((r) => r.revision_id)).toContain("M-r1");

    const [records, samples] = await Promise.all([
      client.augmentations(),
      client.allSamples(),
    ]);
    const fresh = records.filter(
      (r) => !beforeKeys.has(`${r.source_id}/${r.prompt_id}-${r.seed}`));
    expect(fresh).toHaveLength(5);

    // The review grid shows the new records with their served filter ranks.
    const grid = reviewSamples(records, samples, { order: "worst_first", pageSize: 100 });
    const freshIds = new Set(fresh.map((r) => `${r.source_id}/${r.prompt_id}-${r.seed}`));
    const freshRows = grid.rows.filter((row) => freshIds.has(row.recordId));
    expect(freshRows).toHaveLength(5);
    for (const row of freshRows) {
      expect(row.avgPct).not.toBeNull();
      expect(row.variantThumb).toMatch(/^\/media\//);
    }
  }, 120_000);

  it("rejects an invalid template client-side and server-side", async () => {
    await expect(editAndRegenerate(
      client, "desk", "M",
      { templates: { sketch: ["{CLASS} of {CLASS}"] } }, 1, { limit: 1 },
    )).rejects.toBeInstanceOf(CatalogValidationError);

    const response = await fetch(`${fixture.baseUrl}/api/prompts/M`, {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ templates: { sketch: ["{CLASS} of {CLASS}"] } }),
    });
    expect(response.status).toBe(400);
  });

  it("compare of a run with itself is all-zero deltas", async () => {
    const runs = await client.metricRuns();
    expect(runs.length).toBeGreaterThan(0);
    const run = runs[0]!;
    const view = await compareRuns(client, run.id, run.id);
    expect(view.rows.length).toBeGreaterThan(0);
    expect(view.allZero).toBe(true);
    for (const row of view.rows) {
      expect(row.delta).toBe(0);
    }
  });
});
