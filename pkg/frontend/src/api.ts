// Thin typed client over the idapipe service. Every studio mutation flows
// through these documented endpoints; there is no hidden state.

import type {
  AugmentationRecord,
  CatalogEdit,
  ComparePayload,
  DatasetInfo,
  Job,
  PromptRevision,
  PromptsPayload,
  RegenerateScope,
  RunSummary,
  Sample,
  SamplePage,
} from "./types.js";

export class ApiError extends Error {
  constructor(message: string, public status: number, public body: unknown) {
    super(message);
  }
}

export class ApiClient {
  constructor(private baseUrl: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    let body: unknown = null;
    try {
      body = await response.json();
    } catch {
      // non-JSON error bodies are fine; keep the status
    }
    if (!response.ok) {
      throw new ApiError(`${path}: HTTP ${response.status}`, response.status, body);
    }
    return body as T;
  }

  datasets(): Promise<DatasetInfo[]> {
    return this.request("/api/datasets");
  }

  samplePage(params: { domain?: string; class?: string; page?: number; page_size?: number } = {}):
    Promise<SamplePage> {
    const query = new URLSearchParams();
    for (const [key, value] of Object.entries(params)) {
      if (value !== undefined) query.set(key, String(value));
    }
    const suffix = query.toString() ? `?${query}` : "";
    return this.request(`/api/samples${suffix}`);
  }

  async allSamples(): Promise<Sample[]> {
    const out: Sample[] = [];
    let page = 1;
    for (;;) {
      const batch = await this.samplePage({ page, page_size: 500 });
      out.push(...batch.items);
      if (out.length >= batch.total || batch.items.length === 0) return out;
      page += 1;
    }
  }

  augmentations(params: { source_id?: string; prompt_id?: string } = {}):
    Promise<AugmentationRecord[]> {
    const query = new URLSearchParams();
    if (params.source_id) query.set("source_id", params.source_id);
    if (params.prompt_id) query.set("prompt_id", params.prompt_id);
    const suffix = query.toString() ? `?${query}` : "";
    return this.request(`/api/augmentations${suffix}`);
  }

  prompts(): Promise<PromptsPayload> {
    return this.request("/api/prompts");
  }

  promptHistory(strategy: string): Promise<PromptRevision[]> {
    return this.request(`/api/prompts/${encodeURIComponent(strategy)}/history`);
  }

  putPrompts(strategy: string, edit: CatalogEdit): Promise<PromptRevision> {
    return this.request(`/api/prompts/${encodeURIComponent(strategy)}`, {
      method: "PUT",
      body: JSON.stringify(edit),
    });
  }

  regenerate(dataset: string, strategy: string, k: number, scope: RegenerateScope):
    Promise<Job> {
    return this.request("/api/regenerate", {
      method: "POST",
      body: JSON.stringify({ dataset, strategy, k, scope }),
    });
  }

  job(id: string): Promise<Job> {
    return this.request(`/api/jobs/${encodeURIComponent(id)}`);
  }

  metricRuns(): Promise<RunSummary[]> {
    return this.request("/api/metrics/runs");
  }

  metricRun(id: string): Promise<Record<string, unknown>> {
    return this.request(`/api/metrics/runs/${encodeURIComponent(id)}`);
  }

  compare(a: string, b: string): Promise<ComparePayload> {
    return this.request(`/api/metrics/compare?a=${encodeURIComponent(a)}&b=${encodeURIComponent(b)}`);
  }
}

/** Poll a job until it reaches a terminal state; resolves on success. */
export async function pollJob(
  client: ApiClient,
  jobId: string,
  opts: { intervalMs?: number; timeoutMs?: number } = {},
): Promise<Job> {
  const interval = opts.intervalMs ?? 250;
  const deadline = Date.now() + (opts.timeoutMs ?? 60_000);
  for (;;) {
    const job = await client.job(jobId);
    if (job.status === "succeeded") return job;
    if (job.status === "failed") throw new Error(`job ${jobId} failed: ${job.detail}`);
    if (Date.now() > deadline) throw new Error(`job ${jobId} timed out`);
    await new Promise((resolve) => setTimeout(resolve, interval));
  }
}
