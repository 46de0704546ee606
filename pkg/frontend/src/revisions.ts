// Edit-and-regenerate loop: persist a catalog revision, enqueue a scoped
// regeneration, and surface the job until new records land in the store.

import { ApiClient, pollJob } from "./api.js";
import { validateCatalog, type TemplateIssue } from "./validation.js";
import type { CatalogEdit, Job, PromptRevision, RegenerateScope } from "./types.js";

export class CatalogValidationError extends Error {
  constructor(public issues: TemplateIssue[]) {
    super(issues.map((i) => `${i.key}[${i.index}]: ${i.message}`).join("; "));
  }
}

export interface EditAndRegenerateResult {
  revision: PromptRevision;
  job: Job;
}

export async function editAndRegenerate(
  client: ApiClient,
  dataset: string,
  strategy: string,
  edit: CatalogEdit,
  k: number,
  scope: RegenerateScope,
  opts: { timeoutMs?: number } = {},
): Promise<EditAndRegenerateResult> {
  const issues = validateCatalog(edit.templates, edit.compose ?? "class_with_article");
  if (issues.length > 0) {
    throw new CatalogValidationError(issues); // rejected client-side before any request
  }
  const revision = await client.putPrompts(strategy, edit);
  const queued = await client.regenerate(dataset, strategy, k, scope);
  const job = await pollJob(client, queued.id, { timeoutMs: opts.timeoutMs ?? 120_000 });
  return { revision, job };
}

export interface RevisionComparison {
  strategy: string;
  older: PromptRevision | null;
  newer: PromptRevision | null;
  addedTemplates: string[];
  removedTemplates: string[];
}

/** Side-by-side view of two points in a strategy's linear history. */
export function compareRevisions(
  strategy: string,
  older: PromptRevision | null,
  newer: PromptRevision | null,
): RevisionComparison {
  const flatten = (rev: PromptRevision | null) =>
    new Set(rev ? Object.values(rev.templates).flat() : []);
  const before = flatten(older);
  const after = flatten(newer);
  return {
    strategy,
    older,
    newer,
    addedTemplates: [...after].filter((t) => !before.has(t)).sort(),
    removedTemplates: [...before].filter((t) => !after.has(t)).sort(),
  };
}
