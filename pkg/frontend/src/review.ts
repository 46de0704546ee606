// Review grid view-model: joins augmentation records (which arrive with
// their served filter ranks) to source samples, groups, sorts, paginates.
// The studio never computes metrics; avg_pct is shown exactly as served.

import type { AugmentationRecord, Sample } from "./types.js";

export type Grouping = "by_prompt" | "by_domain" | "by_class";
export type SortOrder = "best_first" | "worst_first";

export interface ReviewRow {
  recordId: string;
  sourceId: string;
  promptId: string;
  seed: number;
  promptText: string;
  targetDomain: string;
  classLabel: string;
  originalThumb: string;
  variantThumb: string | null;
  avgPct: number | null;
  retained: boolean | null;
}

export interface ReviewFilters {
  promptId?: string;
  targetDomain?: string;
  classLabel?: string;
}

export interface ReviewPage {
  rows: ReviewRow[];
  page: number;
  pageSize: number;
  total: number;
}

export function buildRows(records: AugmentationRecord[], samples: Sample[]): ReviewRow[] {
  const byId = new Map(samples.map((s) => [s.id, s]));
  const rows: ReviewRow[] = [];
  for (const rec of records) {
    if (rec.status !== "ok") continue;
    const source = byId.get(rec.source_id);
    rows.push({
      recordId: `${rec.source_id}/${rec.prompt_id}-${rec.seed}`,
      sourceId: rec.source_id,
      promptId: rec.prompt_id,
      seed: rec.seed,
      promptText: rec.prompt_text,
      targetDomain: rec.target_domain,
      classLabel: source?.class_label ?? "?",
      originalThumb: source?.media_url ?? "",
      variantThumb: rec.media_url,
      avgPct: rec.avg_pct,
      retained: rec.retained,
    });
  }
  return rows;
}

export function applyFilters(rows: ReviewRow[], filters: ReviewFilters): ReviewRow[] {
  return rows.filter((row) =>
    (filters.promptId === undefined || row.promptId === filters.promptId) &&
    (filters.targetDomain === undefined || row.targetDomain === filters.targetDomain) &&
    (filters.classLabel === undefined || row.classLabel === filters.classLabel));
}

export function groupKey(row: ReviewRow, grouping: Grouping): string {
  switch (grouping) {
    case "by_prompt": return row.promptText;
    case "by_domain": return row.targetDomain;
    case "by_class": return row.classLabel;
  }
}

export function groupRows(rows: ReviewRow[], grouping: Grouping): Map<string, ReviewRow[]> {
  const groups = new Map<string, ReviewRow[]>();
  for (const row of rows) {
    const key = groupKey(row, grouping);
    const bucket = groups.get(key);
    if (bucket) bucket.push(row);
    else groups.set(key, [row]);
  }
  return groups;
}

/** Ascending by served avg_pct (unscored rows last), id as the tiebreak;
 *  best_first is exactly the reverse so the toggle round-trips. */
export function sortRows(rows: ReviewRow[], order: SortOrder): ReviewRow[] {
  const ascending = [...rows].sort((x, y) => {
    const a = x.avgPct ?? Number.POSITIVE_INFINITY;
    const b = y.avgPct ?? Number.POSITIVE_INFINITY;
    if (a !== b) return a - b;
    return x.recordId < y.recordId ? -1 : x.recordId > y.recordId ? 1 : 0;
  });
  return order === "worst_first" ? ascending : ascending.reverse();
}

export function paginate(rows: ReviewRow[], page: number, pageSize: number): ReviewPage {
  const start = (page - 1) * pageSize;
  return {
    rows: rows.slice(start, start + pageSize),
    page,
    pageSize,
    total: rows.length,
  };
}

export function reviewSamples(
  records: AugmentationRecord[],
  samples: Sample[],
  opts: { filters?: ReviewFilters; order?: SortOrder; page?: number; pageSize?: number } = {},
): ReviewPage {
  const rows = sortRows(
    applyFilters(buildRows(records, samples), opts.filters ?? {}),
    opts.order ?? "worst_first",
  );
  return paginate(rows, opts.page ?? 1, opts.pageSize ?? 24);
}
