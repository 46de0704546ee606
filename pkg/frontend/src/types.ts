// Payload types of the idapipe service API (the studio's only data source).

export interface DatasetInfo {
  name: string;
  domains: string[];
  classes: string[];
  n_samples: number;
}

export interface Sample {
  id: string;
  path: string;
  class_label: string;
  domain_label: string;
  split: string;
  media_url: string;
}

export interface SamplePage {
  items: Sample[];
  page: number;
  page_size: number;
  total: number;
}

export interface AugmentationRecord {
  source_id: string;
  prompt_id: string;
  prompt_text: string;
  target_domain: string;
  backend_mode: string;
  seed: number;
  image_path: string;
  status: "ok" | "failed";
  media_url: string | null;
  avg_pct: number | null;
  retained: boolean | null;
}

export interface CatalogStrategy {
  strategy: string;
  compose: string;
  keyed_by: string;
  templates: Record<string, string[]>;
  revision_id: string | null;
}

export interface PromptsPayload {
  catalog: string;
  strategies: Record<string, CatalogStrategy>;
}

export interface PromptRevision {
  revision_id: string;
  strategy: string;
  compose: string;
  keyed_by: string;
  templates: Record<string, string[]>;
  created_at: number;
  note: string;
}

export interface CatalogEdit {
  templates: Record<string, string[]>;
  compose?: string;
  keyed_by?: string;
  note?: string;
  expected_head?: string | null;
}

export interface Job {
  id: string;
  kind: string;
  status: "queued" | "running" | "succeeded" | "failed";
  created_at: number;
  updated_at: number;
  detail: string;
  result: Record<string, unknown>;
}

export interface RegenerateScope {
  limit?: number;
  source_ids?: string[];
}

export interface RunSummary {
  id: string;
  kind: string;
  created_at: number;
}

export interface CompareRow {
  metric: string;
  a: number;
  b: number;
  delta: number;
  unit: string | null;
}

export interface ComparePayload {
  run_a: string;
  run_b: string;
  rows: CompareRow[];
}
