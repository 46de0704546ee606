// DOM shell: three tabs (Review, Prompts, Compare) wired to the view-model
// modules. All data comes from the service; failures show a retry banner
// without touching any state.

import { ApiClient } from "./api.js";
import { compareRuns, formatDelta, formatValue } from "./compare.js";
import { reviewSamples, type Grouping, type SortOrder } from "./review.js";
import { editAndRegenerate, CatalogValidationError } from "./revisions.js";
import type { AugmentationRecord, Sample } from "./types.js";

const client = new ApiClient("");

const state = {
  samples: [] as Sample[],
  records: [] as AugmentationRecord[],
  order: "worst_first" as SortOrder,
  grouping: "by_prompt" as Grouping,
  promptFilter: "",
  page: 1,
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function banner(message: string, kind: "error" | "info" = "info"): void {
  const node = el<HTMLDivElement>("banner");
  node.textContent = message;
  node.className = kind;
  node.style.display = message ? "block" : "none";
}

async function refreshData(): Promise<void> {
  try {
    [state.samples, state.records] = await Promise.all([
      client.allSamples(),
      client.augmentations(),
    ]);
    banner("");
  } catch (err) {
    banner(`service unreachable (${String(err)}); retry when it is back`, "error");
    return;
  }
  renderReview();
}

function renderReview(): void {
  const filters = state.promptFilter ? { promptId: state.promptFilter } : {};
  const page = reviewSamples(state.records, state.samples, {
    filters,
    order: state.order,
    page: state.page,
    pageSize: 24,
  });
  el<HTMLSpanElement>("review-total").textContent =
    `${page.total} records, page ${page.page}`;
  const grid = el<HTMLDivElement>("review-grid");
  grid.textContent = "";
  for (const row of page.rows) {
    const cell = document.createElement("figure");
    cell.className = "cell";
    const pair = document.createElement("div");
    pair.className = "pair";
    for (const src of [row.originalThumb, row.variantThumb]) {
      const img = document.createElement("img");
      if (src) img.src = src;
      pair.appendChild(img);
    }
    const caption = document.createElement("figcaption");
    const rank = row.avgPct === null ? "unranked" : `avg pct ${row.avgPct.toFixed(1)}`;
    const kept = row.retained === null ? "" : row.retained ? " · retained" : " · dropped";
    caption.textContent = `${row.promptText}\n${rank}${kept}`;
    cell.append(pair, caption);
    grid.appendChild(cell);
  }
}

async function renderPrompts(): Promise<void> {
  const payload = await client.prompts();
  const area = el<HTMLTextAreaElement>("prompts-editor");
  const select = el<HTMLSelectElement>("prompts-strategy");
  if (!select.options.length) {
    for (const name of Object.keys(payload.strategies).sort()) {
      select.add(new Option(name, name));
    }
  }
  const fallback = Object.keys(payload.strategies)[0] ?? "";
  const chosen = payload.strategies[select.value || fallback];
  if (chosen) {
    area.value = JSON.stringify(chosen.templates, null, 2);
    el<HTMLSpanElement>("prompts-revision").textContent =
      chosen.revision_id ?? "shipped catalog";
  }
}

async function submitPrompts(): Promise<void> {
  const select = el<HTMLSelectElement>("prompts-strategy");
  const area = el<HTMLTextAreaElement>("prompts-editor");
  const note = el<HTMLInputElement>("prompts-note").value;
  let templates: Record<string, string[]>;
  try {
    templates = JSON.parse(area.value);
  } catch {
    banner("catalog must be valid JSON", "error");
    return;
  }
  const datasets = await client.datasets();
  const dataset = datasets[0]?.name ?? "dataset";
  banner("revision submitted; regenerating a 5-sample scope…");
  try {
    const result = await editAndRegenerate(client, dataset, select.value, { templates, note },
      1, { limit: 5 });
    banner(`revision ${result.revision.revision_id} regenerated `
      + `(${String(result.job.result["ok"] ?? "?")} new records)`);
    await refreshData();
    await renderPrompts();
  } catch (err) {
    if (err instanceof CatalogValidationError) {
      banner(`invalid catalog: ${err.message}`, "error");
    } else {
      banner(String(err), "error");
    }
  }
}

async function renderCompare(): Promise<void> {
  const runs = await client.metricRuns();
  for (const id of ["compare-a", "compare-b"]) {
    const select = el<HTMLSelectElement>(id);
    select.textContent = "";
    for (const run of runs) select.add(new Option(`${run.id} (${run.kind})`, run.id));
  }
}

async function submitCompare(): Promise<void> {
  const a = el<HTMLSelectElement>("compare-a").value;
  const b = el<HTMLSelectElement>("compare-b").value;
  if (!a || !b) return;
  const view = await compareRuns(client, a, b);
  const table = el<HTMLTableElement>("compare-table");
  table.textContent = "";
  const head = table.insertRow();
  for (const text of ["metric", view.runA, view.runB, "delta"]) {
    const cell = document.createElement("th");
    cell.textContent = text;
    head.appendChild(cell);
  }
  for (const row of view.rows) {
    const tr = table.insertRow();
    tr.insertCell().textContent = row.metric;
    tr.insertCell().textContent = formatValue(row.a, row.unit);
    tr.insertCell().textContent = formatValue(row.b, row.unit);
    tr.insertCell().textContent = formatDelta(row.delta, row.unit);
  }
  el<HTMLSpanElement>("compare-status").textContent =
    view.allZero ? "runs are identical (all deltas zero)" : "";
}

function wire(): void {
  el<HTMLButtonElement>("sort-toggle").addEventListener("click", () => {
    state.order = state.order === "worst_first" ? "best_first" : "worst_first";
    el<HTMLButtonElement>("sort-toggle").textContent =
      state.order === "worst_first" ? "worst first" : "best first";
    renderReview();
  });
  el<HTMLInputElement>("prompt-filter").addEventListener("change", (event) => {
    state.promptFilter = (event.target as HTMLInputElement).value.trim();
    state.page = 1;
    renderReview();
  });
  el<HTMLButtonElement>("prompts-submit").addEventListener("click", () => {
    void submitPrompts();
  });
  el<HTMLSelectElement>("prompts-strategy").addEventListener("change", () => {
    void renderPrompts();
  });
  el<HTMLButtonElement>("compare-run").addEventListener("click", () => {
    void submitCompare();
  });
  for (const tab of Array.from(document.querySelectorAll<HTMLButtonElement>("[data-tab]"))) {
    tab.addEventListener("click", () => {
      for (const panel of Array.from(document.querySelectorAll<HTMLElement>(".panel"))) {
        panel.style.display = panel.id === `panel-${tab.dataset.tab}` ? "block" : "none";
      }
      if (tab.dataset.tab === "prompts") void renderPrompts();
      if (tab.dataset.tab === "compare") void renderCompare();
    });
  }
}

if (typeof document !== "undefined" && document.getElementById("review-grid")) {
  wire();
  void refreshData();
}
