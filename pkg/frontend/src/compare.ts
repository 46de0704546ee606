// Run comparison view-model: tabulates two persisted metric runs side by
// side with signed deltas, all numbers exactly as served by the API.

import { ApiClient } from "./api.js";
import type { CompareRow } from "./types.js";

export interface CompareView {
  runA: string;
  runB: string;
  rows: CompareRow[];
  allZero: boolean;
}

export function formatValue(value: number, unit: string | null): string {
  const text = Number.isInteger(value) ? value.toFixed(1) : value.toFixed(2);
  return unit === "percent" ? `${text}%` : text;
}

export function formatDelta(delta: number, unit: string | null): string {
  const sign = delta > 0 ? "+" : "";
  return sign + formatValue(delta, unit);
}

export async function compareRuns(
  client: ApiClient,
  runA: string,
  runB: string,
): Promise<CompareView> {
  const payload = await client.compare(runA, runB);
  const rows = [...payload.rows].sort((x, y) => (x.metric < y.metric ? -1 : 1));
  return {
    runA: payload.run_a,
    runB: payload.run_b,
    rows,
    allZero: rows.every((row) => row.delta === 0),
  };
}
