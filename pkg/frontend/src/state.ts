/** Session state: current input, scales, and an append-only result history. */

import type { Mode, Scales } from "./api.js";

export const SCALE_MIN = 0;
export const SCALE_MAX = 2;
export const SCALE_STEP = 0.05;

export interface HistoryEntry {
  scales: Scales;
  mode: Mode;
  /** Exact base64 PNG bytes as returned by the service; never re-encoded. */
  imageB64: string;
  timingsMs: number;
  index: number;
}

export function clampScale(v: number): number {
  if (!Number.isFinite(v)) return SCALE_MIN;
  return Math.min(SCALE_MAX, Math.max(SCALE_MIN, v));
}

export function scalesEqual(a: Scales, b: Scales): boolean {
  return a.pix === b.pix && a.sem === b.sem && a.gram === b.gram;
}

export class SessionState {
  lqImageB64: string | null = null;
  scales: Scales = { pix: 1, sem: 1, gram: 1 };
  mode: Mode = "residual";
  baseUrl: string;
  private readonly entries: HistoryEntry[] = [];

  constructor(baseUrl = "http://localhost:8731") {
    this.baseUrl = baseUrl;
  }

  get history(): readonly HistoryEntry[] {
    return this.entries;
  }

  setScales(scales: Scales): Scales {
    this.scales = { pix: clampScale(scales.pix), sem: clampScale(scales.sem), gram: clampScale(scales.gram) };
    return this.scales;
  }

  appendResult(scales: Scales, mode: Mode, imageB64: string, timingsMs: number): HistoryEntry {
    const entry: HistoryEntry = { scales: { ...scales }, mode, imageB64, timingsMs, index: this.entries.length };
    this.entries.push(entry);
    return entry;
  }

  entryAt(index: number): HistoryEntry | null {
    return index >= 0 && index < this.entries.length ? (this.entries[index] ?? null) : null;
  }

  /** The latest and the previous results, for side-by-side display. */
  latestPair(): { current: HistoryEntry | null; previous: HistoryEntry | null } {
    const n = this.entries.length;
    return { current: n > 0 ? this.entries[n - 1]! : null, previous: n > 1 ? this.entries[n - 2]! : null };
  }
}
