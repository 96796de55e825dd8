/** Debounced inference loop: at most one in-flight request, newest wins.
 *
 * Slider movement calls onScaleChange; after the debounce window the latest
 * scales are sent. A change arriving while a request is in flight replaces
 * any queued one (it supersedes older pending positions). Identical
 * consecutive payloads are not re-sent.
 */

import { ApiClient, Mode, Scales, requestBody } from "./api.js";
import { HistoryEntry, SessionState, scalesEqual } from "./state.js";

export const DEBOUNCE_MS = 250;

type Timer = ReturnType<typeof setTimeout>;

export interface ControllerHooks {
  onResult?: (entry: HistoryEntry) => void;
  onError?: (message: string) => void;
  debounceMs?: number;
}

export class InferController {
  private timer: Timer | null = null;
  private inFlight = false;
  private queued: Scales | null = null;
  private lastSentKey: string | null = null;
  readonly debounceMs: number;

  constructor(
    private client: ApiClient,
    private state: SessionState,
    private hooks: ControllerHooks = {},
  ) {
    this.debounceMs = hooks.debounceMs ?? DEBOUNCE_MS;
  }

  /** Debounced entry point for slider movement. */
  onScaleChange(scales: Scales): void {
    this.state.setScales(scales);
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.request(this.state.scales);
    }, this.debounceMs);
  }

  /** Immediate send (image upload, mode switch, history replay). */
  async request(scales: Scales): Promise<void> {
    if (this.state.lqImageB64 === null) return;
    if (this.inFlight) {
      this.queued = { ...scales };
      return;
    }
    const key = JSON.stringify(requestBody(this.state.lqImageB64, scales, this.state.mode));
    if (key === this.lastSentKey) return;
    this.inFlight = true;
    try {
      const result = await this.client.infer(this.state.lqImageB64, scales, this.state.mode);
      this.lastSentKey = key;
      const entry = this.state.appendResult(scales, this.state.mode, result.image, result.timings_ms);
      this.hooks.onResult?.(entry);
    } catch (err) {
      this.hooks.onError?.(err instanceof Error ? err.message : String(err));
    } finally {
      this.inFlight = false;
      const next = this.queued;
      this.queued = null;
      if (next !== null && !scalesEqual(next, scales)) await this.request(next);
    }
  }

  /** Re-send a stored history entry's scales (replay). */
  async replay(index: number): Promise<void> {
    const entry = this.state.entryAt(index);
    if (entry === null) return;
    this.lastSentKey = null; // force a fresh request even for identical scales
    this.state.mode = entry.mode;
    await this.request(entry.scales);
  }

  resetDedupe(): void {
    this.lastSentKey = null;
  }
}

export type { Mode, Scales };
