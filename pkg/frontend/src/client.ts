/**
 * Debounced /v1/fuse client with stale-response discarding.
 *
 * Every edit (mask stroke, alpha change) calls schedule(); the request
 * only fires once the user has been idle for the debounce window. Each
 * request carries a monotonically increasing id, and a response is
 * rendered only if no newer request has been issued since — slider
 * scrubbing never paints an out-of-date frame.
 */

export interface FuseRequest {
  ir: string;
  vis: string;
  mask?: string;
  alpha?: number;
  checkpoint?: string;
}

export interface FuseResponse {
  fused: string;
  m_ir: string | null;
  m_vis: string | null;
  seg: string | null;
  metrics: Record<string, number>;
  timing_ms: number;
  alpha: number;
}

export interface ApiErrorBody {
  error: string;
  message: string;
}

export type FetchLike = (
  url: string,
  init: { method: string; headers: Record<string, string>; body: string },
) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;

export interface FusionClientOptions {
  baseUrl?: string;
  debounceMs?: number;
  fetchFn?: FetchLike;
  onResult: (response: FuseResponse, requestId: number) => void;
  onError: (message: string, status?: number) => void;
}

export const MIN_DEBOUNCE_MS = 250;

export class FusionClient {
  private readonly baseUrl: string;
  private readonly debounceMs: number;
  private readonly fetchFn: FetchLike;
  private readonly onResult: FusionClientOptions["onResult"];
  private readonly onError: FusionClientOptions["onError"];
  private timer: ReturnType<typeof setTimeout> | undefined;
  private nextId = 0;
  private latestIssued = 0;
  private latestRendered = 0;
  private pendingBody: FuseRequest | null = null;

  constructor(options: FusionClientOptions) {
    this.baseUrl = options.baseUrl ?? "";
    this.debounceMs = Math.max(MIN_DEBOUNCE_MS, options.debounceMs ?? 0);
    this.fetchFn = options.fetchFn ?? (fetch as unknown as FetchLike);
    this.onResult = options.onResult;
    this.onError = options.onError;
  }

  /** Queue a fuse request; coalesces edits inside the debounce window. */
  schedule(body: FuseRequest): void {
    this.pendingBody = body;
    if (this.timer !== undefined) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = undefined;
      const pending = this.pendingBody;
      this.pendingBody = null;
      if (pending) void this.send(pending);
    }, this.debounceMs);
  }

  /** Fire immediately (initial page load, retry button). */
  async send(body: FuseRequest): Promise<void> {
    const id = ++this.nextId;
    this.latestIssued = id;
    let response: FuseResponse;
    try {
      const res = await this.fetchFn(`${this.baseUrl}/v1/fuse`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      });
      if (!res.ok) {
        if (id === this.latestIssued) {
          const err = (await res.json().catch(() => null)) as
            | ApiErrorBody
            | null;
          this.onError(err?.message ?? `service error ${res.status}`,
            res.status);
        }
        return;
      }
      response = (await res.json()) as FuseResponse;
    } catch (exc) {
      if (id === this.latestIssued) {
        this.onError(exc instanceof Error ? exc.message : String(exc));
      }
      return;
    }
    // a newer request was issued (or already rendered) while this one was
    // in flight: drop it
    if (id !== this.latestIssued || id <= this.latestRendered) return;
    this.latestRendered = id;
    this.onResult(response, id);
  }

  hasPendingEdit(): boolean {
    return this.timer !== undefined;
  }
}
