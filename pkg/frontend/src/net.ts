/** Debounced frame fetching with stale-response rejection. */

export type PostFn<B, R> = (body: B) => Promise<R>;

export interface RequesterOptions {
  /** Quiet time before a request is issued, in ms. */
  debounceMs?: number;
  /** Initial retry delay after a network failure, in ms. */
  retryMs?: number;
  /** Upper bound for the exponential backoff, in ms. */
  maxRetryMs?: number;
  /** Injectable timer, for tests. */
  setTimer?: (fn: () => void, ms: number) => unknown;
  clearTimer?: (handle: unknown) => void;
}

/**
 * Serializes render traffic: at most one request in flight, the latest
 * submitted body always wins, and responses that arrive out of order are
 * dropped by comparing monotone request ids.  Network failures surface
 * through `onError` and re-issue the latest body with exponential backoff.
 */
export class FrameRequester<B, R> {
  private nextId = 1;
  private lastDelivered = 0;
  private inFlight = false;
  private pending: B | null = null;
  private timer: unknown = null;
  private retryDelay: number;

  private readonly debounceMs: number;
  private readonly retryMs: number;
  private readonly maxRetryMs: number;
  private readonly setTimer: (fn: () => void, ms: number) => unknown;
  private readonly clearTimer: (handle: unknown) => void;

  constructor(
    private readonly post: PostFn<B, R>,
    private readonly onFrame: (result: R, id: number) => void,
    private readonly onError: (err: unknown) => void = () => {},
    opts: RequesterOptions = {},
  ) {
    this.debounceMs = opts.debounceMs ?? 150;
    this.retryMs = opts.retryMs ?? 500;
    this.maxRetryMs = opts.maxRetryMs ?? 8000;
    this.retryDelay = this.retryMs;
    this.setTimer = opts.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearTimer = opts.clearTimer ?? ((h) => clearTimeout(h as number));
  }

  /** Submits a new body; coalesces with anything not yet on the wire. */
  update(body: B): void {
    this.pending = body;
    if (this.timer !== null) this.clearTimer(this.timer);
    this.timer = this.setTimer(() => {
      this.timer = null;
      this.flush();
    }, this.debounceMs);
  }

  private flush(): void {
    if (this.inFlight || this.pending === null) return;
    const body = this.pending;
    this.pending = null;
    const id = this.nextId++;
    this.inFlight = true;
    this.post(body)
      .then((result) => {
        this.inFlight = false;
        this.retryDelay = this.retryMs;
        if (id > this.lastDelivered) {
          this.lastDelivered = id;
          this.onFrame(result, id);
        }
        this.flush();
      })
      .catch((err) => {
        this.inFlight = false;
        this.onError(err);
        // retry the most recent body unless a newer one arrived
        if (this.pending === null) this.pending = body;
        const delay = this.retryDelay;
        this.retryDelay = Math.min(this.maxRetryMs, this.retryDelay * 2);
        this.timer = this.setTimer(() => {
          this.timer = null;
          this.flush();
        }, delay);
      });
  }
}
