export interface Timers {
  set: (fn: () => void, ms: number) => ReturnType<typeof setTimeout>;
  clear: (id: ReturnType<typeof setTimeout>) => void;
}

const realTimers: Timers = {
  set: (fn, ms) => setTimeout(fn, ms),
  clear: (id) => clearTimeout(id),
};

/**
 * Debounced single-flight runner for slider-driven regeneration. A burst of
 * request() calls within the debounce window produces one run; requests that
 * arrive while a run is in flight coalesce into exactly one follow-up run.
 * The runner reads current UI state when it starts, so the follow-up always
 * uses the newest values — stale intermediate states are never submitted.
 */
export class RegenScheduler {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private inFlight = false;
  private pending = false;
  private idleResolvers: (() => void)[] = [];

  constructor(
    private readonly run: () => Promise<void>,
    private readonly debounceMs: number = 300,
    private readonly timers: Timers = realTimers,
  ) {}

  request(): void {
    if (this.timer !== null) this.timers.clear(this.timer);
    this.timer = this.timers.set(() => {
      this.timer = null;
      this.start();
    }, this.debounceMs);
  }

  /** Run now, skipping the debounce (explicit submit button). */
  requestImmediate(): void {
    if (this.timer !== null) {
      this.timers.clear(this.timer);
      this.timer = null;
    }
    this.start();
  }

  private start(): void {
    if (this.inFlight) {
      this.pending = true;
      return;
    }
    this.inFlight = true;
    void this.run()
      .catch(() => {
        // errors surface through the run callback's own handling
      })
      .finally(() => {
        this.inFlight = false;
        if (this.pending) {
          this.pending = false;
          this.start();
        } else {
          const waiting = this.idleResolvers;
          this.idleResolvers = [];
          for (const resolve of waiting) resolve();
        }
      });
  }

  /** Resolves once no run is in flight or queued (timers must have fired). */
  whenIdle(): Promise<void> {
    if (!this.inFlight && this.timer === null && !this.pending) {
      return Promise.resolve();
    }
    return new Promise((resolve) => this.idleResolvers.push(resolve));
  }
}
