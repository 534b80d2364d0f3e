/** Repeating poll with exponential backoff and at most one tick in flight.
 * The next tick is scheduled only after the previous one settles, so a slow
 * response can never stack requests. */
export class Poller {
  private timer: ReturnType<typeof setTimeout> | undefined;
  private stopped = true;
  private inFlight = false;
  private delay: number;

  constructor(
    private readonly fn: () => Promise<void>,
    private readonly baseMs = 1000,
    private readonly maxMs = 8000,
  ) {
    this.delay = baseMs;
  }

  start(): void {
    if (!this.stopped) {
      return;
    }
    this.stopped = false;
    this.delay = this.baseMs;
    void this.tick();
  }

  stop(): void {
    this.stopped = true;
    if (this.timer !== undefined) {
      clearTimeout(this.timer);
      this.timer = undefined;
    }
  }

  /** Poll now instead of waiting out the current interval. */
  kick(): void {
    if (this.stopped || this.inFlight) {
      return;
    }
    if (this.timer !== undefined) {
      clearTimeout(this.timer);
      this.timer = undefined;
    }
    void this.tick();
  }

  private async tick(): Promise<void> {
    if (this.stopped) {
      return;
    }
    this.inFlight = true;
    try {
      await this.fn();
      this.delay = this.baseMs;
    } catch {
      this.delay = Math.min(this.delay * 2, this.maxMs);
    } finally {
      this.inFlight = false;
    }
    if (!this.stopped) {
      this.timer = setTimeout(() => void this.tick(), this.delay);
    }
  }
}
