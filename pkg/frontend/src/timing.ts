/** Clock and timer abstraction so trial phases can be driven by real
 * browser timers in production and by a fake clock in unit tests. */

export interface Scheduler {
  now(): number;
  after(ms: number, cb: () => void): () => void;
}

export const realScheduler: Scheduler = {
  now: () => performance.now(),
  after(ms, cb) {
    const handle = setTimeout(cb, ms);
    return () => clearTimeout(handle);
  },
};

/** Sleep until an absolute deadline rather than for a relative duration,
 * so consecutive phases do not accumulate timer drift. */
export function sleepUntil(sched: Scheduler, deadline: number): Promise<void> {
  return new Promise((resolve) => {
    const tick = () => {
      const remaining = deadline - sched.now();
      if (remaining <= 0) {
        resolve();
        return;
      }
      // setTimeout fires late, never early; one shot is enough
      sched.after(remaining, tick);
    };
    tick();
  });
}

/** Deterministic scheduler for tests: time advances only via advance(). */
export class FakeScheduler implements Scheduler {
  private time = 0;
  private queue: { at: number; cb: () => void; cancelled: boolean }[] = [];

  now(): number {
    return this.time;
  }

  after(ms: number, cb: () => void): () => void {
    const entry = { at: this.time + ms, cb, cancelled: false };
    this.queue.push(entry);
    return () => {
      entry.cancelled = true;
    };
  }

  async advance(ms: number): Promise<void> {
    const target = this.time + ms;
    for (;;) {
      const due = this.queue
        .filter((e) => !e.cancelled && e.at <= target)
        .sort((a, b) => a.at - b.at)[0];
      if (!due) break;
      this.queue.splice(this.queue.indexOf(due), 1);
      this.time = due.at;
      due.cb();
      // let promise continuations scheduled by the callback run
      await Promise.resolve();
    }
    this.time = target;
    await Promise.resolve();
  }
}
