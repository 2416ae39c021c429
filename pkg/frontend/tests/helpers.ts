import type { Answer, TrialDescriptor } from "../src/api";
import type { Display } from "../src/trial";
import type { Scheduler } from "../src/timing";

/** Display that records every call, for asserting phase order and the
 * exact bytes handed to the screen. */
export class RecordingDisplay implements Display {
  events: string[] = [];
  shownBytes: Uint8Array[] = [];

  showFixation(): void {
    this.events.push("fixation");
  }
  showImage(bytes: Uint8Array): void {
    this.events.push("image");
    this.shownBytes.push(bytes);
  }
  showBlank(): void {
    this.events.push("blank");
  }
  showResponsePrompt(): void {
    this.events.push("prompt");
  }
  clear(): void {
    this.events.push("clear");
  }
}

/** Scheduler whose timers fire on the next macrotask while the clock
 * jumps by the requested amount, so multi-second trials run instantly
 * with exact logged durations. */
export class InstantScheduler implements Scheduler {
  private time = 0;

  now(): number {
    return this.time;
  }

  after(ms: number, cb: () => void): () => void {
    let cancelled = false;
    const deadline = this.time + ms;
    setTimeout(() => {
      if (cancelled) return;
      this.time = Math.max(this.time, deadline);
      cb();
    }, 0);
    return () => {
      cancelled = true;
    };
  }
}

export function descriptor(overrides: Partial<TrialDescriptor> = {}): TrialDescriptor {
  return {
    done: false,
    trial_id: "t0000",
    image_a: "/images/cs0000/initial.png",
    image_b: "/images/cs0000/cand_000.png",
    display_ms: 1000,
    blank_ms: 500,
    ...overrides,
  };
}

export function bytesFor(url: string): Uint8Array {
  return new TextEncoder().encode(`png-bytes:${url}`);
}

export const instantLoader = (url: string): Promise<Uint8Array> =>
  Promise.resolve(bytesFor(url));

export interface PostedResponse {
  trialId: string;
  observer: string;
  answer: Answer;
  responseMs: number;
}
