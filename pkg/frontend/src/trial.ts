/** One yes-no trial: fixation, image A, gray blank, image B, response.
 * Phases advance strictly in order on an absolute-deadline clock, both
 * stimuli are fully loaded before anything is shown, and every phase's
 * actual duration is logged for audit. */

import type { Answer, TrialDescriptor } from "./api";
import { Scheduler, sleepUntil } from "./timing";

export const FIXATION_MS = 500;

export type Phase =
  | "idle"
  | "fixation"
  | "image-a"
  | "blank"
  | "image-b"
  | "response"
  | "done";

export interface PhaseTiming {
  phase: Phase;
  plannedMs: number;
  actualMs: number;
}

export interface TrialResult {
  skipped: boolean;
  skipReason?: string;
  answer?: Answer;
  responseMs?: number;
  timingLog: PhaseTiming[];
  ignoredInputs: number;
  imageChecksums?: { a: string; b: string };
}

/** What the trial needs from the page; production wires this to the DOM,
 * tests substitute a recorder. */
export interface Display {
  showFixation(): void;
  showImage(bytes: Uint8Array): void;
  showBlank(): void;
  showResponsePrompt(): void;
  clear(): void;
}

export const KEY_BINDINGS: Record<string, Answer> = {
  "1": "identical",
  i: "identical",
  "2": "different",
  d: "different",
};

export class TrialRunner {
  phase: Phase = "idle";
  private ignored = 0;
  private answerResolve: ((a: Answer) => void) | null = null;

  constructor(
    private readonly descriptor: TrialDescriptor,
    private readonly loadImage: (url: string) => Promise<Uint8Array>,
    private readonly display: Display,
    private readonly sched: Scheduler,
  ) {}

  /** Answer input; ignored (but counted) outside the response phase. */
  submit(answer: Answer): void {
    if (this.phase !== "response" || this.answerResolve === null) {
      this.ignored += 1;
      return;
    }
    const resolve = this.answerResolve;
    this.answerResolve = null;
    resolve(answer);
  }

  /** Keyboard input routed through the same gating as submit(). */
  handleKey(key: string): void {
    const answer = KEY_BINDINGS[key.toLowerCase()];
    if (answer !== undefined) {
      this.submit(answer);
    }
  }

  async run(): Promise<TrialResult> {
    const log: PhaseTiming[] = [];
    let imageA: Uint8Array;
    let imageB: Uint8Array;
    try {
      [imageA, imageB] = await Promise.all([
        this.loadImage(this.descriptor.image_a),
        this.loadImage(this.descriptor.image_b),
      ]);
    } catch (err) {
      this.phase = "done";
      return {
        skipped: true,
        skipReason: `preload failed: ${String(err)}`,
        timingLog: log,
        ignoredInputs: this.ignored,
      };
    }

    const timed = async (phase: Phase, plannedMs: number, effect: () => void) => {
      this.phase = phase;
      const start = this.sched.now();
      effect();
      await sleepUntil(this.sched, start + plannedMs);
      log.push({ phase, plannedMs, actualMs: this.sched.now() - start });
    };

    await timed("fixation", FIXATION_MS, () => this.display.showFixation());
    await timed("image-a", this.descriptor.display_ms, () =>
      this.display.showImage(imageA),
    );
    await timed("blank", this.descriptor.blank_ms, () => this.display.showBlank());
    await timed("image-b", this.descriptor.display_ms, () =>
      this.display.showImage(imageB),
    );

    this.phase = "response";
    const responseStart = this.sched.now();
    this.display.showResponsePrompt();
    const answer = await new Promise<Answer>((resolve) => {
      this.answerResolve = resolve;
    });
    const responseMs = this.sched.now() - responseStart;
    this.phase = "done";
    this.display.clear();
    return {
      skipped: false,
      answer,
      responseMs,
      timingLog: log,
      ignoredInputs: this.ignored,
    };
  }
}
