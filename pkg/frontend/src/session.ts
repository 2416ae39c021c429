/** Session loop: pull trials from the service until exhausted, run each
 * one, post the answer, and prompt for a break at a fixed cadence. The
 * descriptor carries only trial id and image URLs, so nothing that could
 * bias a judgment (multiplier, distance, model) ever reaches the page. */

import type { StudyApi, TrialDescriptor } from "./api";
import { Display, TrialResult, TrialRunner } from "./trial";
import { Scheduler } from "./timing";

export interface SessionDeps {
  display: Display;
  scheduler: Scheduler;
  /** Called with the live runner so the page can wire key events to it. */
  onTrialStart: (runner: TrialRunner, descriptor: TrialDescriptor) => void;
  /** Awaited every `breakEvery` completed trials. */
  onBreak?: (completed: number) => Promise<void>;
  onProgress?: (completed: number) => void;
  breakEvery?: number;
}

export interface SessionSummary {
  completed: number;
  skipped: { trialId: string; reason: string }[];
}

const DEFAULT_BREAK_EVERY = 30;

export async function runSession(
  client: StudyApi,
  sessionId: string,
  observer: string,
  deps: SessionDeps,
): Promise<SessionSummary> {
  const breakEvery = deps.breakEvery ?? DEFAULT_BREAK_EVERY;
  const skipped: SessionSummary["skipped"] = [];
  const failedOnce = new Set<string>();
  let completed = 0;

  for (;;) {
    const next = await client.nextTrial(sessionId, observer);
    if (next.done) {
      break;
    }
    const runner = new TrialRunner(
      next,
      (url) => client.fetchImage(url),
      deps.display,
      deps.scheduler,
    );
    deps.onTrialStart(runner, next);
    const result: TrialResult = await runner.run();
    if (result.skipped) {
      skipped.push({ trialId: next.trial_id, reason: result.skipReason ?? "" });
      // the service re-serves unanswered trials; one retry, then give up
      // so a dead image URL cannot spin forever
      if (failedOnce.has(next.trial_id)) {
        break;
      }
      failedOnce.add(next.trial_id);
      continue;
    }
    await client.postResponse(
      sessionId,
      next.trial_id,
      observer,
      result.answer!,
      result.responseMs!,
    );
    completed += 1;
    deps.onProgress?.(completed);
    if (deps.onBreak && completed % breakEvery === 0) {
      await deps.onBreak(completed);
    }
  }
  return { completed, skipped };
}
