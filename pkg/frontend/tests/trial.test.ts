import { describe, expect, it } from "vitest";

import { TrialRunner, FIXATION_MS, KEY_BINDINGS } from "../src/trial";
import { fnv1a } from "../src/checksum";
import {
  InstantScheduler,
  RecordingDisplay,
  bytesFor,
  descriptor,
  instantLoader,
} from "./helpers";

function makeRunner(display = new RecordingDisplay()) {
  const runner = new TrialRunner(
    descriptor(),
    instantLoader,
    display,
    new InstantScheduler(),
  );
  return { runner, display };
}

describe("trial phases", () => {
  it("advances fixation, image-A, blank, image-B, response in order", async () => {
    const { runner, display } = makeRunner();
    const done = runner.run();
    // answer as soon as the prompt appears
    const poll = setInterval(() => {
      if (runner.phase === "response") {
        clearInterval(poll);
        runner.submit("identical");
      }
    }, 0);
    const result = await done;
    expect(result.skipped).toBe(false);
    expect(display.events).toEqual([
      "fixation",
      "image",
      "blank",
      "image",
      "prompt",
      "clear",
    ]);
    expect(result.timingLog.map((t) => t.phase)).toEqual([
      "fixation",
      "image-a",
      "blank",
      "image-b",
    ]);
  });

  it("logs planned durations on a drift-free clock", async () => {
    const { runner } = makeRunner();
    const done = runner.run();
    const poll = setInterval(() => {
      if (runner.phase === "response") {
        clearInterval(poll);
        runner.submit("different");
      }
    }, 0);
    const result = await done;
    const planned = [FIXATION_MS, 1000, 500, 1000];
    result.timingLog.forEach((t, i) => {
      expect(t.plannedMs).toBe(planned[i]);
      expect(t.actualMs).toBe(planned[i]);
    });
  });

  it("ignores and counts answers before the response phase", async () => {
    const { runner } = makeRunner();
    const done = runner.run();
    runner.submit("identical"); // during preload
    const poll = setInterval(() => {
      if (runner.phase === "image-a" || runner.phase === "blank") {
        runner.submit("different"); // mid-presentation, must be ignored
      }
      if (runner.phase === "response") {
        clearInterval(poll);
        runner.submit("identical");
      }
    }, 0);
    const result = await done;
    expect(result.answer).toBe("identical");
    expect(result.ignoredInputs).toBeGreaterThanOrEqual(2);
  });

  it("maps keyboard shortcuts to both answers", async () => {
    expect(KEY_BINDINGS["1"]).toBe("identical");
    expect(KEY_BINDINGS["i"]).toBe("identical");
    expect(KEY_BINDINGS["2"]).toBe("different");
    expect(KEY_BINDINGS["d"]).toBe("different");
    const { runner } = makeRunner();
    const done = runner.run();
    const poll = setInterval(() => {
      if (runner.phase === "response") {
        clearInterval(poll);
        runner.handleKey("x"); // unbound, ignored
        runner.handleKey("D");
      }
    }, 0);
    const result = await done;
    expect(result.answer).toBe("different");
  });

  it("skips the trial when preload fails, showing nothing", async () => {
    const display = new RecordingDisplay();
    const runner = new TrialRunner(
      descriptor(),
      (url) =>
        url.includes("cand")
          ? Promise.reject(new Error("404"))
          : Promise.resolve(bytesFor(url)),
      display,
      new InstantScheduler(),
    );
    const result = await runner.run();
    expect(result.skipped).toBe(true);
    expect(result.skipReason).toContain("404");
    expect(display.events).toEqual([]);
  });

  it("hands the loaded bytes to the display unmodified", async () => {
    const { runner, display } = makeRunner();
    const done = runner.run();
    const poll = setInterval(() => {
      if (runner.phase === "response") {
        clearInterval(poll);
        runner.submit("identical");
      }
    }, 0);
    await done;
    const d = descriptor();
    expect(fnv1a(display.shownBytes[0])).toBe(fnv1a(bytesFor(d.image_a)));
    expect(fnv1a(display.shownBytes[1])).toBe(fnv1a(bytesFor(d.image_b)));
  });
});

describe("checksum", () => {
  it("is stable and collision-sensitive to single-byte changes", () => {
    const a = new Uint8Array([1, 2, 3, 4]);
    const b = new Uint8Array([1, 2, 3, 5]);
    expect(fnv1a(a)).toBe(fnv1a(new Uint8Array([1, 2, 3, 4])));
    expect(fnv1a(a)).not.toBe(fnv1a(b));
    expect(fnv1a(new Uint8Array([]))).toBe("811c9dc5");
  });
});
