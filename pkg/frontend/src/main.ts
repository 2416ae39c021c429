/** Browser wiring: DOM display, keyboard capture, session bootstrap from
 * query parameters (?session=...&observer=...). */

import { StudyClient } from "./api";
import { runSession } from "./session";
import { Display, TrialRunner } from "./trial";
import { realScheduler } from "./timing";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

/** Shows each stimulus as the exact served PNG bytes via an object URL at
 * native 1:1 pixel size; no canvas, no resampling, no re-encoding. */
class DomDisplay implements Display {
  private stage = el<HTMLDivElement>("stage");
  private prompt = el<HTMLDivElement>("prompt");
  private objectUrl: string | null = null;

  private reset(): void {
    if (this.objectUrl) {
      URL.revokeObjectURL(this.objectUrl);
      this.objectUrl = null;
    }
    this.stage.replaceChildren();
    this.prompt.hidden = true;
  }

  showFixation(): void {
    this.reset();
    const cross = document.createElement("div");
    cross.className = "fixation";
    cross.textContent = "+";
    this.stage.appendChild(cross);
  }

  showImage(bytes: Uint8Array): void {
    this.reset();
    const copy = new Uint8Array(bytes) as Uint8Array<ArrayBuffer>;
    this.objectUrl = URL.createObjectURL(new Blob([copy], { type: "image/png" }));
    const img = document.createElement("img");
    img.className = "stimulus";
    img.onload = () => {
      img.width = img.naturalWidth;
      img.height = img.naturalHeight;
    };
    img.src = this.objectUrl;
    this.stage.appendChild(img);
  }

  showBlank(): void {
    this.reset();
    this.stage.className = "gray";
  }

  showResponsePrompt(): void {
    this.reset();
    this.stage.className = "";
    this.prompt.hidden = false;
  }

  clear(): void {
    this.reset();
  }
}

async function start(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const sessionId = params.get("session");
  const observer = params.get("observer");
  if (!sessionId || !observer) {
    el<HTMLDivElement>("status").textContent =
      "missing ?session= or ?observer= query parameter";
    return;
  }
  const client = new StudyClient("");
  const status = el<HTMLDivElement>("status");
  let active: TrialRunner | null = null;
  window.addEventListener("keydown", (e) => active?.handleKey(e.key));
  el<HTMLButtonElement>("btn-identical").onclick = () => active?.submit("identical");
  el<HTMLButtonElement>("btn-different").onclick = () => active?.submit("different");

  const summary = await runSession(client, sessionId, observer, {
    display: new DomDisplay(),
    scheduler: realScheduler,
    onTrialStart: (runner) => {
      active = runner;
    },
    onProgress: (n) => {
      status.textContent = `trials completed: ${n}`;
    },
    onBreak: (n) =>
      new Promise((resolve) => {
        status.textContent = `${n} trials done - take a short break`;
        const btn = el<HTMLButtonElement>("btn-resume");
        btn.hidden = false;
        btn.onclick = () => {
          btn.hidden = true;
          resolve();
        };
      }),
  });
  active = null;
  status.textContent = `session finished: ${summary.completed} trials answered`;
}

start().catch((err) => {
  el<HTMLDivElement>("status").textContent = `error: ${String(err)}`;
});
