/** Typed client for the screening service HTTP API. */

export interface TrialDescriptor {
  done: false;
  trial_id: string;
  image_a: string;
  image_b: string;
  display_ms: number;
  blank_ms: number;
}

export interface SessionDone {
  done: true;
}

export type NextTrial = TrialDescriptor | SessionDone;

export interface Verdict {
  candidate_index: number;
  n_responses: number;
  identical_fraction: number;
  below_jnd: boolean;
}

export interface VerdictReport {
  verdicts: Verdict[];
  selected: {
    candidate_index: number;
    file: string;
    lambda: number;
    quality_delta: number;
    fidelity: number;
  } | null;
  force_closed: boolean;
}

export type Answer = "identical" | "different";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

/** The slice of the client the session loop needs; tests stub this. */
export interface StudyApi {
  nextTrial(sessionId: string, observer: string): Promise<NextTrial>;
  fetchImage(url: string): Promise<Uint8Array>;
  postResponse(
    sessionId: string,
    trialId: string,
    observer: string,
    answer: Answer,
    responseMs: number,
  ): Promise<void>;
}

export class StudyClient implements StudyApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const res = await this.fetchFn(this.baseUrl + path, init);
    if (!res.ok) {
      throw new ApiError(res.status, `${path}: HTTP ${res.status}`);
    }
    return res;
  }

  async createSession(
    candidateSet: string,
    repetitions: number,
    seed: number,
  ): Promise<string> {
    const res = await this.request("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        candidate_set: candidateSet,
        repetitions,
        seed,
      }),
    });
    const body = (await res.json()) as { session_id: string };
    return body.session_id;
  }

  async nextTrial(sessionId: string, observer: string): Promise<NextTrial> {
    const res = await this.request(
      `/sessions/${sessionId}/next-trial?observer=${encodeURIComponent(observer)}`,
    );
    return (await res.json()) as NextTrial;
  }

  /** Raw PNG bytes exactly as served; never decoded or re-encoded here. */
  async fetchImage(url: string): Promise<Uint8Array> {
    const res = await this.request(url);
    return new Uint8Array(await res.arrayBuffer());
  }

  async postResponse(
    sessionId: string,
    trialId: string,
    observer: string,
    answer: Answer,
    responseMs: number,
  ): Promise<void> {
    await this.request(`/sessions/${sessionId}/responses`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        trial_id: trialId,
        observer,
        answer,
        response_ms: responseMs,
      }),
    });
  }

  async closeSession(sessionId: string, force = false): Promise<void> {
    await this.request(`/sessions/${sessionId}/close?force=${force}`, {
      method: "POST",
    });
  }

  async verdicts(sessionId: string): Promise<VerdictReport> {
    const res = await this.request(`/sessions/${sessionId}/verdicts`);
    return (await res.json()) as VerdictReport;
  }
}
