"""HTTP front end for screening sessions.

Serves trials and candidate images over a small JSON API, records observer
responses, and reports verdicts plus the selected counterexample. All state
changes append to a line-per-event log; starting the app on an existing log
replays it, so a crashed service resumes exactly where it stopped.

Images are served as the exact PNG bytes the attack wrote; the service
never decodes or re-encodes a stimulus.
"""

from __future__ import annotations

import json
import threading
from dataclasses import asdict
from pathlib import Path

from fastapi import FastAPI, HTTPException, Response

from .attack import CandidateSet
from .study import (
    StudyError,
    StudySession,
    TrialResponse,
    create_session,
    select_counterexample,
    verdicts,
)

DISPLAY_MS = 1000
BLANK_MS = 500


class ServiceState:
    """Sessions plus their backing candidate-set directories, guarded by a
    single lock (responses are appended under it, reads take snapshots)."""

    def __init__(self, log_path):
        self.log_path = Path(log_path)
        self.lock = threading.Lock()
        self.sessions: dict[str, StudySession] = {}
        self.set_dirs: dict[str, Path] = {}  # set key -> directory
        self.session_sets: dict[str, str] = {}  # session id -> set key
        if self.log_path.exists():
            self._replay()

    def _append(self, event: dict) -> None:
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "a") as f:
            f.write(json.dumps(event, sort_keys=True) + "\n")
            f.flush()

    def _replay(self) -> None:
        for line in self.log_path.read_text().splitlines():
            if not line.strip():
                continue
            e = json.loads(line)
            if e["event"] == "create":
                self._create(e["path"], e["repetitions"], e["seed"], log=False)
            elif e["event"] == "response":
                self.sessions[e["session_id"]].record_response(
                    TrialResponse(
                        trial_id=e["trial_id"],
                        observer=e["observer"],
                        answer=e["answer"],
                        response_ms=e["response_ms"],
                    )
                )
            elif e["event"] == "close":
                self.sessions[e["session_id"]].close(force=e["force"])

    def _create(self, path: str, repetitions: int, seed: int, log: bool = True) -> str:
        cset = CandidateSet.load(path)
        session_id = f"s{len(self.sessions):04d}"
        set_key = f"cs{len(self.set_dirs):04d}"
        session = create_session(cset, repetitions, seed, session_id=session_id)
        self.sessions[session_id] = session
        self.set_dirs[set_key] = Path(path)
        self.session_sets[session_id] = set_key
        if log:
            self._append(
                {
                    "event": "create",
                    "path": str(path),
                    "repetitions": repetitions,
                    "seed": seed,
                    "session_id": session_id,
                }
            )
        return session_id

    def create(self, path: str, repetitions: int, seed: int) -> str:
        with self.lock:
            return self._create(path, repetitions, seed)

    def record(self, session_id: str, response: TrialResponse) -> None:
        with self.lock:
            self._session(session_id).record_response(response)
            self._append(
                {
                    "event": "response",
                    "session_id": session_id,
                    **asdict(response),
                }
            )

    def close(self, session_id: str, force: bool) -> None:
        with self.lock:
            self._session(session_id).close(force=force)
            self._append(
                {"event": "close", "session_id": session_id, "force": force}
            )

    def _session(self, session_id: str) -> StudySession:
        if session_id not in self.sessions:
            raise StudyError(f"unknown session {session_id!r}")
        return self.sessions[session_id]

    def session(self, session_id: str) -> StudySession:
        with self.lock:
            return self._session(session_id)


def create_app(log_path) -> FastAPI:
    app = FastAPI(title="iqaprobe screening service")
    state = ServiceState(log_path)
    app.state.service = state

    def http_guard(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except StudyError as exc:
            status = 404 if "unknown" in str(exc) else 409
            raise HTTPException(status_code=status, detail=str(exc))
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.post("/sessions")
    def post_session(body: dict):
        for key in ("candidate_set", "repetitions", "seed"):
            if key not in body:
                raise HTTPException(status_code=422, detail=f"missing {key!r}")
        sid = http_guard(
            state.create,
            str(body["candidate_set"]),
            int(body["repetitions"]),
            int(body["seed"]),
        )
        return {"session_id": sid}

    @app.get("/sessions/{session_id}/next-trial")
    def next_trial(session_id: str, observer: str):
        session = http_guard(state.session, session_id)
        trial = session.next_trial(observer)
        if trial is None:
            return {"done": True}
        set_key = state.session_sets[session_id]
        cand = f"cand_{trial.candidate_index:03d}.png"
        first, second = ("initial.png", cand)
        if trial.perturbed_first:
            first, second = second, first
        return {
            "done": False,
            "trial_id": trial.trial_id,
            "image_a": f"/images/{set_key}/{first}",
            "image_b": f"/images/{set_key}/{second}",
            "display_ms": DISPLAY_MS,
            "blank_ms": BLANK_MS,
        }

    @app.get("/images/{set_key}/{name}")
    def image(set_key: str, name: str):
        if set_key not in state.set_dirs:
            raise HTTPException(status_code=404, detail=f"unknown set {set_key!r}")
        if "/" in name or name == ".." or not name.endswith(".png"):
            raise HTTPException(status_code=404, detail="no such image")
        path = state.set_dirs[set_key] / name
        if not path.exists():
            raise HTTPException(status_code=404, detail="no such image")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.post("/sessions/{session_id}/responses")
    def post_response(session_id: str, body: dict):
        try:
            response = TrialResponse(
                trial_id=str(body["trial_id"]),
                observer=str(body["observer"]),
                answer=str(body["answer"]),
                response_ms=float(body.get("response_ms", 0.0)),
            )
        except (KeyError, StudyError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        http_guard(state.record, session_id, response)
        return {"recorded": True}

    @app.post("/sessions/{session_id}/close")
    def post_close(session_id: str, force: bool = False):
        http_guard(state.close, session_id, force)
        return {"closed": True}

    @app.get("/sessions/{session_id}/verdicts")
    def get_verdicts(session_id: str):
        session = http_guard(state.session, session_id)
        vs = http_guard(verdicts, session)
        selected = select_counterexample(session, vs)
        sel = None
        if selected is not None:
            cands = session.candidate_set.candidates
            idx = next(i for i, c in enumerate(cands) if c is selected)
            sel = {
                "candidate_index": idx,
                "file": f"cand_{idx:03d}.png",
                "lambda": selected.lam,
                "quality_delta": selected.quality_delta,
                "fidelity": selected.fidelity,
            }
        return {
            "verdicts": [asdict(v) for v in vs],
            "selected": sel,
            "force_closed": session.force_closed,
        }

    return app
