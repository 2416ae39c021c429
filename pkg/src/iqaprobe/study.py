"""Yes-no screening sessions over a candidate set: seeded trial plans,
pooled response bookkeeping, the 75% below-threshold verdict rule, and the
final counterexample selection (largest prediction change among candidates
the observers could not tell apart from the original).

A simulated observer is provided so the whole pipeline runs without humans:
it answers "different" exactly when a designated fidelity distance exceeds
a visibility threshold, with an optional seeded lapse rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attack import Candidate, CandidateSet
from .fidelity import FidelityMeasure

JND_THRESHOLD = 0.75  # inclusive: exactly 75% identical still passes
ANSWERS = ("identical", "different")


class StudyError(ValueError):
    pass


@dataclass(frozen=True)
class Trial:
    trial_id: str
    candidate_index: int
    repetition: int
    perturbed_first: bool


@dataclass(frozen=True)
class TrialResponse:
    trial_id: str
    observer: str
    answer: str
    response_ms: float

    def __post_init__(self):
        if self.answer not in ANSWERS:
            raise StudyError(f"answer must be one of {ANSWERS}, got {self.answer!r}")
        if self.response_ms < 0:
            raise StudyError("response time must be non-negative")


@dataclass(frozen=True)
class JNDVerdict:
    candidate_index: int
    n_responses: int
    identical_fraction: float
    below_jnd: bool


@dataclass
class StudySession:
    session_id: str
    candidate_set: CandidateSet
    repetitions: int
    seed: int
    plan: list[Trial] = field(default_factory=list)
    responses: list[TrialResponse] = field(default_factory=list)
    state: str = "open"
    force_closed: bool = False

    def trial(self, trial_id: str) -> Trial:
        for t in self.plan:
            if t.trial_id == trial_id:
                return t
        raise StudyError(f"unknown trial id {trial_id!r}")

    def responses_for(self, trial_id: str) -> list[TrialResponse]:
        return [r for r in self.responses if r.trial_id == trial_id]

    def next_trial(self, observer: str) -> Trial | None:
        """First planned trial this observer has not answered, unanswered
        trials first so a single observer can complete the session alone."""
        if self.state != "open":
            return None
        answered = {(r.trial_id, r.observer) for r in self.responses}
        any_response = {r.trial_id for r in self.responses}
        for t in self.plan:
            if t.trial_id not in any_response:
                return t
        for t in self.plan:
            if (t.trial_id, observer) not in answered:
                return t
        return None

    def record_response(self, response: TrialResponse) -> None:
        if self.state != "open":
            raise StudyError("session is closed")
        self.trial(response.trial_id)
        for r in self.responses:
            if r.trial_id == response.trial_id and r.observer == response.observer:
                raise StudyError(
                    f"duplicate response to {response.trial_id!r} "
                    f"by {response.observer!r}"
                )
        self.responses.append(response)

    def all_answered(self) -> bool:
        answered = {r.trial_id for r in self.responses}
        return all(t.trial_id in answered for t in self.plan)

    def close(self, force: bool = False) -> None:
        if self.state == "complete":
            return
        if not force and not self.all_answered():
            raise StudyError("unanswered trials remain; use force to close anyway")
        self.state = "complete"
        self.force_closed = not self.all_answered()


def create_session(
    candidate_set: CandidateSet,
    repetitions: int,
    seed: int,
    session_id: str = "session",
) -> StudySession:
    """Plan covers every candidate exactly `repetitions` times, shuffled by
    the seed; each trial's presentation order is an independent seeded coin."""
    if not candidate_set.candidates:
        raise StudyError("empty candidate set")
    if repetitions < 1:
        raise StudyError("repetitions must be >= 1")
    pairs = [
        (c, r)
        for c in range(len(candidate_set.candidates))
        for r in range(repetitions)
    ]
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    order = rng.permutation(len(pairs))
    coins = rng.random(len(pairs)) < 0.5
    plan = [
        Trial(
            trial_id=f"t{pos:04d}",
            candidate_index=pairs[i][0],
            repetition=pairs[i][1],
            perturbed_first=bool(coins[pos]),
        )
        for pos, i in enumerate(order)
    ]
    return StudySession(
        session_id=session_id,
        candidate_set=candidate_set,
        repetitions=repetitions,
        seed=seed,
        plan=plan,
    )


def verdicts(session: StudySession) -> list[JNDVerdict]:
    """Pooled per-candidate verdicts. A candidate gets a verdict only when
    all of its planned trials are answered; on a fully answered session that
    is every candidate."""
    if session.state == "open" and not session.all_answered():
        raise StudyError("session has unanswered trials")
    by_candidate: dict[int, list[str]] = {}
    complete: dict[int, bool] = {}
    for t in session.plan:
        rs = session.responses_for(t.trial_id)
        complete[t.candidate_index] = complete.get(t.candidate_index, True) and bool(rs)
        by_candidate.setdefault(t.candidate_index, [])
        by_candidate[t.candidate_index] += [r.answer for r in rs]
    out = []
    for idx in sorted(by_candidate):
        answers = by_candidate[idx]
        if not complete[idx] or not answers:
            continue
        frac = answers.count("identical") / len(answers)
        out.append(
            JNDVerdict(
                candidate_index=idx,
                n_responses=len(answers),
                identical_fraction=frac,
                below_jnd=frac >= JND_THRESHOLD,
            )
        )
    return out


def select_counterexample(
    session: StudySession, verdict_list: list[JNDVerdict] | None = None
) -> Candidate | None:
    """Among below-threshold candidates, the one with the largest absolute
    prediction change; ties broken by smaller fidelity distance, then by
    smaller multiplier. None when nothing passed the screening."""
    vs = verdicts(session) if verdict_list is None else verdict_list
    passing = [v.candidate_index for v in vs if v.below_jnd]
    if not passing:
        return None
    cands = session.candidate_set.candidates

    def key(i: int):
        c = cands[i]
        return (-c.abs_delta, c.fidelity, c.lam)

    return cands[min(passing, key=key)]


def simulate_observer(
    session: StudySession,
    measure: FidelityMeasure,
    tau: float,
    eta: float = 0.0,
    observer: str = "sim",
    seed: int = 0,
) -> None:
    """Answer every trial this observer has not yet answered with the
    deterministic visibility rule (distance above tau reads "different"),
    flipping each answer independently with probability eta."""
    if not 0.0 <= eta < 1.0:
        raise StudyError("lapse rate must be in [0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    x0 = session.candidate_set.initial
    visible = [
        measure.evaluate(c.image, x0) > tau
        for c in session.candidate_set.candidates
    ]
    answered = {(r.trial_id, r.observer) for r in session.responses}
    for t in session.plan:
        flip = rng.random() < eta
        if (t.trial_id, observer) in answered:
            continue
        ans = visible[t.candidate_index] != flip
        session.record_response(
            TrialResponse(
                trial_id=t.trial_id,
                observer=observer,
                answer="different" if ans else "identical",
                response_ms=500.0,
            )
        )
