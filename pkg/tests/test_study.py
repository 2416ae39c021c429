import math

import numpy as np
import pytest

from iqaprobe import attack as atk
from iqaprobe import study
from iqaprobe.fidelity import get_measure


def make_candidate(lam, image, fidelity, delta):
    return atk.Candidate(
        lam=lam,
        image=image,
        fidelity=fidelity,
        raw_quality=0.0,
        quality=5.0 + delta,
        quality_delta=delta,
        objective_trace=[],
        seed_index=0,
    )


def make_set(rng, n=4, deltas=None, fidelities=None, offsets=None):
    x0 = np.round(rng.uniform(0.3, 0.7, (12, 12, 1)) * 255) / 255
    deltas = deltas if deltas is not None else [0.5 * (i + 1) for i in range(n)]
    fidelities = fidelities if fidelities is not None else [0.01] * n
    offsets = offsets if offsets is not None else [2.0 / 255.0] * n
    cands = []
    for i in range(n):
        img = np.clip(x0 + offsets[i], 0, 1)
        cands.append(make_candidate(float(i + 1), img, fidelities[i], deltas[i]))
    cfg = atk.AttackConfig(lambdas=[float(i + 1) for i in range(n)], seed=1)
    return atk.CandidateSet(
        initial=x0,
        config=cfg,
        candidates=cands,
        model_id="stub",
        measure_id="chebyshev",
        initial_quality=5.0,
        target_quality=5.0,
    )


def answer_all(session, answers_by_candidate, observer="o1"):
    for t in session.plan:
        session.record_response(
            study.TrialResponse(
                trial_id=t.trial_id,
                observer=observer,
                answer=answers_by_candidate[t.candidate_index],
                response_ms=400.0,
            )
        )


class TestCreateSession:
    def test_plan_covers_candidates_times_repetitions(self, rng):
        cset = make_set(rng, n=5)
        s = study.create_session(cset, repetitions=3, seed=9)
        assert len(s.plan) == 15
        counts = {}
        for t in s.plan:
            counts[t.candidate_index] = counts.get(t.candidate_index, 0) + 1
        assert counts == {i: 3 for i in range(5)}
        assert len({t.trial_id for t in s.plan}) == 15

    def test_single_repetition_is_permutation(self, rng):
        cset = make_set(rng, n=6)
        s = study.create_session(cset, repetitions=1, seed=2)
        assert sorted(t.candidate_index for t in s.plan) == list(range(6))

    def test_same_seed_identical_plan(self, rng):
        cset = make_set(rng)
        a = study.create_session(cset, 3, seed=5).plan
        b = study.create_session(cset, 3, seed=5).plan
        assert a == b

    def test_different_seed_changes_plan(self, rng):
        cset = make_set(rng, n=8)
        a = study.create_session(cset, 2, seed=5).plan
        b = study.create_session(cset, 2, seed=6).plan
        assert a != b

    def test_empty_set_rejected(self, rng):
        cset = make_set(rng)
        cset.candidates = []
        with pytest.raises(study.StudyError, match="empty"):
            study.create_session(cset, 1, seed=0)

    def test_zero_repetitions_rejected(self, rng):
        with pytest.raises(study.StudyError, match="repetitions"):
            study.create_session(make_set(rng), 0, seed=0)

    def test_plan_positions_uniform_chi2(self, rng):
        # candidate 0's slot over many seeds should be uniform over positions
        cset = make_set(rng, n=4)
        n_seeds = 1000
        positions = np.zeros(4)
        for seed in range(n_seeds):
            s = study.create_session(cset, 1, seed=seed)
            for pos, t in enumerate(s.plan):
                if t.candidate_index == 0:
                    positions[pos] += 1
        expected = n_seeds / 4
        chi2 = float(((positions - expected) ** 2 / expected).sum())
        assert chi2 < 16.27  # 99.9th percentile of chi2 with 3 dof

    def test_presentation_order_roughly_balanced(self, rng):
        cset = make_set(rng, n=4)
        firsts = sum(
            t.perturbed_first
            for seed in range(200)
            for t in study.create_session(cset, 1, seed=seed).plan
        )
        assert 300 < firsts < 500  # 800 coins, 5 sigma around 400


class TestResponses:
    def test_first_response_accepted(self, rng):
        s = study.create_session(make_set(rng), 1, seed=0)
        t = s.plan[0]
        s.record_response(
            study.TrialResponse(t.trial_id, "o1", "identical", 300.0)
        )
        assert len(s.responses) == 1

    def test_duplicate_rejected(self, rng):
        s = study.create_session(make_set(rng), 1, seed=0)
        t = s.plan[0]
        s.record_response(study.TrialResponse(t.trial_id, "o1", "identical", 1.0))
        with pytest.raises(study.StudyError, match="duplicate"):
            s.record_response(
                study.TrialResponse(t.trial_id, "o1", "different", 1.0)
            )

    def test_three_observers_one_trial(self, rng):
        s = study.create_session(make_set(rng), 1, seed=0)
        t = s.plan[0]
        for obs in ("a", "b", "c"):
            s.record_response(study.TrialResponse(t.trial_id, obs, "identical", 1.0))
        assert len(s.responses_for(t.trial_id)) == 3

    def test_unknown_trial_rejected(self, rng):
        s = study.create_session(make_set(rng), 1, seed=0)
        with pytest.raises(study.StudyError, match="unknown"):
            s.record_response(study.TrialResponse("nope", "o1", "identical", 1.0))

    def test_closed_session_immutable(self, rng):
        s = study.create_session(make_set(rng), 1, seed=0)
        answer_all(s, {i: "identical" for i in range(4)})
        s.close()
        with pytest.raises(study.StudyError, match="closed"):
            s.record_response(
                study.TrialResponse(s.plan[0].trial_id, "o2", "identical", 1.0)
            )

    def test_bad_answer_rejected(self):
        with pytest.raises(study.StudyError, match="answer"):
            study.TrialResponse("t0000", "o1", "maybe", 1.0)

    def test_next_trial_walks_plan(self, rng):
        s = study.create_session(make_set(rng), 2, seed=0)
        seen = []
        while (t := s.next_trial("o1")) is not None:
            seen.append(t.trial_id)
            s.record_response(study.TrialResponse(t.trial_id, "o1", "identical", 1.0))
        assert seen == [t.trial_id for t in s.plan]


class TestVerdicts:
    def test_12_of_15_below_jnd(self, rng):
        cset = make_set(rng, n=1)
        s = study.create_session(cset, 15, seed=0)
        answers = ["identical"] * 12 + ["different"] * 3
        for t, a in zip(s.plan, answers):
            s.record_response(study.TrialResponse(t.trial_id, "o1", a, 1.0))
        (v,) = study.verdicts(s)
        assert v.identical_fraction == pytest.approx(0.8)
        assert v.below_jnd

    def test_11_of_15_not_below(self, rng):
        cset = make_set(rng, n=1)
        s = study.create_session(cset, 15, seed=0)
        answers = ["identical"] * 11 + ["different"] * 4
        for t, a in zip(s.plan, answers):
            s.record_response(study.TrialResponse(t.trial_id, "o1", a, 1.0))
        (v,) = study.verdicts(s)
        assert v.identical_fraction == pytest.approx(11 / 15)
        assert not v.below_jnd

    def test_exact_boundary_inclusive(self, rng):
        cset = make_set(rng, n=1)
        s = study.create_session(cset, 4, seed=0)
        answers = ["identical"] * 3 + ["different"]
        for t, a in zip(s.plan, answers):
            s.record_response(study.TrialResponse(t.trial_id, "o1", a, 1.0))
        (v,) = study.verdicts(s)
        assert v.identical_fraction == pytest.approx(0.75)
        assert v.below_jnd

    def test_incomplete_open_session_rejected(self, rng):
        s = study.create_session(make_set(rng), 2, seed=0)
        with pytest.raises(study.StudyError, match="unanswered"):
            study.verdicts(s)

    def test_force_close_partial_yields_only_complete_candidates(self, rng):
        cset = make_set(rng, n=2)
        s = study.create_session(cset, 2, seed=0)
        # answer only candidate 0's trials
        for t in s.plan:
            if t.candidate_index == 0:
                s.record_response(
                    study.TrialResponse(t.trial_id, "o1", "identical", 1.0)
                )
        s.close(force=True)
        assert s.force_closed
        vs = study.verdicts(s)
        assert [v.candidate_index for v in vs] == [0]

    def test_adding_identical_never_flips_true_to_false(self, rng):
        # pooled fraction with one more "identical" can only rise
        for n_id in range(16):
            for n_total in range(max(n_id, 1), 16):
                before = n_id / n_total >= 0.75
                after = (n_id + 1) / (n_total + 1) >= 0.75
                assert not (before and not after)

    def test_verdicts_depend_only_on_response_multiset(self, rng):
        cset = make_set(rng, n=3)
        a = study.create_session(cset, 4, seed=1)
        b = study.create_session(cset, 4, seed=99)  # different plan order
        answers = {0: "identical", 1: "different", 2: "identical"}
        answer_all(a, answers)
        answer_all(b, answers)
        va = {v.candidate_index: v for v in study.verdicts(a)}
        vb = {v.candidate_index: v for v in study.verdicts(b)}
        assert set(va) == set(vb)
        for i in va:
            assert va[i].identical_fraction == vb[i].identical_fraction
            assert va[i].below_jnd == vb[i].below_jnd


class TestSelection:
    def test_single_passing_candidate_selected(self, rng):
        cset = make_set(rng, n=3, deltas=[1.0, 2.0, 3.0])
        s = study.create_session(cset, 1, seed=0)
        answers = {0: "different", 1: "identical", 2: "different"}
        answer_all(s, answers)
        sel = study.select_counterexample(s)
        assert sel is cset.candidates[1]

    def test_none_when_nothing_passes(self, rng):
        cset = make_set(rng)
        s = study.create_session(cset, 1, seed=0)
        answer_all(s, {i: "different" for i in range(4)})
        assert study.select_counterexample(s) is None

    def test_argmax_abs_delta(self, rng):
        cset = make_set(rng, n=2, deltas=[2.1, -3.4])
        s = study.create_session(cset, 1, seed=0)
        answer_all(s, {0: "identical", 1: "identical"})
        sel = study.select_counterexample(s)
        assert sel is cset.candidates[1]

    def test_tie_broken_by_smaller_fidelity_then_lambda(self, rng):
        cset = make_set(rng, n=3, deltas=[2.0, 2.0, 2.0], fidelities=[0.03, 0.01, 0.01])
        s = study.create_session(cset, 1, seed=0)
        answer_all(s, {i: "identical" for i in range(3)})
        sel = study.select_counterexample(s)
        # candidates 1 and 2 tie on delta and fidelity; 1 has the smaller lambda
        assert sel is cset.candidates[1]

    def test_selection_invariant_to_plan_permutation(self, rng):
        cset = make_set(rng, n=4, deltas=[1.0, 4.0, 2.0, 3.0])
        answers = {0: "identical", 1: "identical", 2: "different", 3: "identical"}
        picks = []
        for seed in (1, 2, 3):
            s = study.create_session(cset, 2, seed=seed)
            answer_all(s, answers)
            picks.append(study.select_counterexample(s))
        assert all(p is picks[0] for p in picks)


class TestSimulatedObserver:
    def test_tau_above_all_distances_passes_everything(self, rng):
        cset = make_set(rng, offsets=[1.0 / 255.0] * 4)
        measure = get_measure("chebyshev")
        s = study.create_session(cset, 5, seed=0)
        study.simulate_observer(s, measure, tau=0.5, eta=0.0)
        assert all(v.below_jnd for v in study.verdicts(s))

    def test_tau_below_all_distances_fails_everything(self, rng):
        cset = make_set(rng, offsets=[8.0 / 255.0] * 4)
        measure = get_measure("chebyshev")
        s = study.create_session(cset, 5, seed=0)
        study.simulate_observer(s, measure, tau=1.0 / 255.0, eta=0.0)
        assert not any(v.below_jnd for v in study.verdicts(s))

    def test_lapse_rate_matches_binomial_flip_probability(self, rng):
        # one invisible candidate, 15 repetitions, eta = 0.1: the verdict
        # flips when > 25% of answers lapse to "different"
        from math import comb

        eta, reps = 0.1, 15
        p_flip = sum(
            comb(reps, k) * eta**k * (1 - eta) ** (reps - k)
            for k in range(4, reps + 1)
        )
        cset = make_set(rng, n=1, offsets=[1.0 / 255.0])
        measure = get_measure("chebyshev")
        flips = 0
        n_sessions = 1000
        for seed in range(n_sessions):
            s = study.create_session(cset, reps, seed=0)
            study.simulate_observer(s, measure, tau=0.5, eta=eta, seed=seed)
            (v,) = study.verdicts(s)
            flips += not v.below_jnd
        sigma = math.sqrt(n_sessions * p_flip * (1 - p_flip))
        assert abs(flips - n_sessions * p_flip) <= 3 * sigma

    def test_deterministic_given_seed(self, rng):
        cset = make_set(rng)
        measure = get_measure("chebyshev")
        results = []
        for _ in range(2):
            s = study.create_session(cset, 3, seed=4)
            study.simulate_observer(s, measure, tau=0.01, eta=0.3, seed=7)
            results.append([r.answer for r in s.responses])
        assert results[0] == results[1]

    def test_bad_lapse_rate_rejected(self, rng):
        s = study.create_session(make_set(rng), 1, seed=0)
        with pytest.raises(study.StudyError, match="lapse"):
            study.simulate_observer(s, get_measure("chebyshev"), tau=0.1, eta=1.0)
