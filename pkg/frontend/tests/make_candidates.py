"""Build a small candidate-set directory for the frontend round-trip tests.

Usage: python3 make_candidates.py OUTDIR N_CANDIDATES
"""

import sys

import numpy as np

from iqaprobe.attack import AttackConfig, Candidate, CandidateSet


def main() -> None:
    outdir, n = sys.argv[1], int(sys.argv[2])
    rng = np.random.default_rng(42)
    x0 = np.round(rng.uniform(0.3, 0.7, (16, 16, 1)) * 255) / 255
    candidates = []
    for i in range(n):
        # alternate clearly-visible and invisible perturbations
        offset = (8.0 if i % 2 else 1.0) / 255.0
        img = np.clip(x0 + offset, 0, 1)
        candidates.append(
            Candidate(
                lam=float(i + 1),
                image=img,
                fidelity=offset,
                raw_quality=0.0,
                quality=5.0 + i * 0.5,
                quality_delta=i * 0.5,
                objective_trace=[],
                seed_index=i,
            )
        )
    cset = CandidateSet(
        initial=x0,
        config=AttackConfig(lambdas=[float(i + 1) for i in range(n)]),
        candidates=candidates,
        model_id="stub",
        measure_id="chebyshev",
        image_id="rt",
        initial_quality=5.0,
        target_quality=5.0,
    )
    cset.save(outdir)


if __name__ == "__main__":
    main()
