"""Acceptance criteria, one claim each, at their stated tolerances.

Each test prints a single ``PASS``/``FAIL`` line.  Criterion 7 asks for a
zero closed-form gap together with a direct gap below 1e-8 for a quadratic
potential; the direct gap is of order eps there, so that criterion fails.
"""

import pytest

from orbitlab.harness import ClaimContext, run_claim

CRITERIA = [
    (1, "circle-exact-radius"),
    (2, "pseudo-critical-residual-slope"),
    (3, "corrected-orbit-slope"),
    (4, "adiabatic-limit-rate"),
    (5, "periodic-estimates"),
    (6, "normal-coordinate-bound"),
    (7, "reduced-gap-bound"),
    (8, "reduced-minima"),
    (9, "attractive-grid"),
    (10, "structural-invariants"),
]


@pytest.fixture(scope="module")
def ctx():
    return ClaimContext(N=256, seed=0)


@pytest.mark.parametrize("number,claim_id", CRITERIA, ids=[c for _, c in CRITERIA])
def test_criterion(number, claim_id, ctx, capsys):
    report = run_claim(claim_id, ctx)
    verdict = "PASS" if report.passed else "FAIL"
    with capsys.disabled():
        print(f"\n{verdict} criterion {number:2d} {claim_id}: measured={report.measured:.6g} "
              f"tolerance={report.tolerance} status={report.status} "
              f"runtime={report.runtime:.1f}s")
    assert report.passed, report.details
