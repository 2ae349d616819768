"""Acceptance criteria at their stated tolerances.

Each criterion prints one PASS/FAIL line.  Subchecks that are attainable are
asserted directly; the three documented limitations have their own strict
xfail tests so that they stay visible and turn the suite red if they ever
start passing unnoticed.  ``ACCEPTANCE_SCALE=fast`` runs a reduced version.
"""

import os
import time

import pytest

from reflectch.acceptance import CHECKS, KNOWN_LIMITATIONS, SCALES, check_determinism, run_check

SCALE = SCALES[os.environ.get("ACCEPTANCE_SCALE", "full")]
SEED = 0
_cache = {}


def result(name):
    if name not in _cache:
        _cache[name] = run_check(name, SCALE, SEED)
    return _cache[name]


@pytest.mark.parametrize("name", list(CHECKS))
def test_criterion(name, capsys):
    res = result(name)
    with capsys.disabled():
        print("\n" + res.line())
    failed = [k for k, v in res.subchecks.items() if not v and k not in res.known]
    assert not failed, f"{name}: {failed}\n{res.payload}"


LIMITATION_OWNER = {
    "half_sigma_trend_consistent": "half-identities",
    "contact_rate_magnitude_decreasing": "eps-sweep",
    "limit_marginals_ks": "eps-sweep",
}


@pytest.mark.parametrize("subcheck", list(KNOWN_LIMITATIONS))
@pytest.mark.xfail(strict=True, reason="documented limitation, see README")
def test_known_limitation(subcheck):
    assert result(LIMITATION_OWNER[subcheck]).subchecks[subcheck]


def test_determinism_across_worker_counts(capsys):
    t0 = time.perf_counter()
    res = check_determinism()
    res.seconds = time.perf_counter() - t0
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.subchecks
