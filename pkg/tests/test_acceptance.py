"""The eight acceptance criteria at their stated tolerances.

The suite runs once per session (about three minutes); one PASS/FAIL line per
criterion is printed in the terminal summary under "acceptance criteria".
"""

import pytest
from conftest import ACCEPTANCE_LINES

from pgflow.acceptance import CRITERIA, run_acceptance


@pytest.fixture(scope="module")
def results(request):
    lines = request.config.stash[ACCEPTANCE_LINES]
    out = run_acceptance(echo=None)
    for r in out:
        lines.append(r.line())
        print(r.line())
    return {r.criterion.number: r for r in out}


@pytest.mark.parametrize("number", [c.number for c in CRITERIA], ids=[f"criterion_{c.number}" for c in CRITERIA])
def test_acceptance_criterion(results, number):
    res = results[number]
    detail = res.error or "\n".join(r.summary() for r in res.reports)
    assert res.passed, f"{res.line()}\n{detail}"
