"""The eight acceptance criteria, each at its stated tolerance.

The whole suite runs once per session (about two minutes); every criterion
prints one PASS/FAIL line, collected again in the terminal summary.
Run standalone with ``python3 tests/test_acceptance.py``.
"""

import sys

import pytest

from spofolio.acceptance import run_all

CRITERIA = range(1, 9)


@pytest.fixture(scope="module")
def results():
    from conftest import ACCEPTANCE_LINES

    def report(line):
        ACCEPTANCE_LINES.append(line)
        print(line, flush=True)

    return {r.number: r for r in run_all(report=report)}


@pytest.mark.slow
@pytest.mark.parametrize("number", CRITERIA)
def test_criterion(results, number):
    res = results[number]
    print(res.line())
    assert res.passed, res.line()


if __name__ == "__main__":
    outcome = run_all()
    sys.exit(0 if all(r.passed for r in outcome) else 1)
