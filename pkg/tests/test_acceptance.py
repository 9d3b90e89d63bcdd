"""Acceptance suite: criteria 1-10 at their stated tolerances.

The whole suite runs once per session; each criterion's pass/fail line is
written to the terminal and to stdout, then asserted individually.
"""

import pytest

from specfun.acceptance import CRITERIA, run_all

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def results(request):
    reporter = request.config.pluginmanager.getplugin("terminalreporter")

    def echo(line):
        print(line)
        if reporter is not None:
            reporter.write_line(line)

    return {r.number: r for r in run_all(echo=echo)}


@pytest.mark.parametrize("number", range(1, len(CRITERIA) + 1))
def test_criterion(results, number):
    r = results[number]
    assert r.passed, r.line()
