import sys

import pytest

from diffincl import kernels


@pytest.fixture(params=kernels.available())
def backend(request):
    prev = kernels.use(request.param)
    yield request.param
    kernels.use(prev)


def pytest_terminal_summary(terminalreporter):
    # one line per acceptance criterion, recorded by test_acceptance.verdict
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
