import hypothesis
import numpy as np
import pytest


hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("default")

_ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: call with (passed, detail)."""

    def record(passed: bool, detail: str = ""):
        _ACCEPTANCE.append((request.node.name, "PASS" if passed else "FAIL", detail))
        return passed

    def skip(detail: str):
        _ACCEPTANCE.append((request.node.name, "SKIP", detail))
        pytest.skip(detail)

    record.skip = skip
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{status}  {name}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
